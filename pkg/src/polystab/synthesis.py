"""Polynomial stabilizing-control synthesis.

Given x' = f(x, u), the goal is a polynomial feedback u(x) (optionally
with an actuator augmentation phi(u) added to the dynamics) whose closed
loop x' = f(x, u(x)) + phi(u(x)) certifies as stable over a requested
domain.  Degree budgets keep the problem finite: deg u never exceeds the
degree of f in x, and deg phi never exceeds the degree of f in (x, u)
jointly, which caps the closed-loop degree at deg_x f * (deg_x f + deg_u f).

The search is nested.  The outer layer runs multi-start Nelder-Mead over
the control (and augmentation) coefficients inside a [-10, 10] box; each
candidate closes the loop symbolically, factors the result, and asks the
stability module for its best sampled margin over the factorization
shares.  The outer objective is that margin.  Structured start points
(cancel the nonlinear terms reachable through an additive control, add
linear damping) make easy problems converge immediately; random starts
cover the rest.

For linear plants with a degree-1 control the Kalman rank condition is
checked first: when an unstable mode is uncontrollable the search cannot
succeed and a failure result is returned without burning the budget.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .factorization import build_family
from .poly import Polynomial, VectorField, format_polynomial
from .search import multistart_minimize, single_start_minimize
from .simulation import DivergenceError, integrate_exp, winding
from .stability import (
    Domain,
    StabilityCertificate,
    margin_of,
    sample_family,
    sample_stats,
    search_certificate,
)

__all__ = [
    "ControlLaw",
    "Augmentation",
    "DegreeRecord",
    "SynthesisResult",
    "close_loop",
    "kalman_rank",
    "synthesize",
    "make_center",
]

_COEFF_BOX = 10.0
_CENTER_RE = 1e-6
_CENTER_IM = 1e-6


@dataclass(frozen=True)
class ControlLaw:
    """r polynomial feedback components u_l(x) with u(0) = 0."""

    components: tuple[Polynomial, ...]
    degree_bound: int

    def __post_init__(self):
        for p in self.components:
            if p.constant_term() != 0.0:
                raise ValueError("controls must vanish at the origin")
            if p.degree() > self.degree_bound:
                raise ValueError(
                    f"control degree {p.degree()} exceeds the declared bound "
                    f"{self.degree_bound}"
                )

    @property
    def r(self) -> int:
        return len(self.components)

    def evaluate(self, x: Sequence[float]) -> np.ndarray:
        return np.array([p.evaluate(x) for p in self.components])

    def to_text(self, n: int) -> list[str]:
        names = [f"x{i + 1}" for i in range(n)]
        return [format_polynomial(p, names) for p in self.components]


@dataclass(frozen=True)
class Augmentation:
    """n actuator components phi_p(u) with phi(0) = 0."""

    components: tuple[Polynomial, ...]
    degree_bound: int

    def __post_init__(self):
        for p in self.components:
            if p.constant_term() != 0.0:
                raise ValueError("the augmentation must vanish at u = 0")
            if p.degree() > self.degree_bound:
                raise ValueError(
                    f"augmentation degree {p.degree()} exceeds the declared bound "
                    f"{self.degree_bound}"
                )

    def is_zero(self) -> bool:
        return all(p.is_zero() for p in self.components)

    def to_text(self, r: int) -> list[str]:
        names = [f"u{j + 1}" for j in range(r)]
        return [format_polynomial(p, names) for p in self.components]


@dataclass(frozen=True)
class DegreeRecord:
    """Closed-loop degree bookkeeping.

    Substituting a degree-l_x control into f keeps the f part at degree
    at most l_x + l_u * l_x and the augmentation part at most
    l_x * (l_x + l_u); the first never exceeds the second.
    """

    l_x: int
    l_u: int
    substitution_bound: int
    composition_bound: int
    measured: int


@dataclass(frozen=True)
class SynthesisResult:
    control: ControlLaw
    augmentation: Augmentation
    theta: tuple[float, ...]
    certificate: StabilityCertificate
    success: bool
    closed_loop: VectorField
    degree_record: DegreeRecord
    trace: tuple[tuple[int, float], ...]
    evals: int
    note: str = ""


# ----------------------------------------------------------------------
# Loop closure
# ----------------------------------------------------------------------


def _substitute_controls(p: Polynomial, controls: Sequence[Polynomial], n: int) -> Polynomial:
    """Replace the control variables of p (over n + r vars) by polynomials in x."""
    out = Polynomial.zero(n)
    for exps, coef in p.terms.items():
        term = Polynomial(n, {tuple(exps[:n]): coef})
        for u_poly, m in zip(controls, exps[n:]):
            if m:
                term = term * (u_poly ** m)
        out = out + term
    return out


def close_loop(
    field: VectorField,
    control: ControlLaw,
    augmentation: Augmentation | None = None,
) -> VectorField:
    """Substitute u = u(x) into f(x, u) + phi(u) and expand."""
    if control.r != field.r:
        raise ValueError(
            f"control has {control.r} components, field expects {field.r}"
        )
    degrees = field.degrees()
    if control.degree_bound > max(degrees.x, 1):
        raise ValueError(
            f"control degree bound {control.degree_bound} exceeds the field degree "
            f"in x ({degrees.x})"
        )
    if augmentation is not None and augmentation.degree_bound > max(degrees.z, 1):
        raise ValueError(
            f"augmentation degree bound {augmentation.degree_bound} exceeds the "
            f"field degree in (x, u) ({degrees.z})"
        )
    n = field.n
    closed = [
        _substitute_controls(comp, control.components, n) for comp in field.components
    ]
    if augmentation is not None:
        if len(augmentation.components) != n:
            raise ValueError("augmentation needs one component per state")
        for i, phi in enumerate(augmentation.components):
            lifted = Polynomial(control.r, dict(phi.terms))
            closed[i] = closed[i] + _substitute_controls(
                _prepend_states(lifted, n), control.components, n
            )
    result = VectorField(n, closed)
    for comp in result.components:
        if comp.constant_term() != 0.0:
            raise AssertionError("closed loop lost the equilibrium at the origin")
    return result


def _prepend_states(p: Polynomial, n: int) -> Polynomial:
    """View a polynomial in u alone as one in (x, u) with zero x-exponents."""
    return Polynomial(n + p.nvars, {tuple([0] * n) + e: c for e, c in p.terms.items()})


def degree_record(field: VectorField, closed: VectorField) -> DegreeRecord:
    d = field.degrees()
    lx, lu = max(d.x, 1), d.u
    return DegreeRecord(
        l_x=lx,
        l_u=lu,
        substitution_bound=lx + lu * lx,
        composition_bound=lx * (lx + lu),
        measured=closed.degrees().x,
    )


# ----------------------------------------------------------------------
# Kalman rank
# ----------------------------------------------------------------------


def kalman_rank(A: np.ndarray, B: np.ndarray) -> int:
    """Numerical rank of the controllability matrix [B, AB, ..., A^(n-1)B]."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    C = np.hstack(blocks)
    norms = np.linalg.norm(C, axis=0)
    largest = norms.max() if norms.size else 0.0
    if largest == 0.0:
        return 0
    from scipy import linalg

    _, R, _ = linalg.qr(C, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    return int((diag > 1e-10 * largest).sum())


def _linear_parts(field: VectorField) -> tuple[np.ndarray, np.ndarray] | None:
    """(A, B) when f = A x + B u exactly, else None."""
    n, r = field.n, field.r
    A = np.zeros((n, n))
    B = np.zeros((n, r))
    for i, comp in enumerate(field.components):
        for exps, coef in comp.terms.items():
            if sum(exps) != 1:
                return None
            j = exps.index(1)
            if j < n:
                A[i, j] = coef
            else:
                B[i, j - n] = coef
    return A, B


def _has_unstable_uncontrollable_mode(A: np.ndarray, B: np.ndarray) -> bool:
    """Eigenvalue test: some Re(lambda) >= 0 mode with rank [A - lambda I, B] < n."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real < -1e-9:
            continue
        pencil = np.hstack([A - lam * np.eye(n), B.astype(complex)])
        if np.linalg.matrix_rank(pencil, tol=1e-9 * (1 + np.abs(lam))) < n:
            return True
    return False


# ----------------------------------------------------------------------
# Coefficient bases and packing
# ----------------------------------------------------------------------


def _monomial_basis(nvars: int, max_degree: int) -> list[tuple[int, ...]]:
    """All exponent tuples with total degree 1..max_degree, canonical order."""
    basis = []
    for total in range(1, max_degree + 1):
        for exps in _compositions(total, nvars):
            basis.append(exps)
    return basis


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for head in range(total, -1, -1):
        for tail in _compositions(total - head, parts - 1):
            yield (head,) + tail


def _pack_control(vec: np.ndarray, basis, n: int, r: int, bound: int) -> ControlLaw:
    width = len(basis)
    comps = []
    for l in range(r):
        coeffs = vec[l * width: (l + 1) * width]
        comps.append(Polynomial(n, {e: float(c) for e, c in zip(basis, coeffs) if c != 0.0}))
    return ControlLaw(tuple(comps), degree_bound=bound)


def _pack_augmentation(vec: np.ndarray, basis, n: int, r: int, bound: int) -> Augmentation:
    width = len(basis)
    comps = []
    for p in range(n):
        coeffs = vec[p * width: (p + 1) * width]
        comps.append(Polynomial(r, {e: float(c) for e, c in zip(basis, coeffs) if c != 0.0}))
    return Augmentation(tuple(comps), degree_bound=bound)


def _cancellation_starts(field: VectorField, basis, deg_u: int, damping: float):
    """Structured outer starts: cancel nonlinear terms reachable through an
    additive control channel, optionally adding -damping * x_p feedback."""
    n, r = field.n, field.r
    width = len(basis)
    index = {e: k for k, e in enumerate(basis)}
    start = np.zeros(r * width)
    identity_only = np.zeros(r * width)
    found = False
    claimed: set[int] = set()
    for l in range(r):
        gain, channel = 0.0, None
        for p, comp in enumerate(field.components):
            if p in claimed:
                continue
            pure = tuple([0] * n + [1 if j == l else 0 for j in range(r)])
            coef = comp.terms.get(pure, 0.0)
            if abs(coef) > abs(gain):
                gain, channel = coef, p
        if channel is None or gain == 0.0:
            continue
        claimed.add(channel)
        found = True
        block = slice(l * width, (l + 1) * width)
        for exps, coef in field.components[channel].terms.items():
            x_part, u_part = exps[:n], exps[n:]
            if any(u_part) or sum(x_part) < 2 or sum(x_part) > deg_u:
                continue
            start[block][index[x_part]] -= coef / gain
        if damping and deg_u >= 1:
            e_damp = tuple(1 if j == channel else 0 for j in range(n))
            start[block][index[e_damp]] -= damping / gain
            identity_only[l * width + index[e_damp]] -= damping / gain
    if not found:
        return []
    starts = [start]
    if damping and np.any(identity_only):
        starts.append(identity_only)
    return starts


def _box_penalty(vec: np.ndarray) -> float:
    over = np.abs(vec) - _COEFF_BOX
    over = over[over > 0]
    return float((over ** 2).sum()) if over.size else 0.0


# ----------------------------------------------------------------------
# Synthesis drivers
# ----------------------------------------------------------------------


def _closed_margin_factory(field, control_basis, deg_u, domain, inner_budget, seed,
                           phi_basis=None, deg_phi=0):
    """Builds the outer objective: coefficients -> best sampled margin."""
    n, r = field.n, field.r
    coarse_cache = {}
    u_width = r * len(control_basis)

    def split(vec):
        u_vec = vec[:u_width]
        control = _pack_control(u_vec, control_basis, n, r, deg_u)
        phi = None
        if phi_basis is not None:
            phi = _pack_augmentation(vec[u_width:], phi_basis, n, r, deg_phi)
        return control, phi

    def objective(vec):
        penalty = _box_penalty(vec)
        clipped = np.clip(vec, -_COEFF_BOX, _COEFF_BOX)
        control, phi = split(clipped)
        closed = close_loop(field, control, phi)
        fam = build_family(closed)
        key = fam.n
        if key not in coarse_cache:
            coarse_cache[key] = domain.sample_points(
                n, np.random.default_rng(seed + 1),
                grid=5 if n <= 3 else 3, random_samples=32,
            )
        points = coarse_cache[key]
        sampled = sample_family(fam, points)
        if fam.free_dim == 0:
            margin = margin_of(sample_stats(sampled.base))
        else:
            def inner(theta):
                return margin_of(sample_stats(sampled.matrices(theta)))

            # One short run from the baseline shares ranks outer candidates;
            # the winner gets a full share search afterwards.
            _, margin, _ = single_start_minimize(
                inner, np.zeros(fam.free_dim), maxfev=inner_budget
            )
        return margin + penalty

    return objective, split


def synthesize(
    field: VectorField,
    domain: Domain,
    deg_u: int | None = None,
    allow_phi: bool = False,
    deg_phi: int | None = None,
    budget: int = 200000,
    seed: int = 0,
    starts: int = 32,
    threads: int = 1,
) -> SynthesisResult:
    """Search for a stabilizing polynomial control over the domain.

    Success means the closed loop certifies (negative sampled margin) at
    full resolution.  Budget exhaustion with a non-negative margin is a
    failure result, not an exception.
    """
    if field.r < 1:
        raise ValueError("the field has no control inputs")
    degrees = field.degrees()
    l_x = max(degrees.x, 1)
    if deg_u is None:
        deg_u = l_x
    if deg_u < 1 or deg_u > l_x:
        raise ValueError(
            f"control degree bound must lie in 1..{l_x} (degree of f in x)"
        )
    l_z = max(degrees.z, 1)
    if deg_phi is None:
        deg_phi = l_z
    if allow_phi and (deg_phi < 1 or deg_phi > l_z):
        raise ValueError(
            f"augmentation degree bound must lie in 1..{l_z} (degree of f in (x, u))"
        )
    np.testing.assert_array_equal(field.evaluate(np.zeros(field.n), np.zeros(field.r)), 0.0)

    # Linear fast path: an unstable uncontrollable mode cannot be fixed.
    linear = _linear_parts(field)
    note = ""
    if linear is not None and deg_u == 1:
        A, B = linear
        rank = kalman_rank(A, B)
        if rank < field.n and _has_unstable_uncontrollable_mode(A, B):
            zero_u = ControlLaw(
                tuple(Polynomial.zero(field.n) for _ in range(field.r)), deg_u
            )
            zero_phi = Augmentation(
                tuple(Polynomial.zero(field.r) for _ in range(field.n)), deg_phi
            )
            closed = close_loop(field, zero_u, None)
            fam = build_family(closed)
            theta, cert = search_certificate(fam, domain, budget=64, seed=seed)
            return SynthesisResult(
                control=zero_u,
                augmentation=zero_phi,
                theta=tuple(float(t) for t in theta),
                certificate=cert,
                success=False,
                closed_loop=closed,
                degree_record=degree_record(field, closed),
                trace=(),
                evals=0,
                note=(
                    f"kalman rank {rank} < {field.n} with an unstable uncontrollable "
                    "mode: no polynomial feedback can stabilize this plant"
                ),
            )

    basis = _monomial_basis(field.n, deg_u)
    result = _synthesize_phase(
        field, domain, basis, deg_u, None, 0, budget if not allow_phi else budget // 2,
        seed, starts, threads,
    )
    if result.success or not allow_phi:
        return result
    phi_basis = _monomial_basis(field.r, deg_phi)
    second = _synthesize_phase(
        field, domain, basis, deg_u, phi_basis, deg_phi, budget // 2,
        seed + 1, starts, threads,
    )
    if second.success:
        return second
    best = second if second.certificate.margin < result.certificate.margin else result
    return best


def _synthesize_phase(field, domain, basis, deg_u, phi_basis, deg_phi, budget,
                      seed, starts, threads):
    n, r = field.n, field.r
    inner_probe = close_loop(
        field,
        _pack_control(np.zeros(r * len(basis)), basis, n, r, deg_u),
        None,
    )
    inner_free = build_family(inner_probe).free_dim
    inner_budget = 30 if inner_free else 1
    objective, split = _closed_margin_factory(
        field, basis, deg_u, domain, inner_budget, seed, phi_basis, deg_phi
    )
    dim = r * len(basis) + (n * len(phi_basis) if phi_basis is not None else 0)
    outer_budget = min(4000, max(starts * 40, budget // max(inner_budget, 1)))
    extra = []
    for s in _cancellation_starts(field, basis, deg_u, damping=2.0):
        vec = np.zeros(dim)
        vec[: s.size] = s
        extra.append(vec)
    best_vec, best_val, evals, trace = multistart_minimize(
        objective,
        dim,
        budget=outer_budget,
        seed=seed,
        starts=starts,
        extra_starts=extra,
        threads=threads,
    )
    best_vec, best_val, polish_evals = single_start_minimize(
        objective, np.clip(best_vec, -_COEFF_BOX, _COEFF_BOX),
        maxfev=max(100, outer_budget // 10),
    )
    evals += polish_evals
    control, phi = split(np.clip(best_vec, -_COEFF_BOX, _COEFF_BOX))
    closed = close_loop(field, control, phi)
    fam = build_family(closed)
    theta, cert = search_certificate(
        fam, domain, budget=max(2000, budget // 20), seed=seed, threads=threads
    )
    success = cert.verdict == "certified-on-samples"
    if phi is None:
        phi = Augmentation(tuple(Polynomial.zero(r) for _ in range(n)), deg_phi or 1)
    return SynthesisResult(
        control=control,
        augmentation=phi,
        theta=tuple(float(t) for t in theta),
        certificate=cert,
        success=success,
        closed_loop=closed,
        degree_record=degree_record(field, closed),
        trace=tuple(trace),
        evals=evals,
        note="" if success else "budget exhausted without a certified closed loop",
    )


# ----------------------------------------------------------------------
# Center-making synthesis
# ----------------------------------------------------------------------


def make_center(
    field: VectorField,
    domain: Domain,
    deg_u: int | None = None,
    allow_phi: bool = False,
    deg_phi: int | None = None,
    budget: int = 200000,
    seed: int = 0,
    starts: int = 32,
    threads: int = 1,
) -> SynthesisResult:
    """Choose a control making the origin a center of the closed loop.

    The spectral target is |Re| < 1e-6 and |Im| > 1e-6 for every
    eigenvalue at every sample; success additionally requires four seed
    trajectories to come back to their start after one estimated period.
    Only even state dimensions are admissible: with n odd every family
    member has a real eigenvalue.
    """
    if field.n % 2:
        raise ValueError("a center needs an even state dimension")
    if field.r < 1:
        raise ValueError("the field has no control inputs")
    degrees = field.degrees()
    l_x = max(degrees.x, 1)
    if deg_u is None:
        deg_u = l_x
    if deg_u < 1 or deg_u > l_x:
        raise ValueError(f"control degree bound must lie in 1..{l_x}")
    l_z = max(degrees.z, 1)
    if deg_phi is None:
        deg_phi = l_z

    n, r = field.n, field.r
    basis = _monomial_basis(n, deg_u)
    dim = r * len(basis)
    rng = np.random.default_rng(seed)
    coarse_points = domain.sample_points(
        n, np.random.default_rng(seed + 1), grid=5 if n <= 3 else 3, random_samples=32
    )
    full_points = domain.sample_points(n, rng)

    def center_objective_on(points):
        def compute(vec):
            penalty = _box_penalty(vec)
            control = _pack_control(
                np.clip(vec[:dim], -_COEFF_BOX, _COEFF_BOX), basis, n, r, deg_u
            )
            closed = close_loop(field, control, None)
            fam = build_family(closed)
            sampled = sample_family(fam, points)

            def inner(theta):
                stats = sample_stats(sampled.matrices(theta))
                if stats.n_ok == 0:
                    return math.inf
                ok = stats.ok
                value = np.maximum(
                    stats.max_abs_real[ok] - 0.5 * _CENTER_RE,
                    1.5 * _CENTER_IM - stats.min_abs_imag[ok],
                )
                return float(value.max())

            if fam.free_dim == 0:
                return inner(np.zeros(0)) + penalty
            _, value, _ = single_start_minimize(
                inner, np.zeros(fam.free_dim), maxfev=40
            )
            return value + penalty

        return compute

    coarse_objective = center_objective_on(coarse_points)
    outer_budget = max(starts * 40, budget // 60)
    extra = []
    for s in _cancellation_starts(field, basis, deg_u, damping=0.0):
        vec = np.zeros(dim)
        vec[: s.size] = s
        extra.append(vec)
    best_vec, best_val, evals, trace = multistart_minimize(
        coarse_objective, dim, budget=outer_budget, seed=seed, starts=starts,
        extra_starts=extra, threads=threads,
    )
    full_objective = center_objective_on(full_points)
    best_vec, best_val, polish_evals = single_start_minimize(
        full_objective, np.clip(best_vec, -_COEFF_BOX, _COEFF_BOX),
        maxfev=max(200, outer_budget // 5), fatol=1e-16, xatol=1e-12,
    )
    evals += polish_evals

    control = _pack_control(
        np.clip(best_vec, -_COEFF_BOX, _COEFF_BOX), basis, n, r, deg_u
    )
    closed = close_loop(field, control, None)
    fam = build_family(closed)

    # Share vector realizing the center pattern at full resolution.
    sampled_full = sample_family(fam, full_points)

    def inner_full(theta):
        stats = sample_stats(sampled_full.matrices(theta))
        if stats.n_ok == 0:
            return math.inf
        ok = stats.ok
        return float(
            np.maximum(
                stats.max_abs_real[ok] - 0.5 * _CENTER_RE,
                1.5 * _CENTER_IM - stats.min_abs_imag[ok],
            ).max()
        )

    if fam.free_dim:
        theta, inner_val, inner_evals, _ = multistart_minimize(
            inner_full, fam.free_dim, budget=2000, seed=seed, starts=8
        )
        evals += inner_evals
    else:
        theta, inner_val = np.zeros(0), inner_full(np.zeros(0))

    stats = sample_stats(sampled_full.matrices(theta))
    ok = stats.ok
    spectral_success = (
        stats.n_ok > 0
        and float(stats.max_abs_real[ok].max()) < _CENTER_RE
        and float(stats.min_abs_imag[ok].min()) > _CENTER_IM
    )

    orbit_ok, orbit_note = False, "spectral center pattern not met"
    if spectral_success:
        orbit_ok, orbit_note = _closed_orbit_confirmation(fam, theta, domain, stats)
    success = spectral_success and orbit_ok

    margin = margin_of(stats)
    cert = StabilityCertificate(
        theta=tuple(float(t) for t in theta),
        domain=domain,
        margin=margin,
        verdict="inconclusive",
        samples=full_points.shape[0],
        inconclusive_samples=full_points.shape[0] - stats.n_ok,
        counterexample=None,
        search_evals=evals,
        note="center synthesis: margin is the worst |Re| pattern value",
    )
    phi = Augmentation(tuple(Polynomial.zero(r) for _ in range(n)), deg_phi)
    return SynthesisResult(
        control=control,
        augmentation=phi,
        theta=tuple(float(t) for t in theta),
        certificate=cert,
        success=success,
        closed_loop=closed,
        degree_record=degree_record(field, closed),
        trace=tuple(trace),
        evals=evals,
        note=orbit_note if not success else "center pattern met and orbits close",
    )


def _closed_orbit_confirmation(fam, theta, domain, stats):
    """Simulate four seeds for one estimated period and check they return."""
    im = float(stats.min_abs_imag[stats.ok].min())
    if im <= 0:
        return False, "no rotation rate available"
    period = 2.0 * math.pi / im
    radius = 0.5 * domain.inradius()
    failures = []
    for k in range(4):
        angle = 2.0 * math.pi * k / 4.0
        seed_point = np.zeros(fam.n)
        seed_point[0] = radius * math.cos(angle)
        seed_point[1] = radius * math.sin(angle)
        try:
            traj = integrate_exp(fam, theta, seed_point, 0.0, period, 2000)
        except DivergenceError:
            return False, f"seed {k} diverged within one period"
        distance = float(np.linalg.norm(traj.final - traj.initial))
        if distance > 0.05 * float(np.linalg.norm(seed_point)):
            failures.append((k, distance))
    if failures:
        return False, f"seeds failed to close their orbits: {failures}"
    return True, "orbits close within 5% after one period"
