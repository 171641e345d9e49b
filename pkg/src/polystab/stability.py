"""Spectral stability tests and sampled certification over a domain.

The stability question for x' = A(x) x is reduced to eigenvalue sign
conditions on A at sampled points of a domain around the origin.  The
characteristic polynomial is computed by the Faddeev-LeVerrier trace
recurrence, stability can be decided from its coefficients alone through
the Hurwitz leading principal minors, and eigenvalues themselves come
from the companion matrix of that polynomial with a Newton refinement
pass.  Everything is vectorized over batches of matrices so that a whole
sample set is processed in a handful of array operations.

Certification is sampled, never a proof: the verdict
"certified-on-samples" means the worst real part seen over the finite
sample set was strictly negative.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .factorization import FactorizationFamily, MatrixPolynomial
from .search import multistart_minimize, single_start_minimize

__all__ = [
    "Domain",
    "SpectralReport",
    "StabilityCertificate",
    "EigenvalueError",
    "char_poly",
    "hurwitz_minors",
    "hurwitz_report",
    "hurwitz_stable",
    "eigenvalues",
    "spectral_report",
    "certify",
    "search_certificate",
    "SampledFamily",
    "sample_family",
]

# Samples whose largest real part exceeds this refute; certification
# requires every sample strictly below its negative.
MARGIN_BAND = 1e-9
# Hurwitz minors inside this band are treated as unstable (conservative).
MINOR_BAND = 1e-12
_EIG_TOL = 1e-6
_REFINE_STEPS = 8


class EigenvalueError(RuntimeError):
    """Eigenvalue refinement did not meet the residual target."""

    def __init__(self, message: str, best_residual: float):
        super().__init__(message)
        self.best_residual = best_residual


# ----------------------------------------------------------------------
# Characteristic polynomial and Hurwitz test
# ----------------------------------------------------------------------


def char_poly(matrix: np.ndarray) -> np.ndarray:
    """Coefficients c_0..c_{n-1} of det(lambda I - A) = lambda^n + ... + c_0.

    Works on stacks of matrices: input (..., n, n) gives output (..., n).
    Uses the Faddeev-LeVerrier recurrence; the only divisions are by the
    integers 1..n.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    n = A.shape[-1]
    eye = np.eye(n)
    M = np.broadcast_to(eye, A.shape).copy()
    coeffs = np.empty(A.shape[:-2] + (n,))
    for k in range(1, n + 1):
        AM = A @ M
        ck = -np.trace(AM, axis1=-2, axis2=-1) / k
        coeffs[..., k - 1] = ck
        if k < n:
            M = AM + ck[..., None, None] * eye
    return coeffs[..., ::-1]


def hurwitz_minors(coeffs: Sequence[float]) -> np.ndarray:
    """Leading principal minors of the Hurwitz matrix of a monic polynomial.

    `coeffs` are ascending (c_0..c_{n-1}) with an implicit leading 1.
    """
    c = np.asarray(coeffs, dtype=float)
    n = c.shape[0]
    # a_k is the coefficient of lambda^(n-k); a_0 = 1.
    a = np.concatenate([[1.0], c[::-1]])
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            k = 2 * (j + 1) - (i + 1)
            if 0 <= k <= n:
                H[i, j] = a[k]
    return np.array([np.linalg.det(H[: m + 1, : m + 1]) for m in range(n)])


@dataclass(frozen=True)
class HurwitzReport:
    stable: bool
    marginal: bool
    minors: np.ndarray


def hurwitz_report(coeffs: Sequence[float]) -> HurwitzReport:
    minors = hurwitz_minors(coeffs)
    marginal = bool(np.any(np.abs(minors) <= MINOR_BAND))
    stable = bool(np.all(minors > MINOR_BAND))
    return HurwitzReport(stable=stable and not marginal, marginal=marginal, minors=minors)


def hurwitz_stable(coeffs: Sequence[float]) -> bool:
    """True iff all Hurwitz minors are strictly positive (marginal counts as unstable)."""
    return hurwitz_report(coeffs).stable


# ----------------------------------------------------------------------
# Eigenvalues via the companion matrix
# ----------------------------------------------------------------------


def _companion(coeffs: np.ndarray) -> np.ndarray:
    """Companion matrices for monic polynomials given ascending coefficients."""
    n = coeffs.shape[-1]
    shape = coeffs.shape[:-1] + (n, n)
    C = np.zeros(shape)
    idx = np.arange(n - 1)
    C[..., idx + 1, idx] = 1.0
    C[..., :, n - 1] = -coeffs
    return C


def _monic_eval(coeffs: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate monic polynomial and derivative at z (broadcast over roots)."""
    n = coeffs.shape[-1]
    p = np.ones_like(z)
    dp = np.zeros_like(z)
    # Horner on descending coefficients [1, c_{n-1}, ..., c_0].
    for k in range(n - 1, -1, -1):
        dp = dp * z + p
        p = p * z + coeffs[..., k][..., None]
    return p, dp


def _spectrum_batch(
    matrices: np.ndarray, residual_tol: float = _EIG_TOL, det_residual: bool = False
):
    """Eigenvalues of a stack of matrices through the characteristic polynomial.

    Returns (eigenvalues (..., n), ok (...,) bool, worst_residual (...,)).
    A batch entry is ok when every root satisfies
    |det(A - lambda I)| <= residual_tol * (1 + ||A||_F); the determinant
    equals the characteristic polynomial value up to sign, so the cheap
    Horner evaluation is used unless a determinant-based figure is asked
    for explicitly.
    """
    A = np.asarray(matrices, dtype=float)
    n = A.shape[-1]
    coeffs = char_poly(A)
    if n <= 2 and not det_residual:
        # Monic linear/quadratic: the closed form is exact, skip refinement.
        if n == 1:
            roots = -coeffs.astype(complex)
        else:
            c0 = coeffs[..., 0].astype(complex)
            c1 = coeffs[..., 1].astype(complex)
            disc = np.sqrt(c1 * c1 - 4.0 * c0)
            roots = np.stack([(-c1 - disc) / 2.0, (-c1 + disc) / 2.0], axis=-1)
        residuals = np.abs(_monic_eval(coeffs, roots)[0])
        anorm = np.sqrt((A * A).sum(axis=(-2, -1)))
        worst = residuals.max(axis=-1)
        return roots, worst <= residual_tol * (1.0 + anorm), worst
    roots = np.linalg.eigvals(_companion(coeffs))
    # Newton refinement on the characteristic polynomial; keep a step only
    # where it reduces |p|.
    pbest = None
    for _ in range(_REFINE_STEPS):
        p, dp = _monic_eval(coeffs, roots)
        safe = np.abs(dp) > 1e-300
        step = np.where(safe, p / np.where(safe, dp, 1.0), 0.0)
        candidate = roots - step
        pc, _ = _monic_eval(coeffs, candidate)
        better = np.abs(pc) < np.abs(p)
        roots = np.where(better, candidate, roots)
        pbest = np.where(better, np.abs(pc), np.abs(p))
        if not np.any(better):
            break
    if pbest is None:
        pbest = np.abs(_monic_eval(coeffs, roots)[0])
    if det_residual:
        eye = np.eye(n)
        shifted = A[..., None, :, :].astype(complex) - roots[..., :, None, None] * eye
        residuals = np.abs(np.linalg.det(shifted))
    else:
        residuals = pbest
    anorm = np.sqrt((A * A).sum(axis=(-2, -1)))
    worst = residuals.max(axis=-1)
    ok = worst <= residual_tol * (1.0 + anorm)
    return roots, ok, worst


def eigenvalues(matrix: np.ndarray, residual_tol: float = _EIG_TOL) -> np.ndarray:
    """Eigenvalues of one square matrix, sorted by (real, imag).

    Raises `EigenvalueError` carrying the best determinant residual when
    refinement cannot reach the residual target.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected one square matrix, got shape {A.shape}")
    roots, ok, worst = _spectrum_batch(
        A[None], residual_tol=residual_tol, det_residual=True
    )
    if not ok[0]:
        raise EigenvalueError(
            f"eigenvalue refinement stalled with residual {worst[0]:.3e} "
            f"(target {residual_tol * (1 + np.linalg.norm(A)):.3e})",
            best_residual=float(worst[0]),
        )
    lam = roots[0]
    order = np.lexsort((lam.imag, lam.real))
    return lam[order]


@dataclass(frozen=True)
class SpectralReport:
    """Eigenvalue facts about A(x) at one evaluation point."""

    point: tuple[float, ...]
    eigenvalues: tuple[complex, ...]
    max_real: float
    min_abs_imag: float
    hurwitz_stable: bool


def spectral_report(matrix: np.ndarray, point: Sequence[float] = ()) -> SpectralReport:
    lam = eigenvalues(matrix)
    return SpectralReport(
        point=tuple(float(v) for v in point),
        eigenvalues=tuple(complex(v) for v in lam),
        max_real=float(lam.real.max()),
        min_abs_imag=float(np.abs(lam.imag).min()),
        hurwitz_stable=hurwitz_stable(char_poly(np.asarray(matrix, dtype=float))),
    )


# ----------------------------------------------------------------------
# Domains and sampling
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class Domain:
    """A box or ball around the origin with a sampling plan.

    The origin must be interior.  Samples are a per-axis grid plus uniform
    random points, with a small exclusion ball of radius `delta` around the
    origin removed (stability conditions are quantified over x != 0).
    """

    kind: str  # "ball" | "box"
    radius: float | None = None
    half_widths: tuple[float, ...] | None = None
    center: tuple[float, ...] | None = None
    delta: float | None = None
    grid: int | None = None
    random_samples: int = 256

    def __post_init__(self):
        if self.kind not in ("ball", "box"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "ball":
            if self.radius is None or self.radius <= 0:
                raise ValueError("ball domains need a positive radius")
        else:
            if not self.half_widths or any(h <= 0 for h in self.half_widths):
                raise ValueError("box domains need positive half-widths")

    # -- geometry -------------------------------------------------------

    def dimension_hint(self) -> int | None:
        if self.kind == "box":
            return len(self.half_widths)
        if self.center is not None:
            return len(self.center)
        return None

    def resolved_center(self, n: int) -> np.ndarray:
        if self.center is None:
            return np.zeros(n)
        c = np.asarray(self.center, dtype=float)
        if c.shape != (n,):
            raise ValueError(f"center has shape {c.shape}, expected ({n},)")
        return c

    def inradius(self) -> float:
        if self.kind == "ball":
            return float(self.radius)
        return float(min(self.half_widths))

    def resolved_delta(self) -> float:
        if self.delta is not None:
            return float(self.delta)
        return 1e-3 * self.inradius()

    def grid_for(self, n: int) -> int:
        if self.grid is not None:
            return int(self.grid)
        if n <= 3:
            return 11
        if n == 4:
            return 5
        return 3

    def validate(self, n: int) -> None:
        c = self.resolved_center(n)
        if self.kind == "ball":
            if np.linalg.norm(c) >= self.radius:
                raise ValueError("origin must be interior to the domain")
        else:
            hw = np.asarray(self.half_widths, dtype=float)
            if hw.shape != (n,):
                raise ValueError(
                    f"half_widths has length {hw.shape[0]}, expected {n}"
                )
            if np.any(np.abs(c) >= hw):
                raise ValueError("origin must be interior to the domain")
        if self.resolved_delta() >= self.inradius():
            raise ValueError("exclusion radius delta must be smaller than the inradius")

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        c = self.resolved_center(x.shape[1])
        if self.kind == "ball":
            return np.linalg.norm(x - c, axis=1) <= self.radius + 1e-12
        hw = np.asarray(self.half_widths, dtype=float)
        return np.all(np.abs(x - c) <= hw + 1e-12, axis=1)

    # -- sampling ---------------------------------------------------------

    def sample_points(
        self, n: int, rng: np.random.Generator, grid: int | None = None,
        random_samples: int | None = None,
    ) -> np.ndarray:
        """Grid points first (row-major), then random samples; delta-ball excluded."""
        self.validate(n)
        c = self.resolved_center(n)
        g = self.grid_for(n) if grid is None else grid
        m = self.random_samples if random_samples is None else random_samples
        if self.kind == "ball":
            axes = [np.linspace(c[i] - self.radius, c[i] + self.radius, g) for i in range(n)]
        else:
            hw = np.asarray(self.half_widths, dtype=float)
            axes = [np.linspace(c[i] - hw[i], c[i] + hw[i], g) for i in range(n)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        mesh = mesh[self.contains(mesh)]
        if m > 0:
            if self.kind == "ball":
                direction = rng.standard_normal((m, n))
                direction /= np.linalg.norm(direction, axis=1, keepdims=True)
                radii = self.radius * rng.uniform(0.0, 1.0, m) ** (1.0 / n)
                rand = c + direction * radii[:, None]
            else:
                hw = np.asarray(self.half_widths, dtype=float)
                rand = c + rng.uniform(-1.0, 1.0, (m, n)) * hw
            points = np.vstack([mesh, rand])
        else:
            points = mesh
        keep = np.linalg.norm(points, axis=1) > self.resolved_delta()
        return points[keep]

    def refined_for(self, n: int, factor: int = 2) -> "Domain":
        """Refine the grid so every old grid point stays in the new one."""
        g = self.grid_for(n)
        return replace(self, grid=factor * g - (factor - 1))

    # -- JSON -------------------------------------------------------------

    def to_json(self) -> dict:
        body: dict = {}
        if self.kind == "ball":
            body["r"] = self.radius
        else:
            body["half_widths"] = list(self.half_widths)
        if self.center is not None:
            body["center"] = list(self.center)
        out = {self.kind: body}
        if self.delta is not None:
            out["delta"] = self.delta
        if self.grid is not None:
            out["grid"] = self.grid
        if self.random_samples != 256:
            out["random"] = self.random_samples
        return out

    @classmethod
    def from_json(cls, data: dict | str) -> "Domain":
        if isinstance(data, str):
            data = json.loads(data)
        if "ball" in data:
            body = data["ball"]
            dom = cls(
                kind="ball",
                radius=float(body["r"]),
                center=tuple(body["center"]) if "center" in body else None,
                delta=data.get("delta"),
                grid=data.get("grid"),
                random_samples=int(data.get("random", 256)),
            )
        elif "box" in data:
            body = data["box"]
            dom = cls(
                kind="box",
                half_widths=tuple(float(h) for h in body["half_widths"]),
                center=tuple(body["center"]) if "center" in body else None,
                delta=data.get("delta"),
                grid=data.get("grid"),
                random_samples=int(data.get("random", 256)),
            )
        else:
            raise ValueError("domain JSON must contain a 'ball' or 'box' key")
        return dom


# ----------------------------------------------------------------------
# Sampled family: A(x; theta) is affine in theta
# ----------------------------------------------------------------------


@dataclass
class SampledFamily:
    """Family matrices pre-evaluated on a fixed sample set.

    A(x_s; theta) = base[s] + sum_t theta_t * bumps[t, s]; moving a share
    from the remainder column to a free column is linear in theta.
    """

    points: np.ndarray  # (S, n)
    base: np.ndarray  # (S, n, n)
    bumps: np.ndarray  # (k, S, n, n)

    def matrices(self, theta: Sequence[float]) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.size == 0:
            return self.base
        return self.base + np.tensordot(theta, self.bumps, axes=1)


def sample_family(fam: FactorizationFamily, points: np.ndarray) -> SampledFamily:
    points = np.asarray(points, dtype=float)
    n = fam.n
    base = fam.instantiate(fam.baseline_theta()).evaluate_many(points)
    bumps = np.zeros((fam.free_dim, points.shape[0], n, n))
    for constraint in fam.constraints:
        i = constraint.component
        dep = constraint.remainder_column
        dep_exps = np.array(constraint.exponents, dtype=float)
        dep_exps[dep] -= 1
        dep_vals = np.power(points, dep_exps[None, :]).prod(axis=1)
        for column, param in zip(constraint.columns, constraint.free_params):
            exps = np.array(constraint.exponents, dtype=float)
            exps[column] -= 1
            vals = np.power(points, exps[None, :]).prod(axis=1)
            bumps[param, :, i, column] += vals
            bumps[param, :, i, dep] -= dep_vals
    return SampledFamily(points=points, base=base, bumps=bumps)


@dataclass(frozen=True)
class SampleStats:
    """Per-sample spectral summaries over a sample set."""

    max_real: np.ndarray
    min_abs_imag: np.ndarray
    max_abs_real: np.ndarray
    max_abs_imag: np.ndarray
    anorm: np.ndarray
    ok: np.ndarray

    @property
    def n_ok(self) -> int:
        return int(self.ok.sum())


def sample_stats(matrices: np.ndarray) -> SampleStats:
    eigs, ok, _ = _spectrum_batch(matrices)
    re = eigs.real
    im = eigs.imag
    anorm = np.sqrt((matrices * matrices).sum(axis=(-2, -1)))
    return SampleStats(
        max_real=re.max(axis=-1),
        min_abs_imag=np.abs(im).min(axis=-1),
        max_abs_real=np.abs(re).max(axis=-1),
        max_abs_imag=np.abs(im).max(axis=-1),
        anorm=anorm,
        ok=ok,
    )


def margin_of(stats: SampleStats) -> float:
    """Worst (largest) eigenvalue real part over the usable samples."""
    if stats.n_ok == 0:
        return math.inf
    return float(stats.max_real[stats.ok].max())


# ----------------------------------------------------------------------
# Certification
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityCertificate:
    theta: tuple[float, ...]
    domain: Domain
    margin: float
    verdict: str  # "certified-on-samples" | "refuted" | "inconclusive"
    samples: int
    inconclusive_samples: int
    counterexample: tuple[float, ...] | None = None
    search_evals: int = 0
    note: str = ""


def _assemble_certificate(
    theta, domain, points, stats: SampleStats, search_evals=0, from_search=False
) -> StabilityCertificate:
    total = points.shape[0]
    bad = total - stats.n_ok
    margin = margin_of(stats)
    counterexample = None
    verdict = "inconclusive"
    refuting = stats.ok & (stats.max_real >= MARGIN_BAND)
    if np.any(refuting):
        first = int(np.argmax(refuting))
        counterexample = tuple(float(v) for v in points[first])
        verdict = "inconclusive" if from_search else "refuted"
    elif bad > 0.01 * total:
        verdict = "inconclusive"
    elif stats.n_ok and margin < -MARGIN_BAND:
        verdict = "certified-on-samples"
    note = ""
    if bad:
        note = f"{bad} samples had non-convergent eigenvalue solves"
    if from_search and verdict != "certified-on-samples":
        note = (note + "; " if note else "") + (
            "no constant-share member with negative margin found within budget; "
            "the family also contains state-dependent shares this search does not cover"
        )
    return StabilityCertificate(
        theta=tuple(float(t) for t in np.atleast_1d(theta)) if np.size(theta) else (),
        domain=domain,
        margin=margin,
        verdict=verdict,
        samples=total,
        inconclusive_samples=bad,
        counterexample=counterexample,
        search_evals=search_evals,
        note=note,
    )


def certify(
    fam: FactorizationFamily,
    theta: Sequence[float],
    domain: Domain,
    seed: int = 0,
    grid: int | None = None,
    random_samples: int | None = None,
) -> StabilityCertificate:
    """Evaluate one family member over the domain samples and aggregate."""
    rng = np.random.default_rng(seed)
    points = domain.sample_points(fam.n, rng, grid=grid, random_samples=random_samples)
    matrices = sample_family(fam, points).matrices(np.asarray(theta, dtype=float))
    stats = sample_stats(matrices)
    return _assemble_certificate(theta, domain, points, stats)


def search_certificate(
    fam: FactorizationFamily,
    domain: Domain,
    budget: int = 20000,
    seed: int = 0,
    starts: int = 16,
    threads: int = 1,
) -> tuple[np.ndarray, StabilityCertificate]:
    """Search share vectors for the smallest sampled margin.

    Multi-start Nelder-Mead on a coarse sample set; the incumbent is then
    re-certified at full resolution.  Returns (theta, certificate).  A
    non-negative final margin yields the verdict "inconclusive": failing
    to find a stable constant-share member refutes nothing.
    """
    rng = np.random.default_rng(seed)
    n = fam.n
    full_points = domain.sample_points(n, rng)
    coarse_points = domain.sample_points(
        n, rng, grid=5 if n <= 3 else 3, random_samples=32
    )
    coarse = sample_family(fam, coarse_points)

    def objective(theta: np.ndarray) -> float:
        return margin_of(sample_stats(coarse.matrices(theta)))

    best_theta, _, evals, _ = multistart_minimize(
        objective,
        fam.free_dim,
        budget=budget,
        seed=seed,
        starts=starts,
        threads=threads,
    )
    full = sample_family(fam, full_points)

    if fam.free_dim:
        # Polish the incumbent against the full-resolution margin.
        def full_objective(theta: np.ndarray) -> float:
            return margin_of(sample_stats(full.matrices(theta)))

        best_theta, _, polish_evals = single_start_minimize(
            full_objective, best_theta, maxfev=max(50, budget // 10)
        )
        evals += polish_evals

    stats = sample_stats(full.matrices(best_theta))
    cert = _assemble_certificate(
        best_theta, domain, full_points, stats, search_evals=evals, from_search=True
    )
    return best_theta, cert
