"""Evidence-based classification of the origin: focus, center, or node.

The spectral side searches the factorization family for members meeting
one of three sign patterns over the sampled domain:

* focus: all eigenvalue real parts negative and all imaginary parts
  bounded away from zero;
* center: all real parts numerically zero with nonzero imaginary parts;
* node: all real parts negative with numerically real spectrum.

Existence of such a member is decided by search, so a satisfied criterion
is genuine evidence while an unsatisfied one may just mean the search
missed it; the universally-quantified side (e.g. "no member is real and
stable") cannot be decided by search at all.  Simulated trajectories from
a ring of seed points supply the falsifying evidence instead: norm decay
ratios distinguish attraction from escape, and winding counts distinguish
turning from straight-line approach.  The final label comes from the
decision table in `classify`; any conflict between the spectral and the
simulated evidence yields "unknown" with both evidence sets attached.

A center label additionally requires an even state dimension: an odd
dimension forces a real eigenvalue on every family member, which rules
closed orbits out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .factorization import FactorizationFamily, build_family
from .poly import VectorField
from .search import multistart_minimize
from .simulation import DivergenceError, Trajectory, integrate_exp, norm_decay, winding
from .stability import Domain, margin_of, sample_family, sample_stats

__all__ = ["ClassificationResult", "SeedEvidence", "CriterionEvidence", "classify", "sign_uniform_im"]

# |Im| below this (scaled by 1 + ||A||_F) counts as numerically zero.
_IM_SCALE = 1e-6
# Real parts below this count as numerically zero for the center test.
_CENTER_RE = 1e-6
_UNSTABLE_MARGIN = 5e-7


@dataclass(frozen=True)
class CriterionEvidence:
    """Outcome of one spectral search over the share vector."""

    name: str
    satisfied: bool
    value: float  # objective at the best share vector; negative = satisfied
    theta: tuple[float, ...]
    max_real: float
    min_abs_imag: float
    max_abs_real: float
    evals: int


@dataclass(frozen=True)
class SeedEvidence:
    """Simulation diagnostics for one seed trajectory."""

    seed_point: tuple[float, ...]
    horizon: float
    decay_label: str
    ratio: float  # final norm / initial norm
    decays: bool
    grows: bool
    bounded: bool
    turns: int
    angle: float
    closed_orbit: bool
    return_distance: float


@dataclass(frozen=True)
class ClassificationResult:
    label: str  # focus | center | node | unstable | unknown
    spectral: dict[str, CriterionEvidence]
    simulation: tuple[SeedEvidence, ...]
    note: str
    budget_used: int
    sign_uniformity: str = ""
    im_lower_bound: float = 0.0


def _criterion_objectives(n):
    """Objective builders mapping per-sample stats to a scalar 'violated by'."""

    def focus(stats):
        tau = _IM_SCALE * (1.0 + stats.anorm)
        per_sample = np.maximum(stats.max_real, tau - stats.min_abs_imag)
        return per_sample

    def center(stats):
        per_sample = np.maximum(
            stats.max_abs_real - 0.5 * _CENTER_RE,
            1.5 * _CENTER_RE - stats.min_abs_imag,
        )
        return per_sample

    def node(stats):
        tau = _IM_SCALE * (1.0 + stats.anorm)
        per_sample = np.maximum(stats.max_real, stats.max_abs_imag - tau)
        return per_sample

    def stable(stats):
        return stats.max_real

    return {"focus": focus, "center": center, "node": node, "stable": stable}


def _run_spectral_searches(fam, domain, budget, seed, starts, threads):
    rng = np.random.default_rng(seed)
    n = fam.n
    full_points = domain.sample_points(n, rng)
    coarse_points = domain.sample_points(n, rng, grid=5 if n <= 3 else 3, random_samples=32)
    coarse = sample_family(fam, coarse_points)
    full = sample_family(fam, full_points)
    objectives = _criterion_objectives(n)
    share = max(1, budget // len(objectives))
    out: dict[str, CriterionEvidence] = {}
    for name, reducer in objectives.items():
        def objective(theta, reducer=reducer):
            stats = sample_stats(coarse.matrices(theta))
            if stats.n_ok == 0:
                return math.inf
            return float(reducer(stats)[stats.ok].max())

        theta, _, evals, _ = multistart_minimize(
            objective, fam.free_dim, budget=share, seed=seed, starts=starts,
            threads=threads,
        )
        stats = sample_stats(full.matrices(theta))
        value = float(reducer(stats)[stats.ok].max()) if stats.n_ok else math.inf
        ok = stats.ok
        out[name] = CriterionEvidence(
            name=name,
            satisfied=bool(value < 0),
            value=value,
            theta=tuple(float(t) for t in theta),
            max_real=float(stats.max_real[ok].max()) if stats.n_ok else math.nan,
            min_abs_imag=float(stats.min_abs_imag[ok].min()) if stats.n_ok else math.nan,
            max_abs_real=float(stats.max_abs_real[ok].max()) if stats.n_ok else math.nan,
            evals=evals,
        )
    return out


def _seed_ring(n: int, radius: float) -> np.ndarray:
    if n == 1:
        return np.array([[radius], [-radius]])
    seeds = []
    for k in range(8):
        angle = 2.0 * math.pi * k / 8.0
        point = np.zeros(n)
        point[0] = radius * math.cos(angle)
        point[1] = radius * math.sin(angle)
        seeds.append(point)
    return np.array(seeds)


def _simulate_seed(fam, theta, seed_point, im_hint):
    """Integrate one seed with the exponential-product scheme and summarize."""
    probe_t = 10.0
    try:
        probe = integrate_exp(fam, theta, seed_point, 0.0, probe_t, 1000)
        probe_angle = abs(winding(probe).angle) if fam.n >= 2 else 0.0
    except DivergenceError as err:
        probe = err.trajectory
        probe_angle = 0.0
    if probe_angle > 0.3:
        period = 2.0 * math.pi * probe_t / probe_angle
        horizon = min(20.0 * period, 100.0)
    else:
        period = math.inf
        horizon = 100.0
    steps = 4000
    diverged = False
    try:
        traj = integrate_exp(fam, theta, seed_point, 0.0, horizon, steps)
    except DivergenceError as err:
        traj = err.trajectory
        diverged = True
    decay = norm_decay(traj)
    initial = float(np.linalg.norm(seed_point))
    ratio = decay.final_norm / initial if initial else math.inf
    ratio_eps = max(0.5e-6 * traj.times[-1], 1e-12)
    decays = (not diverged) and (decay.label == "to-zero" or ratio < 1.0 - ratio_eps)
    grows = diverged or decay.label == "diverging" or ratio > 1.0 + ratio_eps
    bounded = (not decays) and (not grows)
    turns, angle = 0, 0.0
    if fam.n >= 2 and traj.states.shape[0] >= 2:
        try:
            report = winding(traj)
            turns, angle = report.turn_count, report.angle
        except ValueError:
            pass
    closed, return_dist = _closed_orbit_check(traj, period)
    return SeedEvidence(
        seed_point=tuple(float(v) for v in seed_point),
        horizon=float(traj.times[-1]),
        decay_label=decay.label,
        ratio=float(ratio),
        decays=bool(decays),
        grows=bool(grows),
        bounded=bool(bounded),
        turns=int(turns),
        angle=float(angle),
        closed_orbit=bool(closed),
        return_distance=float(return_dist),
    )


def _closed_orbit_check(traj: Trajectory, period: float) -> tuple[bool, float]:
    """Does the trajectory come back to its start after one estimated period?"""
    if not math.isfinite(period) or period <= 0:
        return False, math.inf
    times = traj.times
    if period > times[-1] + 1e-9:
        return False, math.inf
    idx = int(np.argmin(np.abs(times - period)))
    if idx == 0:
        return False, math.inf
    lo = traj.states.min(axis=0)
    hi = traj.states.max(axis=0)
    diameter = float(np.linalg.norm(hi - lo))
    if diameter == 0.0:
        return False, math.inf
    distance = float(np.linalg.norm(traj.states[idx] - traj.states[0]))
    return distance < 0.05 * diameter, distance


def classify(
    f: VectorField,
    domain: Domain,
    budget: int = 50000,
    seed: int = 0,
    starts: int = 16,
    threads: int = 1,
) -> ClassificationResult:
    """Label the origin of x' = f(x) on a domain by combined evidence.

    Requires f(x) != 0 at every sampled point away from the origin; a
    vanishing sample is a stationary point inside the domain and the
    classification question is ill-posed there.
    """
    if f.r:
        raise ValueError("classification applies to control-free fields")
    rng = np.random.default_rng(seed)
    check_points = domain.sample_points(f.n, rng)
    values = f.evaluate_many(check_points)
    norms = np.linalg.norm(values, axis=1)
    if np.any(norms == 0.0):
        bad = check_points[int(np.argmin(norms))]
        raise ValueError(
            f"f vanishes at the sampled point {tuple(float(v) for v in bad)}; "
            "the field must be nonzero away from the origin"
        )

    fam = build_family(f)
    spectral = _run_spectral_searches(fam, domain, budget, seed, starts, threads)
    budget_used = sum(ev.evals for ev in spectral.values())

    sim_theta = np.array(spectral["stable"].theta)
    seeds = _seed_ring(f.n, 0.5 * domain.inradius())
    evidence = tuple(_simulate_seed(fam, sim_theta, s, None) for s in seeds)

    focus = spectral["focus"]
    center = spectral["center"]
    node = spectral["node"]
    stable = spectral["stable"]

    all_decay = all(e.decays for e in evidence)
    all_bounded = all(e.bounded for e in evidence)
    any_grow = any(e.grows for e in evidence)

    def turning_ok(e: SeedEvidence) -> bool:
        if e.turns >= 3:
            return True
        expected = e.horizon * max(focus.min_abs_imag, 0.0)
        return expected > 0 and abs(e.angle) >= 0.5 * expected and abs(e.angle) > 1e-9

    note_parts = [f"search budget {budget}, evaluations used {budget_used}"]
    label = "unknown"
    if focus.satisfied and all_decay and all(turning_ok(e) for e in evidence):
        label = "focus"
    elif (
        f.n % 2 == 0
        and center.satisfied
        and all_bounded
        and all(e.turns >= 1 for e in evidence)
        and all(e.closed_orbit for e in evidence)
    ):
        label = "center"
        if f.n > 2:
            note_parts.append(
                "center label above dimension two rests on the sampled spectral"
                " test plus closed-orbit evidence"
            )
    elif node.satisfied and all_decay and all(e.turns <= 1 for e in evidence):
        label = "node"
    elif stable.value >= -_UNSTABLE_MARGIN and any_grow and not all_decay:
        # No member with a negative sampled margin exists (or was found),
        # and trajectories escape: the domain is not attracted to 0.
        label = "unstable"
    else:
        note_parts.append("spectral and simulated evidence do not agree on a label")

    sign_label, im_bound = "", 0.0
    if f.n % 2 == 0:
        best = center if center.satisfied else focus
        try:
            uniformity = sign_uniform_im(fam, np.array(best.theta), domain, seed=seed)
            sign_label, im_bound = uniformity.label, uniformity.bound
        except ValueError:
            sign_label = "mixed"

    return ClassificationResult(
        label=label,
        spectral=spectral,
        simulation=evidence,
        note="; ".join(note_parts),
        budget_used=budget_used,
        sign_uniformity=sign_label,
        im_lower_bound=im_bound,
    )


@dataclass(frozen=True)
class SignUniformity:
    label: str  # positive | negative | mixed | has-zero
    bound: float  # largest a >= 0 with |Im| >= a on the chosen branch
    note: str = ""


def sign_uniform_im(
    fam: FactorizationFamily,
    theta: Sequence[float],
    domain: Domain,
    seed: int = 0,
    branch: int = 1,
) -> SignUniformity:
    """Check a uniform-sign imaginary-part bound across the sampled domain.

    Eigenvalues of the real member are grouped into conjugate pairs and one
    representative per pair is taken on the requested branch (positive
    imaginary part by default).  Returns the largest bound `a` with
    |Im| >= a over all samples, or "has-zero"/"mixed" when a numerically
    real or unpairable eigenvalue shows up.
    """
    if fam.n % 2:
        raise ValueError("conjugate pairing needs an even dimension")
    rng = np.random.default_rng(seed)
    points = domain.sample_points(fam.n, rng)
    matrices = sample_family(fam, points).matrices(np.asarray(theta, dtype=float))
    stats = sample_stats(matrices)
    eigs, ok, _ = _batch_eigs(matrices)
    if not np.any(ok):
        return SignUniformity("mixed", 0.0, "no sample produced converged eigenvalues")
    eigs = eigs[ok]
    imag = eigs.imag
    if np.any(np.abs(imag).min(axis=1) <= _IM_SCALE * (1.0 + stats.anorm[ok])):
        return SignUniformity("has-zero", 0.0)
    half = fam.n // 2
    order = np.argsort(imag, axis=1)
    sorted_eigs = np.take_along_axis(eigs, order, axis=1)
    lower = sorted_eigs[:, :half]
    upper = sorted_eigs[:, half:][:, ::-1]
    mismatch = np.abs(upper - np.conj(lower)).max(axis=1)
    if np.any(mismatch > 1e-6 * (1.0 + stats.anorm[ok])):
        return SignUniformity(
            "mixed", 0.0, "eigenvalues did not split into conjugate pairs"
        )
    bound = float(np.abs(imag).min())
    return SignUniformity("positive" if branch > 0 else "negative", bound)


def _batch_eigs(matrices):
    from .stability import _spectrum_batch

    return _spectrum_batch(matrices)
