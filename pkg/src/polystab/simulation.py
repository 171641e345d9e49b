"""Trajectory integration and phase diagnostics.

Two integrators are provided.  The exponential-product scheme advances a
state by freezing the factored matrix at the current point and applying
one matrix exponential per step,

    x_{i+1} = exp(A(x_i) dt) x_i,

so each trajectory is a product of matrix exponentials applied to x_0.
For linear systems a single step is already exact; in general the scheme
is first-order in the step size and converges uniformly on the horizon
as the partition refines.  A fixed-step fourth-order Runge-Kutta
integrator on the raw field x' = f(x) serves as the reference.

Diagnostics measure what phase portraits show: how the trajectory norm
decays and how often the trajectory winds around the origin in a chosen
coordinate plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .factorization import FactorizationFamily, MatrixPolynomial
from .poly import VectorField

__all__ = [
    "Trajectory",
    "WindingReport",
    "DecayReport",
    "DivergenceError",
    "ExpmOverflowError",
    "expm",
    "integrate_exp",
    "integrate_reference",
    "winding",
    "norm_decay",
]

DIVERGENCE_NORM = 1e12
# Pade-13 scaling threshold for double precision.
_PADE13_THETA = 5.371920351148152
_PADE13_B = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)


class ExpmOverflowError(ArithmeticError):
    """Matrix exponential overflowed; reduce the time step."""


class DivergenceError(RuntimeError):
    """Trajectory norm exceeded the divergence threshold.

    Carries the partial trajectory up to the last finite state.
    """

    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


def expm(matrix: np.ndarray, h: float = 1.0) -> np.ndarray:
    """exp(M h) by scaling and squaring with the diagonal Pade-13 approximant."""
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if h < 0:
        raise ValueError("the step must be non-negative")
    A = M * h
    norm = np.linalg.norm(A, 1)
    if norm == 0.0:
        return np.eye(M.shape[0])
    squarings = 0
    if norm > _PADE13_THETA:
        squarings = int(math.ceil(math.log2(norm / _PADE13_THETA)))
        if squarings > 100:
            raise ExpmOverflowError(
                f"matrix norm {norm:.3e} is too large to exponentiate; "
                "reduce the time step"
            )
        A = A / (2.0 ** squarings)
    n = A.shape[0]
    ident = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    b = _PADE13_B
    U = A @ (
        A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
        + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident
    )
    V = (
        A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
        + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    )
    result = np.linalg.solve(V - U, V + U)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(squarings):
            result = result @ result
    if not np.all(np.isfinite(result)):
        raise ExpmOverflowError(
            "matrix exponential overflowed during squaring; reduce the time step"
        )
    return result


@dataclass(frozen=True)
class Trajectory:
    """A time grid with the states computed on it."""

    times: np.ndarray
    states: np.ndarray  # shape (len(times), n)
    scheme: str  # "exp-product" | "reference"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if times.ndim != 1 or states.ndim != 2 or states.shape[0] != times.shape[0]:
            raise ValueError("times and states do not line up")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def initial(self) -> np.ndarray:
        return self.states[0]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)


def _check_initial(x0, t0, t_end, steps):
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 1:
        raise ValueError("initial state must be a vector")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if not t_end > t0:
        raise ValueError("t_end must exceed t0")
    return x0


def integrate_exp(
    fam: FactorizationFamily,
    theta: Sequence[float],
    x0: Sequence[float],
    t0: float,
    t_end: float,
    steps: int,
) -> Trajectory:
    """Exponential-product integration on a uniform partition.

    Exact (up to expm accuracy) for linear systems regardless of the step
    count, first-order accurate otherwise.  Raises `DivergenceError` with
    the partial trajectory when the state norm passes 1e12.
    """
    x0 = _check_initial(x0, t0, t_end, steps)
    matrix = fam.instantiate(theta)
    return _integrate_matrix(matrix, x0, t0, t_end, steps)


def _integrate_matrix(
    matrix: MatrixPolynomial, x0: np.ndarray, t0: float, t_end: float, steps: int
) -> Trajectory:
    n = matrix.n
    if x0.shape != (n,):
        raise ValueError(f"initial state has shape {x0.shape}, expected ({n},)")
    times = np.linspace(t0, t_end, steps + 1)
    dt = (t_end - t0) / steps
    states = np.empty((steps + 1, n))
    states[0] = x0
    constant = matrix.degree() == 0
    propagator = expm(matrix.linear_part(), dt) if constant else None
    x = x0.copy()
    for i in range(steps):
        try:
            step_matrix = propagator if constant else expm(matrix.evaluate(x), dt)
        except ExpmOverflowError:
            # The frozen propagator overflows double precision, so the next
            # iterate would be far beyond the divergence threshold anyway.
            partial = Trajectory(times[: i + 1], states[: i + 1], "exp-product")
            raise DivergenceError(
                f"trajectory diverged at t={times[i]:.6g}", partial
            ) from None
        x = step_matrix @ x
        states[i + 1] = x
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            partial = Trajectory(times[: i + 2], states[: i + 2], "exp-product")
            raise DivergenceError(
                f"trajectory diverged at t={times[i + 1]:.6g}", partial
            )
    return Trajectory(times, states, "exp-product")


def integrate_reference(
    field: VectorField,
    x0: Sequence[float],
    t0: float,
    t_end: float,
    steps: int,
) -> Trajectory:
    """Classical fixed-step RK4 on x' = f(x)."""
    if field.r:
        raise ValueError("reference integration needs a control-free field")
    x0 = _check_initial(x0, t0, t_end, steps)
    if x0.shape != (field.n,):
        raise ValueError(f"initial state has shape {x0.shape}, expected ({field.n},)")
    times = np.linspace(t0, t_end, steps + 1)
    dt = (t_end - t0) / steps
    states = np.empty((steps + 1, field.n))
    states[0] = x0
    x = x0.copy()
    for i in range(steps):
        k1 = field.evaluate(x)
        k2 = field.evaluate(x + 0.5 * dt * k1)
        k3 = field.evaluate(x + 0.5 * dt * k2)
        k4 = field.evaluate(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        states[i + 1] = x
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            partial = Trajectory(times[: i + 2], states[: i + 2], "reference")
            raise DivergenceError(
                f"trajectory diverged at t={times[i + 1]:.6g}", partial
            )
    return Trajectory(times, states, "reference")


@dataclass(frozen=True)
class WindingReport:
    """Signed angle accumulated by the projected trajectory heading."""

    plane: tuple[int, int]
    ray: tuple[float, float]
    angle: float  # radians, signed
    turn_count: int
    monotone: bool
    skipped: int  # increments dropped because a projection hit the origin


def winding(
    trajectory: Trajectory,
    plane: tuple[int, int] = (0, 1),
    ray: Sequence[float] = (1.0, 0.0),
) -> WindingReport:
    """Accumulate heading increments of the trajectory projected on a plane.

    Increments between consecutive states are wrapped to (-pi, pi], so the
    sampling must resolve the rotation.  The reference ray fixes where the
    angle is measured from; it does not affect the totals.  For n > 2 the
    plane projection is a heuristic view of the winding.
    """
    i, j = plane
    if i == j:
        raise ValueError("plane axes must differ")
    if trajectory.n <= max(i, j):
        raise ValueError(f"plane {plane} is outside a {trajectory.n}-dimensional state")
    proj = trajectory.states[:, [i, j]]
    radii = np.linalg.norm(proj, axis=1)
    usable = radii > 0.0
    if usable.sum() < 2:
        raise ValueError("trajectory needs at least two states with nonzero projections")
    angles = np.arctan2(proj[usable, 1], proj[usable, 0])
    increments = np.diff(angles)
    increments = (increments + np.pi) % (2.0 * np.pi) - np.pi
    total = float(increments.sum())
    # Tolerate rounding right below a full number of turns.
    turns = int(math.floor((abs(total) + 1e-9) / (2.0 * math.pi)))
    signs = np.sign(increments[np.abs(increments) > 1e-15])
    monotone = bool(signs.size == 0 or np.all(signs == signs[0]))
    skipped = int((~usable).sum())
    return WindingReport(
        plane=(i, j),
        ray=(float(ray[0]), float(ray[1])),
        angle=total,
        turn_count=turns,
        monotone=monotone,
        skipped=skipped,
    )


@dataclass(frozen=True)
class DecayReport:
    label: str  # "to-zero" | "bounded" | "diverging"
    final_norm: float
    decreasing: bool  # sup over the last quarter below sup over the first


def norm_decay(trajectory: Trajectory) -> DecayReport:
    """Classify the trajectory by its final norm and coarse trend."""
    norms = trajectory.norms()
    final = float(norms[-1])
    if final < 1e-6:
        label = "to-zero"
    elif final > 1e6:
        label = "diverging"
    else:
        label = "bounded"
    quarter = max(1, norms.size // 4)
    decreasing = bool(norms[-quarter:].max() < norms[:quarter].max())
    return DecayReport(label=label, final_norm=final, decreasing=decreasing)
