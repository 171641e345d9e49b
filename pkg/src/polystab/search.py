"""Multi-start derivative-free minimization used by the spectral searches.

The objectives here are max-type functions of eigenvalue real parts, so
they are continuous but not smooth; Nelder-Mead with several start points
is the workhorse.  Runs are deterministic for a fixed seed, and results
from concurrent starts merge by (value, point) order so the thread count
never changes the answer.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

__all__ = ["multistart_minimize", "single_start_minimize", "coordinate_polish"]


def single_start_minimize(objective, x0, maxfev, xatol=1e-8, fatol=1e-12):
    """One Nelder-Mead run tracking the best point ever evaluated."""
    return _run_start(objective, x0, maxfev, xatol, fatol)


def _run_start(objective, x0, maxfev, xatol, fatol):
    evals = 0
    best_x = np.array(x0, dtype=float)
    best_f = objective(best_x)
    evals += 1

    def wrapped(x):
        nonlocal evals, best_x, best_f
        value = objective(x)
        evals += 1
        if value < best_f:
            best_f = value
            best_x = np.array(x, dtype=float)
        return value

    if maxfev > 1 and len(x0):
        optimize.minimize(
            wrapped,
            x0,
            method="Nelder-Mead",
            options={
                "maxfev": maxfev,
                "xatol": xatol,
                "fatol": fatol,
                "adaptive": len(x0) > 4,
            },
        )
    return best_x, best_f, evals


def multistart_minimize(
    objective: Callable[[np.ndarray], float],
    dim: int,
    budget: int,
    seed: int = 0,
    starts: int = 16,
    box: float = 10.0,
    extra_starts: Sequence[np.ndarray] = (),
    threads: int = 1,
    xatol: float = 1e-8,
    fatol: float = 1e-12,
    polish: bool = False,
) -> tuple[np.ndarray, float, int, list[tuple[int, float]]]:
    """Minimize over R^dim from the origin, structured, and random starts.

    Returns (best_x, best_value, evaluations_used, trace) where trace
    records (evaluations_so_far, incumbent_value) at each improvement.
    """
    if dim == 0:
        value = objective(np.zeros(0))
        return np.zeros(0), value, 1, [(1, value)]

    rng = np.random.default_rng(seed)
    points = [np.zeros(dim)]
    points.extend(np.asarray(s, dtype=float) for s in extra_starts)
    while len(points) < max(starts, len(points)):
        points.append(rng.uniform(-box, box, dim))
    points = points[: max(starts, 1 + len(extra_starts))]

    per_start = max(20, budget // len(points))
    jobs = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_run_start, objective, x0, per_start, xatol, fatol)
                for x0 in points
            ]
            jobs = [f.result() for f in futures]
    else:
        jobs = [_run_start(objective, x0, per_start, xatol, fatol) for x0 in points]

    evals = 0
    trace: list[tuple[int, float]] = []
    best_x, best_f = None, np.inf
    for x, f, used in jobs:
        evals += used
        if f < best_f or (f == best_f and best_x is not None and tuple(x) < tuple(best_x)):
            best_x, best_f = x, f
            trace.append((evals, float(best_f)))
    if polish:
        best_x, best_f, used = coordinate_polish(objective, best_x, best_f)
        evals += used
        trace.append((evals, float(best_f)))
    return np.asarray(best_x), float(best_f), evals, trace


def coordinate_polish(
    objective: Callable[[np.ndarray], float],
    x: np.ndarray,
    value: float,
    sweeps: int = 4,
    initial_step: float = 0.25,
) -> tuple[np.ndarray, float, int]:
    """Per-coordinate bisection refinement of an incumbent.

    Helps squeeze the last digits out of max-type objectives where
    Nelder-Mead stalls near a non-smooth valley.
    """
    x = np.array(x, dtype=float)
    evals = 0
    step = initial_step
    for _ in range(sweeps):
        for i in range(x.size):
            h = step
            moves = 0
            while h > 1e-12 and moves < 60:
                candidate_up = x.copy()
                candidate_up[i] += h
                candidate_down = x.copy()
                candidate_down[i] -= h
                f_up = objective(candidate_up)
                f_down = objective(candidate_down)
                evals += 2
                moves += 1
                if f_up < value and f_up <= f_down:
                    x, value = candidate_up, f_up
                elif f_down < value:
                    x, value = candidate_down, f_down
                else:
                    h *= 0.25
        step *= 0.25
    return x, value, evals
