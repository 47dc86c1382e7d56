"""Adaptive Dormand-Prince 5(4) integrator with continuous (dense) output."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
A = [np.array(row) for row in A]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# fifth-order minus embedded fourth-order weights, seven stages (FSAL)
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# Dormand-Prince continuous extension, coefficients of theta, theta^2, theta^3, theta^4
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


class DivergenceError(RuntimeError):
    """Integration could not continue; ``last_time`` is the last accepted time."""

    def __init__(self, message: str, last_time: float):
        super().__init__(f"{message} (last valid t={last_time:g})")
        self.last_time = last_time


@dataclass
class IntegrationStats:
    accepted: int = 0
    rejected: int = 0
    evaluations: int = 0


def _rms(x: np.ndarray) -> float:
    return math.sqrt(float(np.dot(x, x)) / x.size)


def _initial_step(f, t0, y0, f0, direction, rtol, atol) -> float:
    scale = atol + np.abs(y0) * rtol
    d0, d1 = _rms(y0 / scale), _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = f(t0 + h0 * direction, y1)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def integrate(f: Callable[[float, np.ndarray], np.ndarray], t_grid, y0, rtol: float = 1e-8,
              atol: float = 1e-10, max_steps: int = 1_000_000, max_step: float = np.inf,
              bound: float | None = None, stats: IntegrationStats | None = None) -> np.ndarray:
    """Integrate ``y' = f(t, y)`` and sample the solution on ``t_grid``.

    Returns an array of shape ``(len(t_grid), len(y0))``; row 0 is ``y0``.
    ``bound`` optionally aborts once ``max |y|`` exceeds it.  Raises
    :class:`DivergenceError` on step-size underflow, non-finite states or
    when ``max_steps`` is exhausted.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if t_grid.ndim != 1 or t_grid.size < 1:
        raise ValueError("t_grid must be a non-empty 1-D array")
    if t_grid.size > 1 and np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    y = np.array(y0, dtype=np.float64).ravel()
    out = np.empty((t_grid.size, y.size))
    out[0] = y
    if t_grid.size == 1:
        return out
    stats = stats if stats is not None else IntegrationStats()

    def rhs(t, state):
        stats.evaluations += 1
        return np.asarray(f(t, state), dtype=np.float64)

    t, t_end = t_grid[0], t_grid[-1]
    fy = rhs(t, y)
    if not np.all(np.isfinite(fy)):
        raise DivergenceError("non-finite derivative at the initial state", t)
    h = min(_initial_step(rhs, t, y, fy, 1.0, rtol, atol), max_step)
    next_idx = 1
    K = np.empty((7, y.size))
    steps = 0
    while next_idx < t_grid.size:
        if steps >= max_steps:
            raise DivergenceError("maximum number of steps exceeded", t)
        min_step = 10 * abs(np.nextafter(t, np.inf) - t)
        if h < min_step:
            raise DivergenceError("step size underflow", t)
        h = min(h, t_end - t, max_step)
        K[0] = fy
        for s in range(1, 6):
            dy = (A[s] @ K[:s]) * h
            K[s] = rhs(t + C[s] * h, y + dy)
        y_new = y + h * np.dot(B, K[:6])
        f_new = rhs(t + h, y_new)
        K[6] = f_new
        steps += 1
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))):
            stats.rejected += 1
            h *= MIN_FACTOR
            continue
        scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
        err = _rms(h * np.dot(E, K) / scale)
        if err > 1.0:
            stats.rejected += 1
            h *= max(MIN_FACTOR, SAFETY * err ** -0.2)
            continue
        stats.accepted += 1
        t_new = t + h if t + h < t_end else t_end
        Q = K.T @ P
        while next_idx < t_grid.size and t_grid[next_idx] <= t_new:
            theta = (t_grid[next_idx] - t) / h
            powers = np.array([theta, theta ** 2, theta ** 3, theta ** 4])
            out[next_idx] = y + h * (Q @ powers)
            next_idx += 1
        if bound is not None and np.max(np.abs(y_new)) > bound:
            raise DivergenceError(f"state magnitude exceeded bound {bound:g}", t_new)
        t, y, fy = t_new, y_new, f_new
        factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
        h *= factor
    return out
