"""Lotka-Volterra (with control) and Lorenz systems."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .integrate import integrate
from .trajectory import Trajectory

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10
# Lotka-Volterra prey collapses to ~1e-185 on the reference orbit; purely relative
# error control keeps it positive.
LV_ATOL = 1e-300


@dataclass
class LotkaVolterraParams:
    """Prey/predator rates and the predator control ``c`` (a constant or samples on the grid)."""

    alpha: float = 0.5
    beta: float = 0.025
    delta: float = 0.5
    gamma: float = 0.005
    control: float | np.ndarray = 0.0

    def __post_init__(self):
        rates = (self.alpha, self.beta, self.delta, self.gamma)
        if not all(np.isfinite(r) for r in rates):
            raise ValueError("Lotka-Volterra rates must be finite")


@dataclass
class LorenzParams:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.sigma, self.rho, self.beta)):
            raise ValueError("Lorenz parameters must be finite")


def lotka_volterra_rhs(p: LotkaVolterraParams, state: np.ndarray, c) -> np.ndarray:
    """Vectorised right-hand side; ``state`` has shape (..., 2)."""
    if state.ndim == 1:
        x, y = float(state[0]), float(state[1])
        return np.array([p.alpha * x - p.beta * x * y, p.delta * x * y - p.gamma * y + c])
    x, y = state[..., 0], state[..., 1]
    return np.stack([p.alpha * x - p.beta * x * y,
                     p.delta * x * y - p.gamma * y + c], axis=-1)


def lorenz_rhs(p: LorenzParams, state: np.ndarray) -> np.ndarray:
    if state.ndim == 1:
        x, y, z = float(state[0]), float(state[1]), float(state[2])
        return np.array([p.sigma * (y - x), p.rho * x - y - x * z, x * y - p.beta * z])
    x, y, z = state[..., 0], state[..., 1], state[..., 2]
    return np.stack([p.sigma * (y - x), p.rho * x - y - x * z, x * y - p.beta * z], axis=-1)


def _control_fn(control, t_grid):
    if np.ndim(control) == 0:
        value = float(control)
        return (lambda t: value), np.full(t_grid.size, value)
    samples = np.asarray(control, dtype=np.float64).ravel()
    if samples.size != t_grid.size:
        raise ValueError("control samples must align with t_grid")
    return (lambda t: np.interp(t, t_grid, samples)), samples


def simulate_lotka_volterra(params: LotkaVolterraParams, x0: float, y0: float, t_grid,
                            rtol: float = DEFAULT_RTOL, atol: float = LV_ATOL,
                            seed: int | None = None) -> Trajectory:
    t_grid = np.asarray(t_grid, dtype=np.float64)
    c_of_t, c_samples = _control_fn(params.control, t_grid)
    states = integrate(lambda t, s: lotka_volterra_rhs(params, s, c_of_t(t)),
                       t_grid, [x0, y0], rtol=rtol, atol=atol)
    prov = {
        "system": "lotka_volterra",
        "parameters": {k: v for k, v in asdict(params).items() if k != "control"},
        "control": float(params.control) if np.ndim(params.control) == 0 else "series",
        "initial": [float(x0), float(y0)],
        "seed": seed,
        "integrator": {"method": "dopri5", "rtol": rtol, "atol": atol},
    }
    return Trajectory(t_grid, states, c_samples[:, None], prov)


def simulate_lorenz(params: LorenzParams, x0: float, y0: float, z0: float, t_grid,
                    rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                    seed: int | None = None) -> Trajectory:
    t_grid = np.asarray(t_grid, dtype=np.float64)
    states = integrate(lambda t, s: lorenz_rhs(params, s), t_grid, [x0, y0, z0],
                       rtol=rtol, atol=atol)
    prov = {
        "system": "lorenz",
        "parameters": asdict(params),
        "initial": [float(x0), float(y0), float(z0)],
        "seed": seed,
        "integrator": {"method": "dopri5", "rtol": rtol, "atol": atol},
    }
    return Trajectory(t_grid, states, None, prov)


def analytic_derivatives(traj: Trajectory) -> np.ndarray:
    """Exact right-hand side evaluated on the samples of a generated trajectory."""
    prov = traj.provenance
    if prov.get("system") == "lorenz":
        return lorenz_rhs(LorenzParams(**prov["parameters"]), traj.states)
    if prov.get("system") == "lotka_volterra":
        p = LotkaVolterraParams(**prov["parameters"])
        return lotka_volterra_rhs(p, traj.states, traj.controls[:, 0])
    raise ValueError(f"no analytic right-hand side for system {prov.get('system')!r}")
