"""1-D transient conduction with a localised diffusivity defect.

Vertex-centred finite volumes (half cells at both ends), implicit Euler in
time.  Heat enters through z=0 at a fixed gradient until the surface passes
``t_max``; the far face is insulated.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from .trajectory import Trajectory


class SingularSystemError(RuntimeError):
    pass


@dataclass
class HeatProblem:
    length: float = 0.01            # m
    nodes: int = 101
    alpha_ref: float = 1e-6         # m^2/s
    center: float = 0.005           # m, abnormality centre G
    ratio: float = 60.0             # alpha_ref / alpha at the centre
    half_width: float = 0.001       # m, distance at which the dip is half depth
    flux: float = 30000.0           # K/m, q0/k
    t_max: float = 500.0            # degC, heating cut-off
    t_initial: float = 20.0         # degC
    dt: float = 1.0                 # s
    horizon: float = 200.0          # s
    insulated: bool = False         # force zero flux at both ends

    def __post_init__(self):
        if not 0.0 < self.center < self.length:
            raise ValueError("abnormality centre must lie strictly inside the slab")
        if self.ratio <= 1.0:
            raise ValueError("ratio must exceed 1")
        if self.nodes < 3:
            raise ValueError("need at least 3 nodes")
        if self.dt <= 0 or self.horizon <= 0:
            raise ValueError("dt and horizon must be positive")
        if self.half_width <= 0 or self.alpha_ref <= 0:
            raise ValueError("half_width and alpha_ref must be positive")

    @property
    def dip_depth(self) -> float:
        return self.alpha_ref * (1.0 - 1.0 / self.ratio)

    @property
    def sharpness(self) -> float:
        return np.log(2.0) / self.half_width ** 6

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.nodes)


def alpha_profile(problem: HeatProblem, z):
    """Diffusivity ``alpha_ref - A exp(-B (G - z)^6)``; equals ``alpha_ref/ratio`` at ``z = G``."""
    z = np.asarray(z, dtype=np.float64)
    return problem.alpha_ref - problem.dip_depth * np.exp(-problem.sharpness * (problem.center - z) ** 6)


def _volumes(problem: HeatProblem) -> np.ndarray:
    dz = problem.length / (problem.nodes - 1)
    vol = np.full(problem.nodes, dz)
    vol[0] = vol[-1] = 0.5 * dz
    return vol


def mean_temperature(problem: HeatProblem, temps: np.ndarray) -> np.ndarray:
    """Volume-weighted spatial mean; the quantity the insulated scheme conserves."""
    vol = _volumes(problem)
    return np.asarray(temps) @ vol / vol.sum()


def simulate_heat_1d(problem: HeatProblem, initial=None) -> Trajectory:
    """Nodal temperatures for every step; ``initial`` overrides the uniform ``t_initial`` start."""
    n = problem.nodes
    dz = problem.length / (n - 1)
    z = problem.grid()
    alpha = alpha_profile(problem, z)
    conductance = 0.5 * (alpha[:-1] + alpha[1:]) / dz
    vol = _volumes(problem)

    steps = int(round(problem.horizon / problem.dt))
    times = problem.dt * np.arange(steps + 1)
    coupling = problem.dt * conductance
    ab = np.zeros((3, n))
    ab[1] = vol
    ab[1, :-1] += coupling
    ab[1, 1:] += coupling
    ab[0, 1:] = -coupling
    ab[2, :-1] = -coupling

    temps = np.empty((steps + 1, n))
    temps[0] = problem.t_initial if initial is None else np.asarray(initial, dtype=np.float64)
    inflow = alpha[0] * problem.flux * problem.dt
    heating = []
    for k in range(steps):
        # solve for the increment so a uniform field with no inflow stays exactly uniform
        face = coupling * np.diff(temps[k])
        rhs = np.zeros(n)
        rhs[:-1] += face
        rhs[1:] -= face
        on = not problem.insulated and temps[k, 0] < problem.t_max
        if on:
            rhs[0] += inflow
        heating.append(on)
        try:
            temps[k + 1] = temps[k] + solve_banded((1, 1), ab, rhs, check_finite=False)
        except (LinAlgError, ValueError) as exc:
            raise SingularSystemError(f"implicit step {k} failed: {exc}") from None
        if not np.all(np.isfinite(temps[k + 1])):
            raise SingularSystemError(f"implicit step {k} produced non-finite temperatures")
    prov = {"system": "heat_1d", "parameters": asdict(problem), "z": z.tolist(),
            "heating_fraction": float(np.mean(heating)) if heating else 0.0}
    return Trajectory(times, temps, None, prov)


def probe_series(traj: Trajectory, problem: HeatProblem, positions=(0.0, None)) -> dict[float, np.ndarray]:
    """Temperature history at the requested positions (``None`` means z = L)."""
    z = problem.grid()
    out = {}
    for pos in positions:
        pos = problem.length if pos is None else pos
        out[float(pos)] = np.array([np.interp(pos, z, row) for row in traj.states])
    return out
