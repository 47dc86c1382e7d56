"""Ground-truth simulators and parameter-space sampling."""

from .heat import (HeatProblem, SingularSystemError, alpha_profile, mean_temperature,
                   probe_series, simulate_heat_1d)
from .integrate import DivergenceError, IntegrationStats, integrate
from .sobol import SobolConfigurationError, sobol_points, sobol_sample
from .systems import (LorenzParams, LotkaVolterraParams, analytic_derivatives, lorenz_rhs,
                      lotka_volterra_rhs, simulate_lorenz, simulate_lotka_volterra)
from .trajectory import Trajectory, read_trajectory, save_trajectory, trajectory_csv

__all__ = [
    "DivergenceError", "HeatProblem", "IntegrationStats", "LorenzParams", "LotkaVolterraParams",
    "SingularSystemError", "SobolConfigurationError", "Trajectory", "alpha_profile",
    "analytic_derivatives", "integrate", "lorenz_rhs", "lotka_volterra_rhs", "mean_temperature",
    "probe_series", "read_trajectory", "save_trajectory", "simulate_heat_1d", "simulate_lorenz",
    "simulate_lotka_volterra", "sobol_points", "sobol_sample", "trajectory_csv",
]
