"""From raw trajectories to training samples: noise, derivatives, denoising, windows."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .dynamics.trajectory import Trajectory


class GridError(ValueError):
    """The time grid does not suit the requested operation."""


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian measurement noise of relative level ``level``.

    Each channel receives ``level * N(0, std_c^2)`` where ``std_c`` is the
    standard deviation of the clean channel over the whole trajectory.
    """

    level: float
    seed: int | None = None

    def __post_init__(self):
        if not (self.level >= 0 and np.isfinite(self.level)):
            raise ValueError("noise level must be finite and >= 0")


@dataclass(frozen=True)
class Window:
    source: str
    start: int
    length: int
    policy: str = "fixed"

    def __post_init__(self):
        if self.length < 1 or self.start < 0:
            raise ValueError("window needs start >= 0 and length >= 1")

    @property
    def stop(self) -> int:
        return self.start + self.length

    def take(self, array: np.ndarray) -> np.ndarray:
        return array[self.start:self.stop]


def add_noise(traj: Trajectory, spec: NoiseSpec) -> Trajectory:
    if spec.level == 0:
        return traj.replace(states=traj.states.copy())
    rng = np.random.default_rng(spec.seed)
    basis = traj.states.std(axis=0)
    noisy = traj.states + spec.level * basis * rng.standard_normal(traj.states.shape)
    prov = dict(traj.provenance)
    prov["noise"] = {"level": spec.level, "seed": spec.seed}
    return traj.replace(states=noisy, provenance=prov)


def _uniform_step(times: np.ndarray) -> float:
    steps = np.diff(times)
    h = steps.mean()
    if not np.allclose(steps, h, rtol=1e-9, atol=0.0):
        raise GridError("central_difference needs a uniform grid; "
                        "use central_difference_nonuniform for irregular sampling")
    return float(h)


def central_difference(traj_or_values, times=None) -> np.ndarray:
    """Second-order derivative estimate on a uniform grid.

    Interior nodes use ``(f[k+1] - f[k-1]) / 2h``; the two ends use one-sided
    three-point stencils.  Accepts a :class:`Trajectory` or ``(values, times)``.
    """
    if isinstance(traj_or_values, Trajectory):
        values, times = traj_or_values.states, traj_or_values.times
    else:
        values = np.asarray(traj_or_values, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if times.size < 3:
        raise GridError("central difference needs at least 3 samples")
    h = _uniform_step(times)
    f = values.reshape(times.size, -1)
    d = np.empty_like(f)
    d[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    d[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    d[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    return d.reshape(values.shape)


def central_difference_nonuniform(values, times) -> np.ndarray:
    """Second-order differences on an arbitrary strictly increasing grid."""
    times = np.asarray(times, dtype=np.float64)
    if times.size < 3:
        raise GridError("central difference needs at least 3 samples")
    return np.gradient(np.asarray(values, dtype=np.float64), times, axis=0, edge_order=2)


def cumtrapz(derivs, times, initial=0.0) -> np.ndarray:
    """Running trapezoidal integral starting from ``initial`` (per column)."""
    d = np.asarray(derivs, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if d.shape[0] != times.size:
        raise ValueError("derivative and time lengths differ")
    dt = np.diff(times).reshape((-1,) + (1,) * (d.ndim - 1))
    out = np.empty_like(d)
    out[0] = 0.0
    out[1:] = np.cumsum(0.5 * dt * (d[1:] + d[:-1]), axis=0)
    return out + initial


@dataclass
class TVResult:
    """Outcome of total-variation differentiation for one channel."""

    derivative: np.ndarray
    denoised: np.ndarray
    objective: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _second_difference(times: np.ndarray):
    """Rows of M with ``(M w)_k = u_{k+1} - u_k`` where ``u`` are slopes of ``w``."""
    inv = 1.0 / np.diff(times)
    # coefficients of w_k, w_{k+1}, w_{k+2}
    return inv[:-1], -(inv[:-1] + inv[1:]), inv[1:]


def _apply_m(coef, w):
    a, b, c = coef
    return a * w[:-2] + b * w[1:-1] + c * w[2:]


def tv_differentiate(values, times, reg_weight: float | None = None, iters: int = 100,
                     eps: float | None = None, tol: float = 1e-6) -> TVResult:
    """Total-variation regularised derivative of a noisy series.

    Minimises ``0.5 ||A u - (f - f0)||^2 + reg_weight * TV(u)`` with ``A`` the
    running integral.  The problem is solved for the antiderivative
    ``w = f0 + A u``, where ``TV(u)`` is the l1 norm of divided second
    differences of ``w``.  Each lagged-diffusivity step is a banded solve and
    never increases the (smoothed) objective.  The derivative is the
    second-order finite difference of ``w``.
    """
    f = np.asarray(values, dtype=np.float64).ravel()
    t = np.asarray(times, dtype=np.float64).ravel()
    n = f.size
    if n < 3 or t.size != n:
        raise GridError("TV differentiation needs at least 3 aligned samples")
    if np.any(np.diff(t) <= 0):
        raise GridError("times must be strictly increasing")
    if reg_weight is None:
        reg_weight = 1e-2 * float(np.std(f)) or 1e-2
    if reg_weight <= 0:
        raise ValueError("reg_weight must be positive")
    coef = _second_difference(t)
    if eps is None:
        # smoothing of |r| relative to the typical slope of the data
        eps = (1e-6 * np.ptp(f) / (t[-1] - t[0])) ** 2 + 1e-300

    def objective(w):
        r = _apply_m(coef, w)
        return 0.5 * float(np.sum((w - f) ** 2)) + reg_weight * float(np.sum(np.sqrt(r * r + eps)))

    a, b, c = coef
    w = f.copy()
    history = [objective(w)]
    converged = False
    it = 0
    for it in range(1, iters + 1):
        q = reg_weight / np.sqrt(_apply_m(coef, w) ** 2 + eps)
        # M^T diag(q) M assembled into five diagonals
        ab = np.zeros((5, n))
        main = np.ones(n)
        main[:-2] += q * a * a
        main[1:-1] += q * b * b
        main[2:] += q * c * c
        up1 = np.zeros(n - 1)
        up1[:-1] += q * a * b
        up1[1:] += q * b * c
        up2 = q * a * c
        ab[0, 2:] = up2
        ab[1, 1:] = up1
        ab[2] = main
        ab[3, :-1] = up1
        ab[4, :-2] = up2
        w_new = solve_banded((2, 2), ab, f, check_finite=False)
        change = np.linalg.norm(w_new - w) / (np.linalg.norm(w) + 1e-300)
        w = w_new
        history.append(objective(w))
        if change < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"TV differentiation did not converge in {iters} iterations", RuntimeWarning,
                      stacklevel=2)
    deriv = central_difference_nonuniform(w, t)
    return TVResult(deriv, w, history, it, converged)


def denoise(traj: Trajectory, reg_weight: float | None = None, iters: int = 100):
    """TV derivatives per channel re-integrated from the first noisy sample.

    Returns ``(denoised_trajectory, derivatives)``.
    """
    derivs = np.empty_like(traj.states)
    smooth = np.empty_like(traj.states)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for j in range(traj.n_states):
            res = tv_differentiate(traj.states[:, j], traj.times, reg_weight, iters)
            derivs[:, j] = res.derivative
            smooth[:, j] = cumtrapz(res.derivative, traj.times, traj.states[0, j])
    return traj.replace(states=smooth), derivs


def make_windows(traj: Trajectory | int, width: int, mode: str = "fixed", stride: int | None = None,
                 sizes=None, source: str = "") -> list[Window]:
    """Split a trajectory (or a sample count) into windows.

    ``fixed`` gives contiguous windows of ``width`` rows every ``stride`` rows
    (non-overlapping by default).  ``expanding`` gives prefixes of growing
    length, either ``sizes`` or ``width, width + stride, ...``.
    """
    n = traj if isinstance(traj, (int, np.integer)) else len(traj)
    if width < 1:
        raise ValueError("width must be >= 1")
    if mode not in ("fixed", "expanding"):
        raise ValueError(f"unknown window mode {mode!r}")
    stride = width if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if width > n:
        warnings.warn(f"window width {width} exceeds trajectory length {n}", RuntimeWarning,
                      stacklevel=2)
        return []
    if mode == "fixed":
        return [Window(source, s, width, "fixed") for s in range(0, n - width + 1, stride)]
    lengths = list(sizes) if sizes is not None else list(range(width, n + 1, stride))
    return [Window(source, 0, int(k), "expanding") for k in lengths if 1 <= k <= n]


__all__ = [
    "GridError", "NoiseSpec", "TVResult", "Window", "add_noise", "central_difference",
    "central_difference_nonuniform", "cumtrapz", "denoise", "make_windows", "tv_differentiate",
]
