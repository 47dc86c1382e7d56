"""Dataset generation and assembly for the three studies.

* Lotka-Volterra with control: next-sub-domain SINDYc coefficients.
* Lorenz: global parameters from expanding windows of (noisy) samples.
* 1-D heat conduction: defect centre, depth ratio and reference diffusivity
  from two temperature probes.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (HeatProblem, LorenzParams, LotkaVolterraParams, Trajectory,
                       analytic_derivatives, probe_series, simulate_heat_1d, simulate_lorenz,
                       simulate_lotka_volterra, sobol_sample)
from .signal import NoiseSpec, add_noise, central_difference_nonuniform, cumtrapz, make_windows, tv_differentiate
from .sindy import (CoefficientMatrix, FeatureLibrary, StlsqConfig, evaluate_library,
                    identify_local, identify_lorenz_constrained)
from .seeding import subseed, substream
from .training import LabeledWindow

log = logging.getLogger(__name__)

LV_BOUNDS = {"c": (-1.0, 5.0), "x0": (5.0, 50.0), "y0": (5.0, 15.0)}
LORENZ_BOUNDS = {"sigma": (8.0, 12.0), "rho": (20.0, 35.0), "beta": (0.0, 4.0),
                 "x0": (-5.0, 5.0), "y0": (4.0, 50.0), "z0": (5.0, 15.0)}
LORENZ_PARAMS = ("sigma", "rho", "beta")


@dataclass
class Sample:
    """A generated trajectory with its identifier, split and extra arrays."""

    ident: str
    traj: Trajectory
    split: str
    derivatives: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def split_labels(n: int, fractions: dict[str, float], rng: np.random.Generator) -> list[str]:
    """Assign ``n`` items to splits with the given proportions (largest remainder)."""
    names = list(fractions)
    raw = np.array([fractions[k] for k in names], dtype=np.float64) * n / sum(fractions.values())
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    labels = np.repeat(names, counts)
    return [str(s) for s in labels[rng.permutation(n)]]


def label_digest(coef) -> str:
    return hashlib.sha256(np.ascontiguousarray(coef, dtype="<f8").tobytes()).hexdigest()[:16]


# ---------------------------------------------------------------- Lotka-Volterra

def generate_lv(count: int, seed: int, t_end: float = 30.0, dt: float = 0.1,
                bounds: dict | None = None, fractions: dict | None = None,
                params: LotkaVolterraParams | None = None) -> list[Sample]:
    bounds = bounds or LV_BOUNDS
    fractions = fractions or {"train": 166, "valid": 56, "test": 56}
    base = params or LotkaVolterraParams()
    pts = sobol_sample(3, count, [bounds["c"], bounds["x0"], bounds["y0"]],
                       seed=subseed(seed, "lv/sobol"))
    splits = split_labels(count, fractions, substream(seed, "lv/split"))
    t_grid = np.round(np.arange(0.0, t_end + 0.5 * dt, dt), 12)
    out = []
    for i, (c, x0, y0) in enumerate(pts):
        p = LotkaVolterraParams(base.alpha, base.beta, base.delta, base.gamma, float(c))
        traj = simulate_lotka_volterra(p, x0, y0, t_grid, seed=seed)
        traj.provenance["id"] = f"lv{i:04d}"
        out.append(Sample(f"lv{i:04d}", traj, splits[i], central_difference_nonuniform(traj.states, traj.times)))
    return out


@dataclass
class App1Data:
    library: FeatureLibrary
    samples: dict[int, list[LabeledWindow]]     # per state equation
    labels: dict[tuple[str, int], CoefficientMatrix]
    skipped: int = 0


def app1_features(window: Trajectory) -> np.ndarray:
    """Rows ``[x, y, c, tau]`` with ``tau`` the time since the window start."""
    tau = window.times - window.times[0]
    return np.hstack([window.states, window.controls, tau[:, None]])


def assemble_app1(samples: list[Sample], lib: FeatureLibrary, cfg: StlsqConfig, width: int = 10,
                  splits=None) -> App1Data:
    """Pair each sub-domain's rows with the SINDYc label of the following sub-domain."""
    per_eq: dict[int, list[LabeledWindow]] = {j: [] for j in range(lib.n_states)}
    labels = {}
    skipped = 0
    for s in samples:
        if splits is not None and s.split not in splits:
            continue
        windows = make_windows(s.traj, width, "fixed", source=s.ident)
        for w in windows:
            sub = s.traj.slice(w.start, w.stop)
            labels[(s.ident, w.start)] = identify_local(sub, lib, cfg, w.take(s.derivatives),
                                                        window_id=f"{s.ident}:{w.start}")
        for cur, nxt in zip(windows[:-1], windows[1:]):
            lab = labels.get((s.ident, nxt.start))
            if lab is None or not np.all(np.isfinite(lab.coef)):
                skipped += 1
                continue
            nxt_traj = s.traj.slice(nxt.start, nxt.stop)
            theta = evaluate_library(lib, nxt_traj.states, nxt_traj.controls)
            inputs = app1_features(s.traj.slice(cur.start, cur.stop))
            for j in range(lib.n_states):
                per_eq[j].append(LabeledWindow(
                    inputs, lab.coef[:, j], theta, nxt.take(s.derivatives)[:, j],
                    key=(s.ident, cur.start, s.split, label_digest(lab.coef))))
    if skipped:
        log.info("app1 assembly skipped %d windows with unusable labels", skipped)
    return App1Data(lib, per_eq, labels, skipped)


# ---------------------------------------------------------------- Lorenz

def generate_lorenz(count: int, seed: int, t_end: float = 20.0, dt: float = 0.01,
                    bounds: dict | None = None, fractions: dict | None = None,
                    tag: str = "") -> list[Sample]:
    """Sobol-sampled Lorenz runs; a distinct ``tag`` gives an independent point set."""
    bounds = {**LORENZ_BOUNDS, **(bounds or {})}
    fractions = fractions or {"train": 0.7, "valid": 0.3}
    keys = ("sigma", "rho", "beta", "x0", "y0", "z0")
    stream = f"lorenz{'/' + tag if tag else ''}"
    pts = sobol_sample(6, count, [bounds[k] for k in keys], seed=subseed(seed, f"{stream}/sobol"))
    splits = split_labels(count, fractions, substream(seed, f"{stream}/split"))
    n_steps = int(round(t_end / dt))
    t_grid = np.arange(n_steps) * dt
    out = []
    for i, (sg, rh, bt, x0, y0, z0) in enumerate(pts):
        traj = simulate_lorenz(LorenzParams(sg, rh, bt), x0, y0, z0, t_grid, seed=seed)
        ident = f"lz{tag}{i:04d}"
        traj.provenance["id"] = ident
        out.append(Sample(ident, traj, splits[i], analytic_derivatives(traj)))
    return out


def lorenz_labels(traj: Trajectory, noise: float, seed: int, tv_reg_scale: float = 1e-4,
                  clean_derivatives=None):
    """Noisy copy of ``traj`` plus denoised states, derivatives and fitted parameters.

    Clean data (``noise == 0``) uses the supplied exact derivatives; noisy data
    goes through TV differentiation and trapezoidal re-integration.
    """
    if noise == 0:
        derivs = clean_derivatives if clean_derivatives is not None else \
            central_difference_nonuniform(traj.states, traj.times)
        states = traj.states
        noisy = traj
    else:
        noisy = add_noise(traj, NoiseSpec(noise, seed))
        derivs = np.empty_like(noisy.states)
        states = np.empty_like(noisy.states)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for j in range(3):
                col = noisy.states[:, j]
                res = tv_differentiate(col, noisy.times, tv_reg_scale * float(np.std(col)))
                derivs[:, j] = res.derivative
                states[:, j] = cumtrapz(res.derivative, noisy.times, col[0])
    params = identify_lorenz_constrained(states, derivs)
    return noisy, states, derivs, np.array(params)


def lorenz_regression(states: np.ndarray, derivs: np.ndarray, which: str):
    """Regressor and target columns of the constrained fit for one parameter."""
    x, y, z = states.T
    if which == "sigma":
        return (y - x)[:, None], derivs[:, 0]
    if which == "rho":
        return x[:, None], derivs[:, 1] + y + x * z
    if which == "beta":
        return z[:, None], x * y - derivs[:, 2]
    raise ValueError(f"unknown Lorenz parameter {which!r}")


@dataclass
class App2Data:
    noise: float
    samples: dict[str, dict[str, list[LabeledWindow]]]   # target -> split -> windows
    fitted: dict[str, np.ndarray]                         # id -> fitted (sigma, rho, beta)
    truth: dict[str, np.ndarray]


def lorenz_inputs(traj_states: np.ndarray, times: np.ndarray) -> np.ndarray:
    return np.hstack([times[:, None], traj_states])


def assemble_app2(samples: list[Sample], noise: float, seed: int, targets=("rho",),
                  train_sizes=None, eval_sizes=(100, 300, 500, 700, 900), t_split: float = 10.0,
                  tv_reg_scale: float = 1e-4) -> App2Data:
    """Expanding-window samples for single-parameter Lorenz models.

    Training/validation windows are prefixes of the ``t < t_split`` part; the
    test split gets interpolation prefixes and extrapolation windows that start
    at ``t_split``.  Targets are the parameters fitted on the denoised data;
    test targets are the true parameters.
    """
    targets = (targets,) if isinstance(targets, str) else tuple(targets)
    for target in targets:
        if target not in LORENZ_PARAMS:
            raise ValueError(f"target must be one of {LORENZ_PARAMS}")
    out: dict[str, dict[str, list[LabeledWindow]]] = {t: {} for t in targets}
    fitted, truth = {}, {}
    for s in samples:
        n_int = int(np.searchsorted(s.traj.times, t_split - 1e-9))
        p = s.traj.provenance["parameters"]
        truth[s.ident] = np.array([p["sigma"], p["rho"], p["beta"]])
        head = s.traj.slice(0, n_int)
        if s.split in ("train", "valid"):
            noisy, states, derivs, params = lorenz_labels(
                head, noise, subseed(seed, f"noise/{s.ident}/{noise}"), tv_reg_scale,
                s.derivatives[:n_int] if s.derivatives is not None else None)
            fitted[s.ident] = params
            inputs = lorenz_inputs(noisy.states, noisy.times)
            sizes = train_sizes if s.split == "train" and train_sizes is not None else eval_sizes
            for target in targets:
                col = LORENZ_PARAMS.index(target)
                theta, rhs = lorenz_regression(states, derivs, target)
                bucket = out[target].setdefault(s.split, [])
                for k in sizes:
                    if k <= n_int:
                        bucket.append(LabeledWindow(inputs[:k], params[col:col + 1], theta[:k],
                                                    rhs[:k], key=(s.ident, 0, k, "interp")))
            continue
        noisy = add_noise(head, NoiseSpec(noise, subseed(seed, f"noise/{s.ident}/{noise}"))) \
            if noise else head
        inputs = lorenz_inputs(noisy.states, noisy.times)
        tail = s.traj.slice(n_int, len(s.traj))
        tail_noisy = add_noise(tail, NoiseSpec(noise, subseed(seed, f"noise-tail/{s.ident}/{noise}"))) \
            if noise else tail
        tail_inputs = lorenz_inputs(tail_noisy.states, tail_noisy.times)
        for target in targets:
            col = LORENZ_PARAMS.index(target)
            label = truth[s.ident][col:col + 1]
            for k in eval_sizes:
                if k <= n_int:
                    out[target].setdefault("interp", []).append(LabeledWindow(
                        inputs[:k], label, key=(s.ident, 0, k, "interp")))
                if k <= len(tail):
                    out[target].setdefault("extrap", []).append(LabeledWindow(
                        tail_inputs[:k], label, key=(s.ident, n_int, k, "extrap")))
    return App2Data(noise, out, fitted, truth)


# ---------------------------------------------------------------- heat

@dataclass
class HeatDraw:
    center: float
    ratio: float
    alpha_ref: float


def draw_heat_characteristics(count: int, seed: int, tag: str = "train") -> list[HeatDraw]:
    rng = substream(seed, f"heat/{tag}/normal")
    alpha = np.clip(rng.normal(1e-6, 5e-8, count), 8e-7, 1.2e-6)
    ratio = np.clip(rng.normal(60.0, 8.0, count), 40.0, 80.0)
    centers = sobol_sample(1, count, [(0.001, 0.009)], seed=subseed(seed, f"heat/{tag}/sobol"))[:, 0]
    return [HeatDraw(float(g), float(r), float(a)) for g, r, a in zip(centers, ratio, alpha)]


def generate_heat(count: int, seed: int, tag: str = "train", fractions: dict | None = None,
                  base: HeatProblem | None = None) -> list[Sample]:
    base = base or HeatProblem()
    draws = draw_heat_characteristics(count, seed, tag)
    if fractions is None:
        splits = [tag] * count
    else:
        splits = split_labels(count, fractions, substream(seed, f"heat/{tag}/split"))
    out = []
    for i, d in enumerate(draws):
        prob = HeatProblem(**{**base.__dict__, "center": d.center, "ratio": d.ratio,
                              "alpha_ref": d.alpha_ref})
        traj = simulate_heat_1d(prob)
        probes = probe_series(traj, prob)
        out.append(Sample(f"heat-{tag}{i:04d}", traj, splits[i],
                          extra={"probes": probes, "draw": d, "problem": prob}))
    return out


def heat_rows(sample: Sample, steps: int, noise: float = 0.0, seed: int = 0) -> np.ndarray:
    """Input rows ``(z, t, T)`` for both probes over time steps ``1..steps``."""
    times = sample.traj.times
    blocks = []
    for k, (z, series) in enumerate(sorted(sample.extra["probes"].items())):
        series = series.copy()
        if noise:
            rng = substream(seed, f"heat-noise/{sample.ident}/{k}/{noise}")
            series = series + noise * series.std() * rng.standard_normal(series.size)
        sel = slice(1, steps + 1)
        blocks.append(np.column_stack([np.full(steps, z), times[sel], series[sel]]))
    return np.vstack(blocks)


def assemble_app3(samples: list[Sample], noise: float, seed: int, sizes=(50, 100, 150, 200)) -> dict[str, list[LabeledWindow]]:
    out: dict[str, list[LabeledWindow]] = {}
    for s in samples:
        d: HeatDraw = s.extra["draw"]
        target = np.array([d.center, d.ratio, d.alpha_ref])
        full = heat_rows(s, max(sizes), noise, seed)
        half = full.shape[0] // 2
        for k in sizes:
            rows = np.vstack([full[:k], full[half:half + k]])
            out.setdefault(s.split, []).append(LabeledWindow(rows, target, key=(s.ident, 0, k)))
    return out


def fit_scaling(model, items: list[LabeledWindow]) -> None:
    """Set the model's standardisation buffers from a training split."""
    rows = np.vstack([w.inputs for w in items])
    targets = np.stack([w.target for w in items])
    model.set_scaling(rows.mean(axis=0), rows.std(axis=0), targets.mean(axis=0), targets.std(axis=0))


__all__ = [
    "App1Data", "App2Data", "HeatDraw", "LORENZ_BOUNDS", "LORENZ_PARAMS", "LV_BOUNDS", "Sample",
    "app1_features", "assemble_app1", "assemble_app2", "assemble_app3", "draw_heat_characteristics",
    "fit_scaling", "generate_heat", "generate_lorenz", "generate_lv", "heat_rows", "label_digest",
    "lorenz_inputs", "lorenz_labels", "lorenz_regression", "split_labels",
]
