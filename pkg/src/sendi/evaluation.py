"""Identify-then-extrapolate forecasting and the accuracy metrics used to report it."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import DivergenceError, Trajectory, integrate
from .signal import Window
from .sindy import FeatureLibrary, evaluate_library


class UndefinedMetricError(ValueError):
    """The metric has no value for the given inputs."""


@dataclass
class MetricValue:
    value: float
    excluded: int = 0


def _pair(pred, truth):
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"prediction/truth length mismatch {p.size} vs {t.size}")
    return p, t


def mape_detail(pred, truth) -> MetricValue:
    p, t = _pair(pred, truth)
    ok = t != 0
    if not ok.any():
        raise UndefinedMetricError("MAPE undefined: every truth value is zero")
    return MetricValue(float(np.mean(100.0 * np.abs(p[ok] - t[ok]) / np.abs(t[ok]))), int((~ok).sum()))


def mape(pred, truth) -> float:
    """Mean absolute percentage error; points with zero truth are excluded."""
    return mape_detail(pred, truth).value


def smape_detail(pred, truth) -> MetricValue:
    p, t = _pair(pred, truth)
    denom = np.abs(p) + np.abs(t)
    ok = denom > 0
    if not ok.any():
        raise UndefinedMetricError("sMAPE undefined: prediction and truth are all zero")
    return MetricValue(float(np.mean(200.0 * np.abs(p[ok] - t[ok]) / denom[ok])), int((~ok).sum()))


def smape(pred, truth) -> float:
    """Symmetric MAPE in [0, 200]."""
    return smape_detail(pred, truth).value


def r2(pred, truth) -> float:
    p, t = _pair(pred, truth)
    if t.size < 2:
        raise UndefinedMetricError("R^2 needs at least two points")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("R^2 undefined for constant truth")
    return 1.0 - float(np.sum((t - p) ** 2)) / ss_tot


def size_weights(sizes) -> np.ndarray:
    inv = 1.0 / np.asarray(sizes, dtype=np.float64)
    return inv / inv.sum()


def weighted_r2(scores, sizes) -> float:
    """Inverse-size weighted mean of per-size R^2 scores."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    sizes = np.asarray(sizes, dtype=np.float64).ravel()
    if scores.size == 0:
        raise UndefinedMetricError("weighted R^2 of an empty score list")
    if scores.shape != sizes.shape:
        raise ValueError("scores and sizes must align")
    if np.any(sizes <= 0):
        raise ValueError("sizes must be positive")
    return float(size_weights(sizes) @ scores)


# ------------------------------------------------------------------ forecasting

@dataclass
class ForecastResult:
    predicted: np.ndarray | None
    truth: np.ndarray
    times: np.ndarray
    mape: list[float] = field(default_factory=list)
    smape: list[float] = field(default_factory=list)
    diverged: bool = False
    horizon: int = 1
    window_id: str = ""
    note: str = ""


def forecast_xi(xi: np.ndarray, traj: Trajectory, window: Window, lib: FeatureLibrary,
                horizon: int = 1, bound_factor: float = 1e3, rtol: float = 1e-8,
                atol: float = 1e-300, start: str = "final",
                max_steps: int = 10_000) -> ForecastResult:
    """Integrate ``x' = Theta(x, u) xi`` over the ``horizon`` sub-domains after ``window``.

    ``start="final"`` launches from the window's last observed state;
    ``start="next"`` launches from the first sample of the following
    sub-domain.  Either way the comparison covers the ``horizon * length``
    samples after the window.  A run that needs more than ``max_steps``
    adaptive steps (stiff or near-singular coefficients) counts as diverged.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(len(lib), lib.n_states)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if start not in ("final", "next"):
        raise ValueError(f"unknown start policy {start!r}")
    first, stop = window.stop, window.stop + horizon * window.length
    if stop > len(traj):
        raise ValueError(f"trajectory too short for horizon {horizon} after window {window}")
    lead = 1 if start == "final" else 0
    grid = traj.times[first - lead:stop]
    x0 = traj.states[first - lead]
    times = traj.times[first:stop]
    truth = traj.states[first:stop]
    controls = traj.controls
    exps = lib.exponent_matrix
    steady = controls is None or bool(np.all(controls == controls[0]))
    u0 = np.empty(0) if controls is None else controls[0]

    def control_at(t):
        if steady:
            return u0
        return np.array([np.interp(t, traj.times, col) for col in controls.T])

    def rhs(t, s):
        row = np.concatenate([s, control_at(t)])
        if exps is not None:
            return np.prod(row ** exps, axis=1) @ xi
        return (evaluate_library(lib, row[None, :lib.n_states], row[None, lib.n_states:] if
                                 controls is not None else None) @ xi)[0]

    bound = bound_factor * float(np.max(np.abs(truth)))
    wid = f"{window.source}:{window.start}"
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            pred = integrate(rhs, grid, x0, rtol=rtol, atol=atol, bound=bound,
                             max_steps=max_steps)[lead:]
    except DivergenceError as exc:
        return ForecastResult(None, truth, times, diverged=True, horizon=horizon, window_id=wid,
                              note=str(exc))
    if not np.all(np.isfinite(pred)) or np.max(np.abs(pred)) > bound:
        return ForecastResult(None, truth, times, diverged=True, horizon=horizon, window_id=wid)
    mapes, smapes = [], []
    for j in range(truth.shape[1]):
        try:
            mapes.append(mape(pred[:, j], truth[:, j]))
        except UndefinedMetricError:
            mapes.append(math.nan)
        smapes.append(smape(pred[:, j], truth[:, j]) if np.any(pred[:, j] != 0) or np.any(truth[:, j] != 0)
                      else 0.0)
    return ForecastResult(pred, truth, times, mapes, smapes, False, horizon, wid)


def forecast(model, traj: Trajectory, window: Window, lib: FeatureLibrary, horizon: int = 1,
             features: Callable[[Trajectory], np.ndarray] | None = None, **kw) -> ForecastResult:
    """Predict the next sub-domain's coefficients from ``window`` and extrapolate.

    ``model`` is a coefficient matrix, a callable ``rows -> coefficients`` or a
    sequence of per-equation models each returning one coefficient column.
    """
    if isinstance(model, np.ndarray):
        xi = model
    else:
        sub = traj.slice(window.start, window.stop)
        rows = features(sub) if features is not None else np.hstack(
            [sub.states] + ([sub.controls] if sub.controls is not None else []))
        if isinstance(model, (list, tuple)):
            xi = np.column_stack([np.asarray(m.predict(rows)).ravel() for m in model])
        else:
            xi = np.asarray(model(rows))
        if xi.size != len(lib) * lib.n_states:
            raise ValueError(f"model produced {xi.size} coefficients, library needs "
                             f"{len(lib) * lib.n_states}")
    return forecast_xi(xi, traj, window, lib, horizon, **kw)


# ------------------------------------------------------------------ summaries

@dataclass
class MetricSummary:
    mean: float
    median: float
    p90: float
    divergence_pct: float
    outliers_removed: int
    count: int


def summarize(values, diverged=None, policy: str = "mape", z_threshold: float = 3.0) -> MetricSummary:
    """Population statistics of per-forecast errors.

    ``values`` holds one error per forecast (``nan`` or ``inf`` for diverged
    runs, or give ``diverged`` explicitly).  Under the MAPE policy outliers
    with ``|z| > z_threshold`` on log-error are dropped first; the sMAPE policy
    keeps every finite value.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise UndefinedMetricError("cannot summarise an empty population")
    div = ~np.isfinite(vals) if diverged is None else (np.asarray(diverged, bool) | ~np.isfinite(vals))
    divergence_pct = 100.0 * div.sum() / vals.size
    pop = np.sort(vals[~div])
    removed = 0
    if policy == "mape" and pop.size > 2:
        logs = np.log(np.maximum(pop, 1e-300))
        sd = logs.std()
        if sd > 0:
            keep = np.abs((logs - logs.mean()) / sd) <= z_threshold
            removed = int((~keep).sum())
            pop = pop[keep]
    elif policy not in ("mape", "smape"):
        raise ValueError(f"unknown policy {policy!r}")
    if pop.size == 0:
        return MetricSummary(math.nan, math.nan, math.nan, divergence_pct, removed, 0)
    return MetricSummary(float(pop.mean()), float(np.median(pop)),
                         float(np.percentile(pop, 90, method="linear")), divergence_pct,
                         removed, int(pop.size))


TABLE_FIELDS = ["window", "horizon", "channel", "method", "metric", "mean", "median", "p90",
                "divergence_pct", "outliers_removed", "count"]


def results_table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=TABLE_FIELDS, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def r2_quantity_csv(rows: list[dict]) -> str:
    """Rows of ``{section, parameter, noise, size, r2}`` plus weighted summaries."""
    buf = io.StringIO()
    fields = ["section", "parameter", "noise", "size", "r2"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


__all__ = [
    "ForecastResult", "MetricSummary", "MetricValue", "TABLE_FIELDS", "UndefinedMetricError",
    "forecast", "forecast_xi", "mape", "mape_detail", "r2", "r2_quantity_csv",
    "results_table_csv", "size_weights", "smape", "smape_detail", "summarize", "weighted_r2",
]
