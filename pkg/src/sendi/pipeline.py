"""Experiment orchestration behind the command line: generate, train, evaluate, identify, report."""

from __future__ import annotations

import csv
import io
import json
import logging
import shutil
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .datasets import (LORENZ_PARAMS, Sample, app1_features, assemble_app1, assemble_app2,
                       assemble_app3, fit_scaling, generate_heat, generate_lorenz, generate_lv)
from .dynamics import HeatProblem, LotkaVolterraParams, read_trajectory, save_trajectory
from .evaluation import (UndefinedMetricError, forecast_xi, r2, r2_quantity_csv,
                         results_table_csv, summarize, weighted_r2)
from .models import ModelConfig, build_model, deserialize, serialize
from .nn import ConfigurationError
from .signal import make_windows
from .sindy import FeatureLibrary, StlsqConfig, load_labels, save_labels
from .store import (StalenessError, check_manifest, load_windows, read_manifest, save_windows,
                    verify_files, write_manifest)
from .training import LabeledWindow, TrainingPlan, train

log = logging.getLogger(__name__)

HEAT_OUTPUTS = ("center", "ratio", "alpha_ref")


class OutputExistsError(FileExistsError):
    pass


class UsageError(ValueError):
    pass


def prepare_dir(path: Path, force: bool, keep: bool = False) -> Path:
    """Create ``path``; an existing non-empty directory needs ``force`` (or ``keep``)."""
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        if keep:
            return path
        if not force:
            raise OutputExistsError(f"{path} already exists; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def layout(config: dict) -> dict[str, Path]:
    root = Path(config["output"])
    return {"root": root, "data": root / "data", "train": root / "train",
            "eval": root / "eval", "report": root / "report"}


def noise_tag(level: float) -> str:
    return f"xi{level:g}"


def library_for(config: dict) -> FeatureLibrary:
    lib = config.get("library", {})
    return FeatureLibrary.polynomial(["x", "y"], ["c"], lib.get("degree", 3),
                                     lib.get("include_constant", True))


def stlsq_for(config: dict) -> StlsqConfig:
    s = config.get("solver", {})
    return StlsqConfig(s.get("threshold", 0.05), s.get("ridge", 1e-10), s.get("max_iter", 20))


def _kind(config: dict) -> str:
    return config["system"]["kind"]


# ------------------------------------------------------------------ generate

def _bounds(config: dict) -> dict | None:
    b = config["sampling"].get("bounds")
    return {k: tuple(v) for k, v in b.items()} if b else None


def simulate(config: dict) -> list[Sample]:
    """All trajectories the configuration asks for, in a fixed order."""
    seed, sys_, smp = config["seed"], config["system"], config["sampling"]
    kind = _kind(config)
    if kind == "lotka_volterra":
        p = sys_.get("parameters", {})
        params = LotkaVolterraParams(p.get("alpha", 0.5), p.get("beta", 0.025),
                                     p.get("delta", 0.5), p.get("gamma", 0.005))
        return generate_lv(smp["count"], seed, sys_.get("t_end", 30.0), sys_.get("dt", 0.1),
                           _bounds(config), smp.get("fractions"), params)
    if kind == "lorenz":
        args = (seed, sys_.get("t_end", 20.0), sys_.get("dt", 0.01), _bounds(config))
        samples = generate_lorenz(smp["count"], *args, smp.get("fractions"))
        if smp.get("test_count", 0):
            samples += generate_lorenz(smp["test_count"], *args, {"test": 1.0}, tag="t")
        return samples
    base = HeatProblem(**sys_.get("parameters", {}))
    samples = generate_heat(smp["count"], seed, "train", smp.get("fractions"), base)
    if smp.get("test_count", 0):
        samples += generate_heat(smp["test_count"], seed, "test", None, base)
    return samples


def generate(config: dict, force: bool = False, dry_run: bool = False) -> dict:
    paths = layout(config)
    ch, dh = cfgmod.config_hash(config), cfgmod.data_hash(config)
    if dry_run:
        return {"command": "generate", "output": str(paths["data"]), "config_hash": ch,
                "data_hash": dh, "trajectories": config["sampling"]["count"]
                + config["sampling"].get("test_count", 0), "noise": config["noise"]}
    out = prepare_dir(paths["data"], force)
    samples = simulate(config)
    kind = _kind(config)
    splits = {}
    traj_dir = out / "trajectories"
    traj_dir.mkdir()
    for s in samples:
        splits[s.ident] = s.split
        if kind == "heat":
            probes = s.extra["probes"]
            d = s.extra["draw"]
            lines = ["t," + ",".join(f"T@z={z!r}" for z in sorted(probes))]
            for k, t in enumerate(s.traj.times):
                lines.append(",".join([repr(float(t))] + [repr(float(probes[z][k])) for z in sorted(probes)]))
            (traj_dir / f"{s.ident}.csv").write_text("\n".join(lines) + "\n")
            (traj_dir / f"{s.ident}.json").write_text(json.dumps(
                {"id": s.ident, "center": d.center, "ratio": d.ratio, "alpha_ref": d.alpha_ref,
                 "config_hash": ch}, indent=2, sort_keys=True))
        else:
            s.traj.provenance["config_hash"] = ch
            s.traj.provenance["split"] = s.split
            save_trajectory(s.traj, traj_dir / f"{s.ident}.csv", s.derivatives)
    counts: dict[str, int] = {}
    if kind == "lotka_volterra":
        lib = library_for(config)
        data = assemble_app1(samples, lib, stlsq_for(config), config["evaluation"].get("window", 10))
        label_dir = out / "labels"
        label_dir.mkdir()
        for s in samples:
            keys = sorted(k for k in data.labels if k[0] == s.ident)
            save_labels(label_dir / f"{s.ident}.json", lib, [data.labels[k] for k in keys])
        for j, items in data.samples.items():
            for split in ("train", "valid", "test"):
                chosen = [w for w in items if w.key[2] == split]
                save_windows(out / "windows" / f"eq{j}" / f"{split}.bin", chosen, {"config_hash": ch})
                counts[f"eq{j}/{split}"] = len(chosen)
    elif kind == "lorenz":
        ev = config["evaluation"]
        rows = []
        for level in config["noise"]:
            data = assemble_app2(samples, level, config["seed"], ev.get("targets", ["rho"]),
                                 ev.get("train_sizes"), ev.get("sizes", (100, 300, 500, 700, 900)),
                                 config["system"].get("t_split", 10.0),
                                 config["solver"].get("tv_reg_scale", 1e-4))
            for target, by_split in data.samples.items():
                for split, items in by_split.items():
                    save_windows(out / "windows" / noise_tag(level) / target / f"{split}.bin", items,
                                 {"config_hash": ch})
                    counts[f"{noise_tag(level)}/{target}/{split}"] = len(items)
            for ident, fit in sorted(data.fitted.items()):
                rows.append([level, ident] + [repr(float(v)) for v in fit]
                            + [repr(float(v)) for v in data.truth[ident]])
        header = "noise,id,sigma_fit,rho_fit,beta_fit,sigma,rho,beta\n"
        (out / "labels.csv").write_text(header + "".join(",".join(map(str, r)) + "\n" for r in rows))
    else:
        sizes = config["evaluation"].get("sizes", (50, 100, 150, 200))
        for level in config["noise"]:
            for split, items in assemble_app3(samples, level, config["seed"], sizes).items():
                save_windows(out / "windows" / noise_tag(level) / f"{split}.bin", items,
                             {"config_hash": ch})
                counts[f"{noise_tag(level)}/{split}"] = len(items)
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return write_manifest(out, {"kind": "dataset", "config_hash": ch, "data_hash": dh,
                                "splits": splits, "windows": counts})


# ------------------------------------------------------------------ train

@dataclass
class Task:
    name: str
    windows: Path          # directory holding train.bin / valid.bin
    model: dict
    role: str = "model"    # model | baseline


def tasks(config: dict) -> list[Task]:
    data = layout(config)["data"]
    kind = _kind(config)
    model = config["model"]
    out = []
    if kind == "lotka_volterra":
        lib = library_for(config)
        names = lib.names
        baseline = config["evaluation"].get("baseline")
        for j, state in enumerate(lib.channels[:lib.n_states]):
            outputs = [f"d{state}/{n}" for n in names]
            out.append(Task(f"eq{j}", data / "windows" / f"eq{j}", {**model, "outputs": outputs}))
            if baseline:
                out.append(Task(f"eq{j}-baseline", data / "windows" / f"eq{j}",
                                {**baseline, "outputs": outputs}, role="baseline"))
    elif kind == "lorenz":
        for level in config["noise"]:
            for target in config["evaluation"].get("targets", ["rho"]):
                out.append(Task(f"{noise_tag(level)}/{target}", data / "windows" / noise_tag(level) / target,
                                {**model, "outputs": [target]}))
    else:
        for level in config["noise"]:
            out.append(Task(noise_tag(level), data / "windows" / noise_tag(level),
                            {**model, "outputs": list(HEAT_OUTPUTS)}))
    return out


def _for_model(items: list[LabeledWindow], model_cfg: ModelConfig) -> list[LabeledWindow]:
    if model_cfg.kind != "oasis":
        return items
    # The single-sample baseline sees only the window's latest row.
    return [LabeledWindow(w.inputs[-1:], w.target, w.theta, w.dxdt, w.key) for w in items]


def plan_for(config: dict, train_items: list[LabeledWindow]) -> TrainingPlan:
    t = dict(config["training"])
    if t.get("ode_scale", 1.0) == "auto":
        vals = [np.mean(np.abs(w.dxdt)) for w in train_items if w.dxdt is not None]
        t["ode_scale"] = float(np.mean(vals)) if vals and np.mean(vals) > 0 else 1.0
    return TrainingPlan(**t, seed=config["seed"])


def check_data(config: dict) -> dict:
    data = layout(config)["data"]
    manifest = check_manifest(data, "data_hash", cfgmod.data_hash(config), "dataset")
    verify_files(data, manifest)
    return manifest


def train_task(config: dict, task: Task, run_dir: Path, resume: bool = False):
    mcfg = ModelConfig.from_dict(task.model)
    train_items = _for_model(load_windows(task.windows / "train.bin"), mcfg)
    valid_items = _for_model(load_windows(task.windows / "valid.bin"), mcfg)
    model = build_model(mcfg)
    fit_scaling(model, train_items)
    plan = plan_for(config, train_items)
    result = train(model, plan, train_items, valid_items, run_dir=run_dir, resume=resume)
    return model, plan, result


def train_all(config: dict, force: bool = False, resume: bool = False, dry_run: bool = False) -> dict:
    paths = layout(config)
    th = cfgmod.training_hash(config)
    if dry_run:
        resolved = []
        for task in tasks(config):
            t = dict(config["training"])
            resolved.append({"task": task.name, "role": task.role, "model": task.model,
                             "plan": {**t, "seed": config["seed"],
                                      "total_epochs": sum(ep for _, ep in t["stages"])}})
        return {"command": "train", "output": str(paths["train"]), "training_hash": th,
                "tasks": resolved}
    check_data(config)
    root = paths["train"]
    if resume and root.exists():
        check_manifest(root, "training_hash", th, "training run")
    else:
        prepare_dir(root, force)
    summary = {}
    for task in tasks(config):
        run_dir = root / task.name
        run_dir.mkdir(parents=True, exist_ok=True)
        log.info("training %s", task.name)
        t0 = time.perf_counter()
        _, plan, result = train_task(config, task, run_dir, resume)
        summary[task.name] = {"best_valid": result.best_valid, "best_epoch": result.best_epoch,
                              "epochs_run": result.epochs_run, "seconds": time.perf_counter() - t0,
                              "ode_scale": plan.ode_scale}
        write_manifest(run_dir, {"kind": "run", "task": task.name, "role": task.role,
                                 "training_hash": th, "config_hash": cfgmod.config_hash(config),
                                 "data_hash": cfgmod.data_hash(config),
                                 "library_hash": library_for(config).hash()
                                 if _kind(config) == "lotka_volterra" else None})
    (root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return write_manifest(root, {"kind": "training", "training_hash": th,
                                 "config_hash": cfgmod.config_hash(config),
                                 "data_hash": cfgmod.data_hash(config)})


def load_run(run_dir: Path):
    return deserialize((Path(run_dir) / "best.ckpt").read_bytes())


# ------------------------------------------------------------------ evaluate

def _predict(model, rows: np.ndarray) -> np.ndarray:
    if model.config.kind == "oasis":
        rows = rows[-1:]
    return np.asarray(model.predict(rows)).ravel()


def evaluate_app1(config: dict, runs: dict) -> list[dict]:
    paths = layout(config)
    lib = library_for(config)
    ev = config["evaluation"]
    width = ev.get("window", 10)
    horizons = ev.get("horizons", [1])
    splits = read_manifest(paths["data"])["splits"]
    methods = {"label-oracle": None}
    for suffix in ("", "-baseline"):
        names = [f"eq{j}{suffix}" for j in range(lib.n_states)]
        if all(n in runs for n in names):
            methods[runs[names[0]].config.kind] = [runs[n] for n in names]
    errors = {(m, h, metric, c): [] for m in methods for h in horizons
              for metric in ("mape", "smape") for c in range(lib.n_states)}
    for ident in sorted(i for i, s in splits.items() if s == "test"):
        traj, derivs = read_trajectory(paths["data"] / "trajectories" / f"{ident}.csv")
        windows = make_windows(traj, width, "fixed", source=ident)
        _, labels = load_labels(paths["data"] / "labels" / f"{ident}.json")
        for k, win in enumerate(windows[:-1]):
            feats = app1_features(traj.slice(win.start, win.stop))
            for h in horizons:
                if win.stop + h * width > len(traj):
                    continue
                for method, models in methods.items():
                    if models is None:
                        xi = labels[k + 1].coef
                    else:
                        xi = np.column_stack([_predict(m, feats) for m in models])
                    res = forecast_xi(xi, traj, win, lib, h, ev.get("bound_factor", 1e3),
                                      start=ev.get("forecast_start", "final"),
                                      max_steps=ev.get("max_steps", 10_000))
                    for c in range(lib.n_states):
                        for metric in ("mape", "smape"):
                            val = np.nan if res.diverged else getattr(res, metric)[c]
                            errors[(method, h, metric, c)].append(val)
    rows = []
    for (method, h, metric, c), vals in errors.items():
        if not vals:
            continue
        s = summarize(vals, policy=metric, z_threshold=ev.get("z_threshold", 3.0))
        rows.append({"window": width, "horizon": h, "channel": lib.channels[c], "method": method,
                     "metric": metric, "mean": s.mean, "median": s.median, "p90": s.p90,
                     "divergence_pct": s.divergence_pct, "outliers_removed": s.outliers_removed,
                     "count": s.count})
    return rows


def _r2_rows(section: str, name: str, level: float, items: list[LabeledWindow], preds: np.ndarray,
             col: int = 0) -> list[dict]:
    rows = []
    sizes = sorted({w.rows for w in items})
    scores = []
    for n in sizes:
        idx = [i for i, w in enumerate(items) if w.rows == n]
        truth = np.array([items[i].target[col] for i in idx])
        try:
            score = r2(preds[idx, col], truth)
        except UndefinedMetricError:
            score = float("nan")
        scores.append(score)
        rows.append({"section": section, "parameter": name, "noise": level, "size": n, "r2": score})
    finite = [(s, n) for s, n in zip(scores, sizes) if np.isfinite(s)]
    if finite:
        rows.append({"section": section, "parameter": name, "noise": level, "size": "weighted",
                     "r2": weighted_r2([s for s, _ in finite], [n for _, n in finite])})
    truth_all = np.array([w.target[col] for w in items])
    rows.append({"section": section, "parameter": name, "noise": level, "size": "pooled",
                 "r2": r2(preds[:, col], truth_all)})
    return rows


SECTION_NAMES = {"interp": "interpolation", "extrap": "extrapolation"}


def evaluate_sets(config: dict, runs: dict) -> list[dict]:
    rows = []
    for task in tasks(config):
        model = runs[task.name]
        sections = ("interp", "extrap") if _kind(config) == "lorenz" else ("test",)
        for section in sections:
            path = task.windows / f"{section}.bin"
            if not path.exists():
                continue
            items = load_windows(path)
            if not items:
                continue
            preds = np.stack([_predict(model, w.inputs) for w in items])
            level = float(task.name.split("/")[0][2:])
            for c, name in enumerate(task.model["outputs"]):
                rows += _r2_rows(SECTION_NAMES.get(section, section), name, level, items, preds, c)
    return rows


def evaluate(config: dict, force: bool = False, dry_run: bool = False) -> dict:
    paths = layout(config)
    ch = cfgmod.config_hash(config)
    if dry_run:
        return {"command": "evaluate", "output": str(paths["eval"]), "tasks": [t.name for t in tasks(config)]}
    check_data(config)
    check_manifest(paths["train"], "training_hash", cfgmod.training_hash(config), "training run")
    runs = {}
    for task in tasks(config):
        run_dir = paths["train"] / task.name
        manifest = read_manifest(run_dir)
        verify_files(run_dir, manifest)
        if _kind(config) == "lotka_volterra" and manifest.get("library_hash") != library_for(config).hash():
            raise StalenessError(f"{run_dir} was trained against a different feature library")
        runs[task.name] = load_run(run_dir)
    out = prepare_dir(paths["eval"], force)
    if _kind(config) == "lotka_volterra":
        rows = evaluate_app1(config, runs)
        text = results_table_csv(rows)
        name = "forecast_metrics.csv"
    else:
        rows = evaluate_sets(config, runs)
        text = r2_quantity_csv(rows)
        name = "r2_by_quantity.csv"
    (out / name).write_text(_stamp(text, ch))
    return write_manifest(out, {"kind": "evaluation", "config_hash": ch, "table": name,
                                "rows": len(rows)})


def _stamp(csv_text: str, ch: str) -> str:
    """Append a ``config_hash`` column to every CSV row."""
    lines = csv_text.splitlines()
    out = [lines[0] + ",config_hash"] + [ln + "," + ch for ln in lines[1:]]
    return "\n".join(out) + "\n"


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------------ identify

def read_window_csv(path: Path) -> tuple[list[str], np.ndarray]:
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r]
    if not rows:
        raise UsageError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: non-numeric value ({exc})") from None
    if data.size == 0:
        raise UsageError(f"{path} holds a header but no rows")
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ConfigurationError(f"{path}: ragged rows")
    return header, data


def identify(checkpoint: Path, window: Path, runs: int = 100) -> dict:
    import hashlib
    blob = Path(checkpoint).read_bytes()
    model = deserialize(blob)
    header, rows = read_window_csv(window)
    cfg = model.config
    if cfg.features and header != list(cfg.features):
        raise ConfigurationError(f"window columns {header} do not match the model's feature "
                                 f"layout {list(cfg.features)}")
    if rows.shape[1] != cfg.n_features:
        raise ConfigurationError(f"window has {rows.shape[1]} columns, model expects {cfg.n_features}")
    pred = model.predict(rows)
    times = []
    for _ in range(max(1, runs)):
        t0 = time.perf_counter()
        model.predict(rows)
        times.append(time.perf_counter() - t0)
    pred = np.asarray(pred).ravel()
    names = cfg.outputs or [f"out{i}" for i in range(pred.size)]
    return {"parameters": {n: float(v) for n, v in zip(names, pred)},
            "config_hash": cfg.hash(),
            "checkpoint": {"path": str(checkpoint), "sha256": hashlib.sha256(blob).hexdigest()},
            "window": {"path": str(window), "rows": int(rows.shape[0]), "columns": header,
                       "sha256": hashlib.sha256(Path(window).read_bytes()).hexdigest()},
            "inference_ms_median": 1e3 * statistics.median(times), "timed_runs": len(times)}


# ------------------------------------------------------------------ report

def report(config: dict, force: bool = False, dry_run: bool = False) -> dict:
    from . import plotting
    paths = layout(config)
    if dry_run:
        return {"command": "report", "output": str(paths["report"])}
    manifest = check_manifest(paths["eval"], "config_hash", cfgmod.config_hash(config), "evaluation")
    out = prepare_dir(paths["report"], force)
    figures = []
    for task in tasks(config):
        curves = paths["train"] / task.name / "curves.csv"
        if curves.exists():
            name = f"curves_{task.name.replace('/', '_')}.png"
            plotting.training_curves(read_csv(curves), out / name, title=task.name)
            figures.append(name)
    table = read_csv(paths["eval"] / manifest["table"])
    if manifest["table"] == "forecast_metrics.csv":
        for metric in ("mape", "smape"):
            name = f"{metric}_by_horizon.png"
            plotting.metric_by_horizon([r for r in table if r["metric"] == metric], out / name, metric)
            figures.append(name)
    else:
        name = "r2_by_quantity.png"
        plotting.r2_by_quantity(table, out / name)
        figures.append(name)
    shutil.copy(paths["eval"] / manifest["table"], out / manifest["table"])
    return write_manifest(out, {"kind": "report", "config_hash": cfgmod.config_hash(config),
                                "figures": figures})


__all__ = [
    "OutputExistsError", "Task", "UsageError", "evaluate", "generate", "identify", "layout",
    "library_for", "plan_for", "prepare_dir", "read_window_csv", "report", "simulate", "tasks",
    "train_all", "train_task",
]
