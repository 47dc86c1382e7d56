"""Report figures rendered to PNG with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _f(v) -> float:
    try:
        return float(v)
    except (TypeError, ValueError):
        return float("nan")


def training_curves(rows: list[dict], path: Path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ep = [int(r["epoch"]) for r in rows]
        ax.plot(ep, [_f(r["train_loss"]) for r in rows], label="train")
        ax.plot(ep, [_f(r["valid_loss"]) for r in rows], label="validation")
        ode = [_f(r.get("valid_ode")) for r in rows]
        if any(v == v and v != 0 for v in ode):
            ax.plot(ep, ode, ls="--", label="validation ODE residual")
        if rows and all(_f(r["train_loss"]) > 0 for r in rows):
            ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        if title:
            ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def metric_by_horizon(rows: list[dict], path: Path, metric: str = "mape") -> Path:
    """Mean error per horizon, one line per (method, channel)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        series: dict[tuple, list] = {}
        for r in rows:
            series.setdefault((r["method"], r["channel"]), []).append((int(r["horizon"]), _f(r["mean"])))
        for (method, channel), pts in sorted(series.items()):
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{method} [{channel}]")
        ax.set_xlabel("horizon (sub-domains)")
        ax.set_ylabel(f"mean {metric.upper()} (%)")
        if rows and all(_f(r["mean"]) > 0 for r in rows):
            ax.set_yscale("log")
        ax.legend()
        return _save(fig, path)


def r2_by_quantity(rows: list[dict], path: Path) -> Path:
    """R^2 against window size, one line per (section, parameter, noise)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        series: dict[tuple, list] = {}
        for r in rows:
            if not str(r["size"]).isdigit():
                continue
            key = (r["section"], r["parameter"], _f(r["noise"]))
            series.setdefault(key, []).append((int(r["size"]), _f(r["r2"])))
        for (section, param, noise), pts in sorted(series.items()):
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                    label=f"{param} {section} xi={noise:g}")
        ax.set_xlabel("rows in window")
        ax.set_ylabel("R$^2$")
        ax.legend(ncol=2)
        return _save(fig, path)


__all__ = ["metric_by_horizon", "r2_by_quantity", "training_curves"]
