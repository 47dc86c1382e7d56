"""Composite losses and the staged, checkpointed training loop."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .models import SetModel, serialize
from .nn import Adam, NumericError, Tensor
from .seeding import substream

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    """Raised when the loss stops being finite; the model holds the last good weights."""

    def __init__(self, message: str, epoch: int, best_valid: float):
        super().__init__(f"{message} at epoch {epoch}; restored weights with valid loss {best_valid:.6g}")
        self.epoch = epoch
        self.best_valid = best_valid


@dataclass
class TrainingPlan:
    """Learning-rate ladder and loss weights.

    ``loss`` is ``"coefficients"`` (coefficient MSE + ODE residual + weight L1) or
    ``"characteristics"`` (one MSE per output + weight L1).  ``reg_norm``
    chooses between the plain sum of |W| and its mean over weight entries.
    """

    stages: list[tuple[float, int]] = field(default_factory=lambda: [(1e-3, 10)])
    batch_size: int = 64
    lambda0: float = 0.0
    lambda1: float = 0.0
    loss: str = "coefficients"
    reg_norm: str = "sum"
    ode_scale: float = 1.0
    window_policy: str = "fixed"
    validation_metric: str = "composite"
    seed: int = 0

    def __post_init__(self):
        self.stages = [(float(lr), int(ep)) for lr, ep in self.stages]
        for lr, ep in self.stages:
            if not lr > 0:
                raise ValueError("learning rates must be positive")
            if ep < 0:
                raise ValueError("epoch counts must be >= 0")
        if self.lambda0 < 0 or self.lambda1 < 0:
            raise ValueError("loss weights must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.loss not in ("coefficients", "characteristics"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.reg_norm not in ("sum", "mean"):
            raise ValueError(f"unknown reg_norm {self.reg_norm!r}")
        if self.validation_metric not in ("composite", "xi", "ode"):
            raise ValueError(f"unknown validation metric {self.validation_metric!r}")
        if not self.ode_scale > 0:
            raise ValueError("ode_scale must be positive")

    @property
    def total_epochs(self) -> int:
        return sum(ep for _, ep in self.stages)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [list(s) for s in self.stages]
        return d


@dataclass
class LabeledWindow:
    """One training sample: feature rows, target vector and optional ODE data.

    ``theta`` (rows x terms) and ``dxdt`` (rows,) describe the sub-domain the
    target coefficients belong to and feed the ODE-residual term.
    """

    inputs: np.ndarray
    target: np.ndarray
    theta: np.ndarray | None = None
    dxdt: np.ndarray | None = None
    key: tuple = ()

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64).ravel()
        if self.theta is not None:
            self.theta = np.asarray(self.theta, dtype=np.float64)
            self.dxdt = np.asarray(self.dxdt, dtype=np.float64).ravel()
            if self.theta.shape[0] != self.dxdt.size:
                raise ValueError("theta and derivative rows must align")

    @property
    def rows(self) -> int:
        return self.inputs.shape[0]


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    theta: np.ndarray | None
    dxdt: np.ndarray | None

    @classmethod
    def stack(cls, items: list[LabeledWindow]) -> "Batch":
        has_ode = all(w.theta is not None for w in items)
        return cls(np.stack([w.inputs for w in items]), np.stack([w.target for w in items]),
                   np.stack([w.theta for w in items]) if has_ode else None,
                   np.stack([w.dxdt for w in items]) if has_ode else None)


def make_batches(items: list[LabeledWindow], batch_size: int, rng: np.random.Generator | None = None,
                 ode_rows: bool = True) -> list[Batch]:
    """Group samples of equal row count (and ODE row count) and cut them into batches."""
    groups: dict[tuple, list[LabeledWindow]] = {}
    for w in items:
        k = (w.rows, None if w.theta is None else w.theta.shape)
        groups.setdefault(k, []).append(w)
    batches = []
    for key in sorted(groups, key=lambda k: (k[0], str(k[1]))):
        members = groups[key]
        order = rng.permutation(len(members)) if rng is not None else np.arange(len(members))
        for s in range(0, len(members), batch_size):
            batches.append(Batch.stack([members[i] for i in order[s:s + batch_size]]))
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


@dataclass
class LossParts:
    total: Tensor
    xi: float
    ode: float
    reg: float


def weight_penalty(model: SetModel, norm: str = "sum") -> Tensor:
    weights = model.weight_matrices()
    total = None
    count = 0
    for w in weights:
        term = w.abs().sum()
        total = term if total is None else total + term
        count += w.size
    if total is None:
        return Tensor(0.0)
    return total * (1.0 / count) if norm == "mean" else total


def composite_loss(pred_scaled: Tensor, batch: Batch, model: SetModel, lambda0: float = 0.0,
                   lambda1: float = 0.0, loss: str = "coefficients", reg_norm: str = "sum",
                   ode_scale: float = 1.0) -> LossParts:
    """Training objective on a batch.

    The coefficient term is the MSE between standardised predictions and
    standardised targets.  The ODE term is the mean absolute residual
    ``dX/dt - Theta Xi_hat`` in physical units divided by ``ode_scale``.
    """
    target = Tensor(model.scale_targets(batch.targets))
    diff = pred_scaled - target
    sq = diff * diff
    if loss == "characteristics":
        xi_term = sq.mean(axis=0).sum()
    else:
        xi_term = sq.mean()
    total = xi_term
    ode_val = float("nan")
    if batch.theta is not None:
        xi_hat = model.unscale_outputs(pred_scaled)
        fitted = Tensor(batch.theta) @ xi_hat.reshape(xi_hat.shape + (1,))
        resid = Tensor(batch.dxdt) - fitted.reshape(batch.dxdt.shape)
        ode = resid.abs().mean() * (1.0 / ode_scale)
        ode_val = ode.item()
        if lambda0 > 0:
            total = total + ode * lambda0
    reg_val = 0.0
    if lambda1 > 0:
        reg = weight_penalty(model, reg_norm)
        reg_val = reg.item()
        total = total + reg * lambda1
    return LossParts(total, xi_term.item(), ode_val, reg_val)


def _plan_loss(model, batch, plan: TrainingPlan) -> LossParts:
    return composite_loss(model.forward_scaled(batch.inputs), batch, model, plan.lambda0,
                          plan.lambda1, plan.loss, plan.reg_norm, plan.ode_scale)


def evaluate_loss(model: SetModel, items: list[LabeledWindow], plan: TrainingPlan) -> dict:
    """Row-weighted averages of the loss parts over a sample set (no parameter update)."""
    totals = {"composite": 0.0, "xi": 0.0, "ode": 0.0}
    n = 0
    for batch in make_batches(items, max(plan.batch_size, 256)):
        parts = _plan_loss(model, batch, plan)
        k = batch.inputs.shape[0]
        totals["composite"] += parts.total.item() * k
        totals["xi"] += parts.xi * k
        totals["ode"] += (parts.ode if not math.isnan(parts.ode) else 0.0) * k
        n += k
    return {key: v / max(n, 1) for key, v in totals.items()}


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_valid: float
    best_epoch: int
    curves: list[dict]
    checkpoints: list[tuple[int, float]]
    epochs_run: int

    def curves_csv(self) -> str:
        buf = io.StringIO()
        fields_ = ["epoch", "stage", "lr", "train_loss", "valid_loss", "valid_xi", "valid_ode"]
        writer = csv.DictWriter(buf, fieldnames=fields_, lineterminator="\n")
        writer.writeheader()
        for row in self.curves:
            writer.writerow({k: row[k] for k in fields_})
        return buf.getvalue()


def _snapshot(model: SetModel) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.named_parameters()}


def _restore(model: SetModel, state: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters():
        p.data = state[name].copy()


def _resume_blob(model, opt: Adam, meta: dict) -> bytes:
    from .nn import dump_checkpoint
    arrays = {f"param/{k}": v for k, v in _snapshot(model).items()}
    arrays.update({f"adam_m/{k}": v for k, v in opt.state.m.items()})
    arrays.update({f"adam_v/{k}": v for k, v in opt.state.v.items()})
    meta = dict(meta, adam_step=opt.state.step)
    return dump_checkpoint(arrays, meta)


def train(model: SetModel, plan: TrainingPlan, train_set: list[LabeledWindow],
          valid_set: list[LabeledWindow], run_dir: str | Path | None = None,
          resume: bool = False, max_epochs: int | None = None) -> TrainResult:
    """Run the learning-rate ladder; keep the weights with the lowest validation loss.

    A checkpoint is written whenever the validation metric strictly improves.
    With ``run_dir`` the best model (``best.ckpt``), a resumable state
    (``last.ckpt``) and ``curves.csv`` are kept on disk.  ``max_epochs`` stops
    early (for resumable partial runs).
    """
    if not train_set or not valid_set:
        raise ValueError("training and validation sets must be non-empty")
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    opt = Adam(model.named_parameters())
    best_state = _snapshot(model)
    best_valid = math.inf
    best_epoch = -1
    curves: list[dict] = []
    checkpoints: list[tuple[int, float]] = []
    start_epoch = 0

    if resume and run_dir is not None and (run_dir / "last.ckpt").exists():
        from .nn import load_checkpoint
        arrays, meta = load_checkpoint((run_dir / "last.ckpt").read_bytes())
        _restore(model, {k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
        opt.state.m = {k[7:]: v for k, v in arrays.items() if k.startswith("adam_m/")}
        opt.state.v = {k[7:]: v for k, v in arrays.items() if k.startswith("adam_v/")}
        opt.state.step = int(meta["adam_step"])
        start_epoch = int(meta["epoch"])
        best_valid = float(meta["best_valid"])
        best_epoch = int(meta["best_epoch"])
        curves = list(meta.get("curves", []))
        checkpoints = [tuple(c) for c in meta.get("checkpoints", [])]
        if (run_dir / "best.ckpt").exists():
            from .models import deserialize
            best_state = _snapshot(deserialize((run_dir / "best.ckpt").read_bytes()))
        log.info("resuming at epoch %d", start_epoch)

    ladder = [(si, lr) for si, (lr, ep) in enumerate(plan.stages) for _ in range(ep)]
    stop = len(ladder) if max_epochs is None else min(len(ladder), start_epoch + max_epochs)
    epoch = start_epoch
    for epoch in range(start_epoch, stop):
        stage, lr = ladder[epoch]
        rng = substream(plan.seed, f"batches/{epoch}")
        batches = make_batches(train_set, plan.batch_size, rng)
        running, seen = 0.0, 0
        for batch in batches:
            opt.zero_grad()
            parts = _plan_loss(model, batch, plan)
            value = parts.total.item()
            if not math.isfinite(value):
                _restore(model, best_state)
                raise TrainingAborted("non-finite training loss", epoch, best_valid)
            parts.total.backward()
            try:
                opt.step(lr)
            except NumericError as exc:
                _restore(model, best_state)
                raise TrainingAborted(str(exc), epoch, best_valid) from exc
            k = batch.inputs.shape[0]
            running += value * k
            seen += k
        valid = evaluate_loss(model, valid_set, plan)
        metric = valid[plan.validation_metric]
        if not math.isfinite(metric):
            _restore(model, best_state)
            raise TrainingAborted("non-finite validation loss", epoch, best_valid)
        row = {"epoch": epoch + 1, "stage": stage, "lr": lr, "train_loss": running / seen,
               "valid_loss": valid["composite"], "valid_xi": valid["xi"], "valid_ode": valid["ode"]}
        curves.append(row)
        if metric < best_valid:
            best_valid, best_epoch = metric, epoch + 1
            best_state = _snapshot(model)
            checkpoints.append((epoch + 1, metric))
            if run_dir is not None:
                (run_dir / "best.ckpt").write_bytes(
                    serialize(model, {"epoch": epoch + 1, "valid": metric, "stage": stage}))
        if run_dir is not None:
            meta = {"epoch": epoch + 1, "stage": stage, "best_valid": best_valid,
                    "best_epoch": best_epoch, "curves": curves, "checkpoints": checkpoints,
                    "plan": plan.to_dict()}
            (run_dir / "last.ckpt").write_bytes(_resume_blob(model, opt, meta))
    epochs_run = (stop - start_epoch) if ladder else 0
    if best_epoch < 0 and not curves:
        best_valid = evaluate_loss(model, valid_set, plan)[plan.validation_metric]
    _restore(model, best_state)
    result = TrainResult(best_state, best_valid, best_epoch, curves, checkpoints, epochs_run)
    if run_dir is not None:
        (run_dir / "curves.csv").write_text(result.curves_csv())
        (run_dir / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2))
    return result


__all__ = [
    "Batch", "LabeledWindow", "LossParts", "TrainResult", "TrainingAborted", "TrainingPlan",
    "composite_loss", "evaluate_loss", "make_batches", "train", "weight_penalty",
]
