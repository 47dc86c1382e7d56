"""Candidate-function libraries and sparse regression (STLSQ, coordinate-descent lasso)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np

from .dynamics.trajectory import Trajectory
from .nn.layers import ConfigurationError
from .signal import central_difference_nonuniform

WRAPPERS = {"none": None, "sin": np.sin, "cos": np.cos, "exp": np.exp}


class DegeneracyError(ValueError):
    """The regression problem does not determine the requested quantity."""


class IdentificationError(RuntimeError):
    def __init__(self, window_id, cause: Exception):
        super().__init__(f"identification failed for window {window_id}: {cause}")
        self.window_id = window_id
        self.cause = cause


@dataclass(frozen=True)
class Term:
    exponents: tuple[int, ...]
    wrapper: str = "none"

    def name(self, channels: tuple[str, ...]) -> str:
        parts = []
        for ch, e in zip(channels, self.exponents):
            if e == 1:
                parts.append(ch)
            elif e > 1:
                parts.append(f"{ch}^{e}")
        body = " ".join(parts) or "1"
        return body if self.wrapper == "none" else f"{self.wrapper}({body})"


@dataclass(frozen=True)
class FeatureLibrary:
    """Ordered candidate functions over named channels (states first, then controls)."""

    channels: tuple[str, ...]
    terms: tuple[Term, ...]
    n_states: int

    @classmethod
    def polynomial(cls, states, controls=(), degree: int = 3,
                   include_constant: bool = True) -> "FeatureLibrary":
        """Monomials up to ``degree`` in graded lexicographic order, constant first."""
        channels = tuple(states) + tuple(controls)
        n = len(channels)
        terms = []
        for deg in range(0 if include_constant else 1, degree + 1):
            for combo in combinations_with_replacement(range(n), deg):
                exps = [0] * n
                for i in combo:
                    exps[i] += 1
                terms.append(Term(tuple(exps)))
        return cls(channels, tuple(terms), len(tuple(states)))

    @cached_property
    def exponent_matrix(self) -> np.ndarray | None:
        """``len(self) x channels`` exponents, or None when any term carries a wrapper."""
        if any(WRAPPERS[t.wrapper] is not None for t in self.terms):
            return None
        return np.array([t.exponents for t in self.terms], dtype=np.float64)

    def with_wrapped(self, wrapper: str, channel_terms=None) -> "FeatureLibrary":
        """Append ``wrapper`` applied to each degree-one term (or the given exponent tuples)."""
        if wrapper not in WRAPPERS or wrapper == "none":
            raise ConfigurationError(f"unknown wrapper {wrapper!r}")
        if channel_terms is None:
            channel_terms = [t.exponents for t in self.terms if sum(t.exponents) == 1]
        extra = tuple(Term(tuple(e), wrapper) for e in channel_terms)
        return FeatureLibrary(self.channels, self.terms + extra, self.n_states)

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def names(self) -> list[str]:
        return [t.name(self.channels) for t in self.terms]

    def descriptor(self) -> dict:
        return {"channels": list(self.channels), "n_states": self.n_states,
                "terms": [{"exponents": list(t.exponents), "wrapper": t.wrapper}
                          for t in self.terms]}

    @classmethod
    def from_descriptor(cls, desc: dict) -> "FeatureLibrary":
        terms = tuple(Term(tuple(t["exponents"]), t.get("wrapper", "none")) for t in desc["terms"])
        return cls(tuple(desc["channels"]), terms, int(desc["n_states"]))

    def hash(self) -> str:
        blob = json.dumps(self.descriptor(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def evaluate_library(lib: FeatureLibrary, states, controls=None) -> np.ndarray:
    """Evaluate every term row-wise; returns an ``N x len(lib)`` matrix."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    cols = [states]
    if controls is not None:
        cols.append(np.asarray(controls, dtype=np.float64).reshape(states.shape[0], -1))
    data = np.hstack(cols)
    if data.shape[1] != len(lib.channels):
        raise ConfigurationError(
            f"library expects {len(lib.channels)} channels {lib.channels}, got {data.shape[1]}")
    exps = lib.exponent_matrix
    if exps is not None:
        return np.prod(data[:, None, :] ** exps, axis=2)
    out = np.empty((data.shape[0], len(lib)))
    for j, term in enumerate(lib.terms):
        col = np.ones(data.shape[0])
        for i, e in enumerate(term.exponents):
            if e:
                col = col * data[:, i] ** e
        fn = WRAPPERS[term.wrapper]
        out[:, j] = col if fn is None else fn(col)
    return out


@dataclass(frozen=True)
class StlsqConfig:
    threshold: float = 0.05
    ridge: float = 1e-10
    max_iter: int = 20

    def __post_init__(self):
        if self.threshold < 0 or self.ridge < 0:
            raise ValueError("threshold and ridge must be >= 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class CoefficientMatrix:
    """Sparse coefficients, one column per identified derivative."""

    coef: np.ndarray
    mask: np.ndarray
    library_hash: str = ""
    degenerate: bool = False
    iterations: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coef = np.where(self.mask, self.coef, 0.0)

    @property
    def shape(self) -> tuple:
        return self.coef.shape

    def predict(self, theta: np.ndarray) -> np.ndarray:
        return theta @ self.coef


def _ridge(theta: np.ndarray, y: np.ndarray, ridge: float):
    """Least-norm ridge solution via the augmented system; also returns the rank."""
    k = theta.shape[1]
    if k == 0:
        return np.zeros((0,) + y.shape[1:]), 0
    if ridge > 0:
        a = np.vstack([theta, np.sqrt(ridge) * np.eye(k)])
        b = np.concatenate([y, np.zeros((k,) + y.shape[1:])])
    else:
        a, b = theta, y
    sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    # rank of the data block decides degeneracy, not the ridge-augmented one
    data_rank = np.linalg.matrix_rank(theta) if ridge > 0 else rank
    return sol, int(data_rank)


def stlsq(theta, targets, cfg: StlsqConfig = StlsqConfig(), library_hash: str = "") -> CoefficientMatrix:
    """Sequentially thresholded ridge regression, independently per target column."""
    theta = np.asarray(theta, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    squeeze = y.ndim == 1
    y = y.reshape(theta.shape[0], -1)
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(y))):
        raise ValueError("stlsq inputs must be finite")
    n_terms, n_out = theta.shape[1], y.shape[1]
    coef = np.zeros((n_terms, n_out))
    mask = np.zeros((n_terms, n_out), dtype=bool)
    degenerate = False
    iters = 0
    for j in range(n_out):
        active = np.ones(n_terms, dtype=bool)
        xi, rank = _ridge(theta, y[:, j], cfg.ridge)
        for it in range(1, cfg.max_iter + 1):
            iters = max(iters, it)
            keep = active & (np.abs(xi) >= cfg.threshold)
            xi = np.zeros(n_terms)
            if keep.any():
                sub, rank = _ridge(theta[:, keep], y[:, j], cfg.ridge)
                xi[keep] = sub
            converged = np.array_equal(keep, active)
            active = keep
            if converged:
                break
        n_active = int(active.sum())
        if n_active == 0 or rank < n_active:
            degenerate = True
        coef[:, j] = xi
        mask[:, j] = active
    if squeeze:
        coef, mask = coef[:, 0], mask[:, 0]
    return CoefficientMatrix(coef, mask, library_hash, degenerate, iters)


def lasso_cd(theta, targets, alpha: float, max_iter: int = 10_000, tol: float = 1e-12,
             library_hash: str = "") -> CoefficientMatrix:
    """Coordinate descent for ``1/(2N) ||y - theta xi||^2 + alpha ||xi||_1`` per column."""
    theta = np.asarray(theta, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    squeeze = y.ndim == 1
    y = y.reshape(theta.shape[0], -1)
    n, k = theta.shape
    col_sq = (theta * theta).sum(axis=0) / n
    coef = np.zeros((k, y.shape[1]))
    it = 0
    for j in range(y.shape[1]):
        xi = np.zeros(k)
        resid = y[:, j].copy()
        for it in range(1, max_iter + 1):
            biggest = 0.0
            for i in range(k):
                if col_sq[i] == 0.0:
                    continue
                old = xi[i]
                rho = theta[:, i] @ resid / n + col_sq[i] * old
                new = np.sign(rho) * max(abs(rho) - alpha, 0.0) / col_sq[i]
                if new != old:
                    resid -= theta[:, i] * (new - old)
                    xi[i] = new
                    biggest = max(biggest, abs(new - old))
            if biggest <= tol * max(1.0, np.abs(xi).max()):
                break
        coef[:, j] = xi
    mask = coef != 0.0
    degenerate = not mask.any()
    if squeeze:
        coef, mask = coef[:, 0], mask[:, 0]
    return CoefficientMatrix(coef, mask, library_hash, degenerate, it)


def identify_local(window: Trajectory, lib: FeatureLibrary, cfg: StlsqConfig = StlsqConfig(),
                   derivatives=None, window_id=None) -> CoefficientMatrix:
    """SINDy(c) fit on one window; derivatives default to second-order differences."""
    try:
        if derivatives is None:
            derivatives = central_difference_nonuniform(window.states, window.times)
        theta = evaluate_library(lib, window.states, window.controls)
        result = stlsq(theta, np.asarray(derivatives).reshape(len(window), -1), cfg, lib.hash())
    except ConfigurationError:
        raise
    except Exception as exc:
        raise IdentificationError(window_id, exc) from exc
    result.meta["window_id"] = window_id
    return result


def _scalar_fit(regressor: np.ndarray, target: np.ndarray, label: str, scale: float) -> float:
    norm2 = float(regressor @ regressor)
    if not np.isfinite(norm2) or norm2 <= (1e-10 * scale) ** 2 * regressor.size:
        raise DegeneracyError(f"regressor for {label} vanishes; the parameter is not identifiable")
    return float(regressor @ target) / norm2


def identify_lorenz_constrained(traj: Trajectory | np.ndarray, derivatives=None) -> tuple[float, float, float]:
    """Least-squares (sigma, rho, beta) from the known Lorenz structure.

    ``x' = sigma (y - x)``, ``y' + y + x z = rho x`` and ``x y - z' = beta z``.
    """
    if isinstance(traj, Trajectory):
        states, times = traj.states, traj.times
    else:
        states, times = np.asarray(traj, dtype=np.float64), None
    if states.ndim != 2 or states.shape[1] != 3:
        raise ConfigurationError("Lorenz identification needs exactly three channels")
    if derivatives is None:
        if times is None:
            raise ValueError("derivatives are required when no time grid is given")
        derivatives = central_difference_nonuniform(states, times)
    d = np.asarray(derivatives, dtype=np.float64).reshape(states.shape)
    x, y, z = states.T
    scale = max(1.0, float(np.abs(states).max()))
    sigma = _scalar_fit(y - x, d[:, 0], "sigma", scale)
    rho = _scalar_fit(x, d[:, 1] + y + x * z, "rho", scale)
    beta = _scalar_fit(z, x * y - d[:, 2], "beta", scale)
    return sigma, rho, beta


def labels_json(lib: FeatureLibrary, labels: list[CoefficientMatrix]) -> str:
    """Self-describing label file: the library descriptor plus one record per window."""
    records = []
    for k, lab in enumerate(labels):
        records.append({
            "window_id": lab.meta.get("window_id", k),
            "xi": [float(v) for v in np.asarray(lab.coef).ravel()],
            "shape": list(np.shape(lab.coef)),
            "mask": [bool(v) for v in np.asarray(lab.mask).ravel()],
            "library_hash": lab.library_hash or lib.hash(),
            "degenerate": bool(lab.degenerate),
        })
    return json.dumps({"library": lib.descriptor(), "library_hash": lib.hash(),
                       "labels": records}, indent=1)


def save_labels(path: str | Path, lib: FeatureLibrary, labels: list[CoefficientMatrix]) -> None:
    Path(path).write_text(labels_json(lib, labels))


def load_labels(path: str | Path) -> tuple[FeatureLibrary, list[CoefficientMatrix]]:
    payload = json.loads(Path(path).read_text())
    lib = FeatureLibrary.from_descriptor(payload["library"])
    if lib.hash() != payload["library_hash"]:
        raise ConfigurationError("label file library hash does not match its descriptor")
    out = []
    for rec in payload["labels"]:
        shape = tuple(rec["shape"])
        coef = np.array(rec["xi"], dtype=np.float64).reshape(shape)
        mask = np.array(rec["mask"], dtype=bool).reshape(shape)
        out.append(CoefficientMatrix(coef, mask, rec["library_hash"], rec["degenerate"],
                                     meta={"window_id": rec["window_id"]}))
    return lib, out


__all__ = [
    "CoefficientMatrix", "DegeneracyError", "FeatureLibrary", "IdentificationError",
    "StlsqConfig", "Term", "evaluate_library", "identify_local", "identify_lorenz_constrained",
    "labels_json", "lasso_cd", "load_labels", "save_labels", "stlsq",
]
