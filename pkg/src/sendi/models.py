"""Identification models: the single-sample OASIS MLP, Deep Set and Set Transformer.

All three map a window of feature rows ``(..., N', F)`` to a parameter vector
``(..., outputs)``.  Inputs and outputs pass through fixed standardisation
buffers that are stored with the weights but are not trainable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .nn import (MLP, CheckpointError, ConfigurationError, Dense, EquivariantLayer, LayerNorm,
                 Module, MultiHeadAttention, RowFF, Tensor, concat, dump_checkpoint,
                 ensure_tensor, load_checkpoint, parameter, sorted_pool)

MODEL_FORMAT = "sendi-model"
MODEL_VERSION = 1
KINDS = ("oasis", "deepset", "set_transformer")


class IncompatibleCheckpointError(CheckpointError):
    pass


@dataclass
class ModelConfig:
    """Architecture description; serialised next to the weights."""

    kind: str = "deepset"
    n_features: int = 4
    n_outputs: int = 1
    features: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    activation: str = "relu"
    seed: int = 0
    # Deep Set / OASIS
    encoder: list[int] = field(default_factory=lambda: [64, 64])
    encoder_kind: str = "dense"          # dense | equivariant
    pool: str = "mean"
    decoder: list[int] = field(default_factory=lambda: [64, 64])
    parallel_heads: int = 1              # independent decoders sharing the encoder
    # Set Transformer
    d_model: int = 32
    heads: int = 4
    head_dim: int | None = None
    inducing: int = 0                    # 0 -> SAB encoder blocks, m > 0 -> ISAB
    encoder_blocks: int = 1
    rff_layers: int = 1
    rff_activation: str = "none"
    pma_dim: int | None = None           # projection width before pooling
    pma_heads: int | None = None
    pma_head_dim: int | None = None
    pma_rff_layers: int = 1
    seeds: int = 1
    decoder_sab: bool = False
    decoder_sab_heads: int | None = None
    decoder_sab_head_dim: int | None = None
    scaled_attention: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.n_features < 1 or self.n_outputs < 1:
            raise ConfigurationError("n_features and n_outputs must be >= 1")
        if self.features and len(self.features) != self.n_features:
            raise ConfigurationError("feature names do not match n_features")
        if self.outputs and len(self.outputs) != self.n_outputs:
            raise ConfigurationError("output names do not match n_outputs")
        if self.parallel_heads < 1 or self.n_outputs % self.parallel_heads:
            raise ConfigurationError("n_outputs must split evenly across parallel heads")
        if self.encoder_kind not in ("dense", "equivariant"):
            raise ConfigurationError(f"unknown encoder kind {self.encoder_kind!r}")
        if self.seeds != 1:
            raise ConfigurationError("only a single PMA seed (k=1) is supported")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class MAB(Module):
    """``H = LN(X + MHA(X, Y, Y))``, ``out = LN(H + rFF(H))``."""

    def __init__(self, d: int, heads: int, head_dim: int | None = None, rff_layers: int = 1,
                 rff_activation: str = "none", scaled: bool = False,
                 rng: np.random.Generator | None = None):
        self.attn = MultiHeadAttention(d, heads, head_dim, scaled=scaled, rng=rng)
        self.norm1 = LayerNorm(d)
        self.rff = RowFF(d, rff_layers, rff_activation, rng=rng)
        self.norm2 = LayerNorm(d)
        self.d = d

    def forward(self, x, y) -> Tensor:
        x, y = ensure_tensor(x), ensure_tensor(y)
        if x.shape[-1] != self.d or y.shape[-1] != self.d:
            raise ConfigurationError(f"MAB width {self.d} does not match inputs {x.shape}, {y.shape}")
        h = self.norm1(x + self.attn(x, y, y))
        return self.norm2(h + self.rff(h))


def mab(block: MAB, x, y) -> Tensor:
    return block(x, y)


class SAB(Module):
    def __init__(self, d: int, heads: int, head_dim: int | None = None, **kw):
        self.mab = MAB(d, heads, head_dim, **kw)

    def forward(self, x) -> Tensor:
        return self.mab(x, x)


class ISAB(Module):
    """Two chained MABs through ``m`` learnable inducing points; cost O(n m)."""

    def __init__(self, d: int, heads: int, m: int, head_dim: int | None = None,
                 rng: np.random.Generator | None = None, **kw):
        if m < 1:
            raise ConfigurationError("ISAB needs at least one inducing point")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.inducing = parameter(rng.normal(0.0, 1.0 / np.sqrt(d), (m, d)))
        self.mab_in = MAB(d, heads, head_dim, rng=rng, **kw)
        self.mab_out = MAB(d, heads, head_dim, rng=rng, **kw)

    def forward(self, x) -> Tensor:
        h = self.mab_in(self.inducing, x)
        return self.mab_out(x, h)


def isab(block: ISAB, x) -> Tensor:
    return block(x)


class PMA(Module):
    """``MAB(S, rFF(Z))`` with a learnable seed ``S`` of shape (k, d)."""

    def __init__(self, d: int, heads: int, head_dim: int | None = None, k: int = 1,
                 rff_layers: int = 1, rff_activation: str = "none",
                 rng: np.random.Generator | None = None, **kw):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.seed = parameter(rng.normal(0.0, 1.0 / np.sqrt(d), (k, d)))
        self.rff = RowFF(d, rff_layers, rff_activation, rng=rng)
        self.mab = MAB(d, heads, head_dim, rff_layers=rff_layers, rff_activation=rff_activation,
                       rng=rng, **kw)

    def forward(self, z) -> Tensor:
        return self.mab(self.seed, self.rff(z))


def pma(block: PMA, z) -> Tensor:
    return block(z)


class SetModel(Module):
    """Common plumbing: standardisation buffers, input checks, (de)serialisation."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self._in_mean = np.zeros(config.n_features)
        self._in_std = np.ones(config.n_features)
        self._out_mean = np.zeros(config.n_outputs)
        self._out_std = np.ones(config.n_outputs)

    # buffers -------------------------------------------------------------
    def set_scaling(self, in_mean=None, in_std=None, out_mean=None, out_std=None) -> None:
        def safe(std):
            std = np.asarray(std, dtype=np.float64)
            return np.where(std > 1e-300, std, 1.0)
        if in_mean is not None:
            self._in_mean = np.asarray(in_mean, dtype=np.float64).copy()
        if in_std is not None:
            self._in_std = safe(in_std)
        if out_mean is not None:
            self._out_mean = np.asarray(out_mean, dtype=np.float64).copy()
        if out_std is not None:
            self._out_std = safe(out_std)

    def buffers(self) -> dict[str, np.ndarray]:
        return {"buffers/in_mean": self._in_mean, "buffers/in_std": self._in_std,
                "buffers/out_mean": self._out_mean, "buffers/out_std": self._out_std}

    def scale_targets(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y) - self._out_mean) / self._out_std

    def unscale_outputs(self, y):
        return y * self._out_std + self._out_mean

    # forward -------------------------------------------------------------
    def _check(self, x) -> np.ndarray:
        x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        if x.ndim < 2:
            raise ConfigurationError("model input must have shape (..., rows, features)")
        if x.shape[-1] != self.config.n_features:
            raise ConfigurationError(
                f"model expects {self.config.n_features} features, got {x.shape[-1]}")
        if x.shape[-2] < 1:
            raise ConfigurationError("window must contain at least one row")
        return x

    def forward_scaled(self, x) -> Tensor:
        """Prediction in standardised output units."""
        x = self._check(x)
        return self._forward((x - self._in_mean) / self._in_std)

    def forward(self, x) -> Tensor:
        return self.unscale_outputs(self.forward_scaled(x))

    def predict(self, x) -> np.ndarray:
        return self.forward(x).data

    def _forward(self, x: np.ndarray) -> Tensor:
        raise NotImplementedError


def _decoder_heads(config: ModelConfig, d_in: int, rng) -> list[MLP]:
    per_head = config.n_outputs // config.parallel_heads
    return [MLP(d_in, list(config.decoder), config.activation, d_out=per_head, rng=rng)
            for _ in range(config.parallel_heads)]


def _run_heads(heads: list[MLP], h: Tensor) -> Tensor:
    outs = [head(h) for head in heads]
    return outs[0] if len(outs) == 1 else concat(outs, axis=-1)


class OasisModel(SetModel):
    """Plain MLP on a single time sample."""

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        self.net = MLP(config.n_features, list(config.encoder) + list(config.decoder),
                       config.activation, d_out=config.n_outputs, rng=rng)

    def _check(self, x) -> np.ndarray:
        x = super()._check(x)
        if x.shape[-2] != 1:
            raise ConfigurationError("OASIS consumes exactly one time row per sample")
        return x

    def _forward(self, x: np.ndarray) -> Tensor:
        out = self.net(Tensor(x))
        return out.reshape(out.shape[:-2] + (out.shape[-1],))


class DeepSetModel(SetModel):
    """Per-row encoder, symmetric pooling over rows, dense decoder(s)."""

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        prev = config.n_features
        self.encoder = []
        for width in config.encoder:
            if config.encoder_kind == "equivariant":
                self.encoder.append(EquivariantLayer(prev, width, config.pool if config.pool != "abs_mean"
                                                     else "mean", config.activation, rng))
            else:
                self.encoder.append(Dense(prev, width, config.activation, rng))
            prev = width
        self.heads = _decoder_heads(config, prev, rng)

    def encode(self, x) -> Tensor:
        h = ensure_tensor(x)
        for layer in self.encoder:
            h = layer(h)
        return h

    def _forward(self, x: np.ndarray) -> Tensor:
        h = self.encode(Tensor(x))
        pooled = sorted_pool(h, self.config.pool, axis=-2)
        return _run_heads(self.heads, pooled)


class SetTransformerModel(SetModel):
    """Input projection, SAB/ISAB encoder, PMA pooling, optional SAB, dense decoder."""

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        d = config.d_model
        kw = dict(rff_layers=config.rff_layers, rff_activation=config.rff_activation,
                  scaled=config.scaled_attention)
        self.embed = Dense(config.n_features, d, "none", rng)
        self.blocks = []
        for _ in range(config.encoder_blocks):
            if config.inducing > 0:
                self.blocks.append(ISAB(d, config.heads, config.inducing, config.head_dim, rng=rng, **kw))
            else:
                self.blocks.append(SAB(d, config.heads, config.head_dim, rng=rng, **kw))
        d_pool = config.pma_dim or d
        self.project = Dense(d, d_pool, "none", rng) if d_pool != d else None
        self.pool = PMA(d_pool, config.pma_heads or config.heads, config.pma_head_dim, config.seeds,
                        config.pma_rff_layers, config.rff_activation, rng=rng,
                        scaled=config.scaled_attention)
        if config.decoder_sab:
            self.post = SAB(d_pool, config.decoder_sab_heads or config.pma_heads or config.heads,
                            config.decoder_sab_head_dim, rff_layers=config.pma_rff_layers,
                            rff_activation=config.rff_activation, scaled=config.scaled_attention,
                            rng=rng)
        else:
            self.post = None
        self.heads = _decoder_heads(config, d_pool * config.seeds, rng)

    def _forward(self, x: np.ndarray) -> Tensor:
        h = self.embed(Tensor(x))
        for block in self.blocks:
            h = block(h)
        if self.project is not None:
            h = self.project(h)
        z = self.pool(h)
        if self.post is not None:
            z = self.post(z)
        z = z.reshape(z.shape[:-2] + (z.shape[-2] * z.shape[-1],))
        return _run_heads(self.heads, z)


_BUILDERS = {"oasis": OasisModel, "deepset": DeepSetModel, "set_transformer": SetTransformerModel}


def build_model(config: ModelConfig | dict) -> SetModel:
    if isinstance(config, dict):
        config = ModelConfig.from_dict(config)
    return _BUILDERS[config.kind](config)


def count_parameters(config: ModelConfig | dict) -> int:
    return build_model(config).num_parameters()


def serialize(model: SetModel, extra_meta: dict | None = None) -> bytes:
    arrays = {name: p.data for name, p in model.named_parameters()}
    arrays.update(model.buffers())
    meta = {"format": MODEL_FORMAT, "model_version": MODEL_VERSION,
            "config": model.config.to_dict(), "config_hash": model.config.hash(),
            "init": {"seed": model.config.seed, "dense": "kaiming_uniform",
                     "attention": "normal(0, 0.02)"}}
    if extra_meta:
        meta["extra"] = extra_meta
    return dump_checkpoint(arrays, meta)


def deserialize(blob: bytes) -> SetModel:
    arrays, meta = load_checkpoint(blob)
    if meta.get("format") != MODEL_FORMAT or meta.get("model_version") != MODEL_VERSION:
        raise IncompatibleCheckpointError(
            f"checkpoint holds {meta.get('format')!r} v{meta.get('model_version')}, "
            f"expected {MODEL_FORMAT!r} v{MODEL_VERSION}")
    config = ModelConfig.from_dict(meta["config"])
    if config.hash() != meta.get("config_hash"):
        raise IncompatibleCheckpointError("model config does not match its recorded hash")
    model = build_model(config)
    named = dict(model.named_parameters())
    missing = set(named) - set(arrays)
    if missing:
        raise IncompatibleCheckpointError(f"checkpoint lacks parameters {sorted(missing)[:5]}")
    for name, p in named.items():
        if arrays[name].shape != p.shape:
            raise IncompatibleCheckpointError(f"shape mismatch for {name}")
    for name, p in named.items():
        p.data = arrays[name].copy()
    model.set_scaling(arrays["buffers/in_mean"], arrays["buffers/in_std"],
                      arrays["buffers/out_mean"], arrays["buffers/out_std"])
    return model


def checkpoint_meta(blob: bytes) -> dict:
    return load_checkpoint(blob)[1]


# Reference architectures -------------------------------------------------

def lorenz_deepset_config(n_outputs: int = 3, seed: int = 0) -> ModelConfig:
    """Deep Set for Lorenz parameters: 5x320 ReLU encoder, mean(|h|) pool, 5x320 decoder."""
    return ModelConfig(kind="deepset", n_features=4, n_outputs=n_outputs,
                       features=["t", "x", "y", "z"], activation="relu", seed=seed,
                       encoder=[320] * 5, pool="abs_mean", decoder=[320] * 5)


def lorenz_set_transformer_config(n_outputs: int = 3, seed: int = 0) -> ModelConfig:
    """ISAB(d=45, m=128, h=40) encoder and PMA(k=1, d=40, h=40) pooling.

    Per-head width is explicit: 45 in the encoder and 40 in the pooling block.
    The follow-up SAB on the pooled row uses 40 heads of width 15.
    """
    return ModelConfig(kind="set_transformer", n_features=4, n_outputs=n_outputs,
                       features=["t", "x", "y", "z"], activation="relu", seed=seed,
                       decoder=[40, 40], d_model=45, heads=40, head_dim=45, inducing=128,
                       encoder_blocks=1, rff_layers=2, rff_activation="relu", pma_dim=40,
                       pma_heads=40, pma_head_dim=40, pma_rff_layers=2, decoder_sab=True,
                       decoder_sab_heads=40, decoder_sab_head_dim=15)


def heat_deepset_config(seed: int = 0) -> ModelConfig:
    """Deep Set for the diffusivity defect: 5x256 GeLU encoder, sum pool, three 5x256 heads."""
    return ModelConfig(kind="deepset", n_features=3, n_outputs=3, features=["z", "t", "T"],
                       activation="gelu", seed=seed, encoder=[256] * 5, pool="sum",
                       decoder=[256] * 5, parallel_heads=3)


REFERENCE_COUNTS = {
    "lorenz_deepset": (lorenz_deepset_config, 927_043),
    "lorenz_set_transformer": (lorenz_set_transformer_config, 1_045_733),
    "heat_deepset": (heat_deepset_config, 1_262_083),
}


__all__ = [
    "IncompatibleCheckpointError", "ISAB", "MAB", "ModelConfig", "OasisModel", "PMA",
    "REFERENCE_COUNTS", "SAB", "DeepSetModel", "SetModel", "SetTransformerModel", "build_model",
    "checkpoint_meta", "count_parameters", "deserialize", "heat_deepset_config", "isab",
    "lorenz_deepset_config", "lorenz_set_transformer_config", "mab", "pma", "serialize",
]
