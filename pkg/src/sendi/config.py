"""Experiment configuration: presets, overlays, schema validation and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .models import ModelConfig
from .nn import ConfigurationError

SCHEMA_VERSION = 1
PRESETS = ("app1", "app2", "app3", "desk")
SYSTEM_OF = {"app1": "lotka_volterra", "app2": "lorenz", "app3": "heat"}

# Sections that determine the generated data; everything else only affects training/evaluation.
DATA_KEYS = ("schema_version", "experiment", "seed", "system", "sampling", "noise", "library", "solver")
DATA_EVAL_KEYS = ("window", "sizes", "train_sizes", "targets")


class ConfigError(ConfigurationError):
    """Configuration failed validation; ``problems`` lists each offending key."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def _schema() -> dict:
    text = resources.files("sendi").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError([f"preset: unknown preset {name!r}; available: {', '.join(PRESETS)}"])
    return json.loads(resources.files("sendi").joinpath(f"presets/{name}.json").read_text())


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def apply_overlay(config: dict, overlay: dict) -> dict:
    """Apply a scaling overlay such as the desk profile.

    ``scale.data`` multiplies trajectory counts, ``scale.epochs`` multiplies
    every stage of the learning-rate ladder (never below one epoch), and the
    section named after the experiment is merged on top afterwards.
    """
    out = copy.deepcopy(config)
    scale = overlay.get("scale", {})
    data = float(scale.get("data", 1.0))
    epochs = float(scale.get("epochs", 1.0))
    sampling = out.get("sampling", {})
    for key in ("count", "test_count"):
        if key in sampling:
            sampling[key] = max(1, int(round(sampling[key] * data)))
    training = out.get("training", {})
    if "stages" in training:
        training["stages"] = [[lr, max(1, int(round(ep * epochs))) if ep else 0]
                              for lr, ep in training["stages"]]
    extra = overlay.get(out.get("experiment", ""), {})
    return deep_merge(out, extra)


def is_overlay(doc: dict) -> bool:
    return doc.get("overlay") is True


def validate(config: dict) -> dict:
    """Validate against the published schema; collects every problem before raising."""
    validator = jsonschema.Draft202012Validator(_schema())
    problems = []
    for err in sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path)):
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        problems.append(f"{where}: {err.message}")
    if not problems:
        try:
            ModelConfig.from_dict(config["model"])
            if "baseline" in config.get("evaluation", {}):
                ModelConfig.from_dict(config["evaluation"]["baseline"])
        except (ConfigurationError, TypeError) as exc:
            problems.append(f"model: {exc}")
        exp = config["experiment"]
        kind = config["system"].get("kind", SYSTEM_OF.get(exp))
        if kind is None:
            problems.append("system.kind: required for custom experiments")
        elif exp in SYSTEM_OF and kind != SYSTEM_OF[exp]:
            problems.append(f"system.kind: {exp} runs the {SYSTEM_OF[exp]} system, not {kind}")
    if problems:
        raise ConfigError(problems)
    return config


def resolve(config_path: str | Path | None = None, presets: list[str] | None = None,
            seed: int | None = None, output: str | None = None) -> dict:
    """Build the effective configuration.

    Full presets and the ``--config`` file are deep-merged in order (presets
    first); overlay presets like ``desk`` are applied last.  ``seed`` and
    ``output`` override the merged values.
    """
    docs: list[dict] = [load_preset(p) for p in (presets or [])]
    if config_path is not None:
        try:
            docs.append(json.loads(Path(config_path).read_text()))
        except FileNotFoundError:
            raise ConfigError([f"--config: file not found: {config_path}"]) from None
        except json.JSONDecodeError as exc:
            raise ConfigError([f"--config: not valid JSON ({exc})"]) from None
    if not docs:
        raise ConfigError(["<root>: give --config or at least one --preset"])
    merged: dict = {}
    overlays = []
    for doc in docs:
        if is_overlay(doc):
            overlays.append(doc)
        else:
            merged = deep_merge(merged, doc)
    for ov in overlays:
        merged = apply_overlay(merged, ov)
    if seed is not None:
        merged["seed"] = int(seed)
    if output is not None:
        merged["output"] = str(output)
    merged["system"].setdefault("kind", SYSTEM_OF.get(merged.get("experiment")))
    return validate(merged)


def canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def config_hash(config: dict) -> str:
    body = {k: v for k, v in config.items() if k != "output"}
    return hashlib.sha256(canonical(body)).hexdigest()[:16]


def data_hash(config: dict) -> str:
    """Hash of the sections that determine generated data."""
    body = {k: config.get(k) for k in DATA_KEYS}
    body["evaluation"] = {k: config.get("evaluation", {}).get(k) for k in DATA_EVAL_KEYS}
    return hashlib.sha256(canonical(body)).hexdigest()[:16]


def training_hash(config: dict) -> str:
    body = {"data": data_hash(config), "model": config["model"], "training": config["training"],
            "baseline": config.get("evaluation", {}).get("baseline")}
    return hashlib.sha256(canonical(body)).hexdigest()[:16]


__all__ = [
    "ConfigError", "DATA_KEYS", "PRESETS", "SCHEMA_VERSION", "apply_overlay", "config_hash",
    "data_hash", "deep_merge", "load_preset", "resolve", "training_hash", "validate",
]
