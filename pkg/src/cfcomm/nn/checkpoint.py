"""Bit-exact checkpoints: layer specs as JSON, parameters as raw float64.

A checkpoint is an ``.npz`` with one JSON metadata entry plus one flat
parameter array per named model. Loading rebuilds each model from its spec and
installs the stored vector verbatim, so save -> load -> save round-trips to
identical bytes of parameter data.
"""
from __future__ import annotations

import json

import numpy as np

from ..errors import ConfigError

FORMAT_VERSION = 1

# Composite models (actors, twin critics) register a rebuilder here keyed by
# their spec's "type" field; plain networks are handled natively.
MODEL_BUILDERS: dict = {}


def register_model_type(name: str, builder):
    MODEL_BUILDERS[name] = builder


def save_checkpoint(path, models: dict, meta: dict | None = None):
    """Write named models (each with .spec() and .store) plus metadata."""
    entry = {
        "format_version": FORMAT_VERSION,
        "models": {name: m.spec() for name, m in models.items()},
        "meta": meta or {},
    }
    arrays = {f"theta_{name}": m.store.theta for name, m in models.items()}
    with open(path, "wb") as fh:
        np.savez(fh, checkpoint_json=np.frombuffer(
            json.dumps(entry).encode("utf-8"), dtype=np.uint8), **arrays)


def load_checkpoint(path):
    """Rebuild models from a checkpoint; returns (models, meta)."""
    from .network import Network  # local import to avoid a cycle

    with np.load(path) as data:
        entry = json.loads(bytes(data["checkpoint_json"]).decode("utf-8"))
        if entry.get("format_version") != FORMAT_VERSION:
            raise ConfigError(
                f"unsupported checkpoint format version: {entry.get('format_version')!r}")
        models = {}
        for name, spec in entry["models"].items():
            kind = spec.get("type")
            if kind == "network":
                model = Network.from_spec(spec)
            elif kind in MODEL_BUILDERS:
                model = MODEL_BUILDERS[kind](spec)
            else:
                raise ConfigError(f"unknown model type in checkpoint: {kind!r}")
            model.store.set_theta(data[f"theta_{name}"])
            models[name] = model
    return models, entry["meta"]
