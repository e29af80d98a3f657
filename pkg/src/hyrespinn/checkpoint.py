"""Versioned checkpoint container: model spec, seed, and exact parameters.

Plain JSON with every float64 encoded by ``float.hex``, so a load/save
round trip is bitwise.  Fixed arrays (centers, Fourier projections) are
stored alongside trainable ones; a checkpoint fully rebuilds the model.
"""

from __future__ import annotations

import json

import numpy as np

from .models import ModelSpec
from .params import ParamStore

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError"]

_FORMAT = "hyrespinn-checkpoint"
_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint file."""


def save_checkpoint(path, spec: ModelSpec, seed: int, params: ParamStore,
                    extra: dict | None = None) -> None:
    doc = {
        "format": _FORMAT,
        "version": _VERSION,
        "seed": int(seed),
        "model": spec.to_dict(),
        "extra": extra or {},
        "params": [
            {
                "name": name,
                "trainable": params.entry(name).trainable,
                "init": params.entry(name).init,
                "shape": list(params.entry(name).value.shape),
                "hex": [v.hex() for v in params.entry(name).value.ravel()],
            }
            for name in params.names()
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path) -> tuple[ModelSpec, int, ParamStore, dict]:
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if doc.get("format") != _FORMAT:
        raise CheckpointError(f"{path} is not a {_FORMAT} file")
    if doc.get("version") != _VERSION:
        raise CheckpointError(
            f"checkpoint version {doc.get('version')} unsupported "
            f"(expected {_VERSION})"
        )
    spec = ModelSpec.from_dict(doc["model"])
    params = ParamStore()
    for rec in doc["params"]:
        values = np.array([float.fromhex(h) for h in rec["hex"]])
        params.add(rec["name"], values.reshape(rec["shape"]),
                   trainable=rec["trainable"], init=rec.get("init", ""))
    return spec, int(doc["seed"]), params, doc.get("extra", {})
