"""Self-describing model checkpoints (``.npz``)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .adam import AdamState
from .model import ModelParams

FORMAT = "fformation-checkpoint/1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, state: AdamState | None = None, seed=None,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": FORMAT,
        "architecture": params.architecture(),
        "dtype": str(params.dtype),
        "seed": seed,
        "parameters": params.names,
        "extra": extra or {},
    }
    arrays = {f"param.{k}": v for k, v in params.arrays.items()}
    if state is not None:
        meta["optimizer"] = {"name": "adam", "step": state.step, **state.hyperparameters()}
        arrays.update({f"adam.m.{k}": v for k, v in state.m.items()})
        arrays.update({f"adam.v.{k}": v for k, v in state.v.items()})
    np.savez(path, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path):
    """Return ``(params, adam_state_or_None, meta)``."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: checkpoint not found")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        arrays = {k: z[f"param.{k}"] for k in meta["parameters"]}
        params = ModelParams(arrays, **meta["architecture"])
        state = None
        if "optimizer" in meta:
            opt = meta["optimizer"]
            state = AdamState(opt["lr"], opt["beta1"], opt["beta2"], opt["epsilon"], opt["step"],
                              {k: z[f"adam.m.{k}"] for k in meta["parameters"]},
                              {k: z[f"adam.v.{k}"] for k in meta["parameters"]})
    return params, state, meta
