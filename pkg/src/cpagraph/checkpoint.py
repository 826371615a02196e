"""Versioned JSON checkpoints with exact float64 parameter blobs."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .cpaformer import CPAFormer, ModelConfig
from .graphio import DEFAULT_SCHEMA, FeatureSchema
from .tensorcore import Tensor

FORMAT = "cpagraph-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _encode(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return {"shape": list(arr.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    shape = tuple(blob["shape"])
    if arr.size != int(np.prod(shape, dtype=np.int64)):
        raise CheckpointError("parameter blob does not match its shape")
    return arr.reshape(shape)


def dumps(model: CPAFormer, extra_params: dict[str, Tensor] | None = None, meta: dict | None = None) -> str:
    """Serialise to a canonical string; identical states give identical bytes."""
    params = {name: _encode(t.data) for name, t in model.params.items()}
    extra = {name: _encode(t.data) for name, t in (extra_params or {}).items()}
    doc = {"format": FORMAT, "version": VERSION, "config": model.config.to_dict(),
           "params": params, "extra": extra, "meta": meta or {}}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def save(path, model: CPAFormer, extra_params: dict[str, Tensor] | None = None, meta: dict | None = None) -> None:
    Path(path).write_text(dumps(model, extra_params, meta) + "\n")


def loads(text: str, schema: FeatureSchema = DEFAULT_SCHEMA) -> tuple[CPAFormer, dict[str, np.ndarray], dict]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from exc
    if doc.get("format") != FORMAT:
        raise CheckpointError("not a cpagraph checkpoint")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    config = ModelConfig.from_dict(doc["config"])
    model = CPAFormer(config, schema)
    if set(doc["params"]) != set(model.params):
        missing = sorted(set(model.params) - set(doc["params"]))
        unknown = sorted(set(doc["params"]) - set(model.params))
        raise CheckpointError(f"parameter mismatch (missing {missing}, unknown {unknown})")
    for name, blob in doc["params"].items():
        arr = _decode(blob)
        if arr.shape != model.params[name].shape:
            raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {model.params[name].shape}")
        model.params[name].data = arr
    extra = {name: _decode(blob) for name, blob in doc.get("extra", {}).items()}
    return model, extra, doc.get("meta", {})


def load(path, schema: FeatureSchema = DEFAULT_SCHEMA):
    return loads(Path(path).read_text(), schema)
