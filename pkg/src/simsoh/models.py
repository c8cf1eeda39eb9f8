"""Model files: a small JSON header (kind, feature mask, label scale, window
settings) followed by the learner's binary payload."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

from . import gbt, mlp
from .dataset import DatasetMeta, FeatureMask
from .errors import DataError

MAGIC = b"SIMSOHM1"


@dataclass(frozen=True)
class ModelInfo:
    kind: str
    features: tuple
    max_delta: float
    window_s: float
    sample_period_s: float
    temperature: str
    config: dict

    @property
    def mask(self) -> FeatureMask:
        return FeatureMask(self.features)


def info_for(model, meta: DatasetMeta, config: dict) -> ModelInfo:
    kind = "gbt" if isinstance(model, gbt.GbtEnsemble) else "mlp"
    mask = model.feature_mask or FeatureMask.all()
    return ModelInfo(kind, mask.kept, meta.max_delta, meta.window_s, meta.sample_period_s,
                     meta.temperature, dict(config))


def save_model(path, model, info: ModelInfo) -> None:
    payload = gbt.serialize(model) if info.kind == "gbt" else mlp.serialize(model)
    header = json.dumps({
        "kind": info.kind, "features": list(info.features), "max_delta": info.max_delta,
        "window_s": info.window_s, "sample_period_s": info.sample_period_s,
        "temperature": info.temperature, "config": info.config,
    }, sort_keys=True).encode()
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(header)) + header + payload)


def load_model(path):
    """Return ``(model, ModelInfo)``."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    if not blob.startswith(MAGIC):
        raise DataError(f"{path}: not a model file")
    try:
        (size,) = struct.unpack_from("<I", blob, len(MAGIC))
        start = len(MAGIC) + 4
        head = json.loads(blob[start:start + size])
        info = ModelInfo(head["kind"], tuple(head["features"]), head["max_delta"], head["window_s"],
                         head["sample_period_s"], head["temperature"], head["config"])
    except (struct.error, ValueError, KeyError) as exc:
        raise DataError(f"{path}: corrupt model header: {exc}") from exc
    payload = blob[start + size:]
    if info.kind == "gbt":
        model = gbt.deserialize(payload, info.mask)
    elif info.kind == "mlp":
        model = mlp.deserialize(payload, info.mask)
    else:
        raise DataError(f"{path}: unknown model kind {info.kind!r}")
    return model, info
