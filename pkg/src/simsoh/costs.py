"""Static operation-count and memory proxies for ranking models.

Feature extraction needs one pass over the window per feature; evaluation is
the branch count of a tree ensemble or the MAC count of a network. Time and
energy share the same additive proxy.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import gbt, mlp


@dataclass(frozen=True)
class CostEstimate:
    feature_ops: int
    eval_ops: int
    memory_bytes: int

    def __post_init__(self):
        if min(self.feature_ops, self.eval_ops, self.memory_bytes) < 0:
            raise ValueError("cost fields must be non-negative")

    @property
    def total_time_proxy(self) -> int:
        return self.feature_ops + self.eval_ops

    def axis(self, name: str) -> int:
        if name == "time":
            return self.total_time_proxy
        if name == "memory":
            return self.memory_bytes
        raise ValueError(f"cost axis must be 'time' or 'memory', got {name!r}")


def window_samples(window_s: float, sample_rate_hz: float) -> int:
    """Samples per window: duration times sampling rate (7200 for 2 h at 1 Hz)."""
    return int(round(window_s * sample_rate_hz))


def feature_cost(window_samples: int, n_features: int) -> int:
    if window_samples < 0 or n_features < 0:
        raise ValueError("window_samples and n_features must be >= 0")
    return int(window_samples) * int(n_features)


def estimate(model, window_samples: int) -> CostEstimate:
    if isinstance(model, gbt.GbtEnsemble):
        return CostEstimate(feature_cost(window_samples, model.n_features),
                            gbt.count_branches(model), gbt.serialized_bytes(model))
    if isinstance(model, mlp.MlpNetwork):
        return CostEstimate(feature_cost(window_samples, model.input_dim),
                            mlp.count_macs(model), mlp.memory_bytes(model))
    raise TypeError(f"no cost model for {type(model).__name__}")
