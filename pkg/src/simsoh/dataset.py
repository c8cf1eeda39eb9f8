"""Windowing, statistical features, normalized delta-SOH labels and
simulation-level splits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from . import constants as C
from .errors import ConfigError, DataError, DegenerateLabelError, DomainError
from .profiles import Trace

QUANTITIES = ("I", "V", "T")
STATISTICS = ("mean", "var", "min", "max")
FEATURE_NAMES = tuple(f"{q}_{s}" for q in QUANTITIES for s in STATISTICS)
BUCKETS = ("train", "val", "test")


@dataclass(frozen=True)
class FeatureMask:
    """Subset of the 12 canonical features, always held in canonical order."""

    kept: tuple

    def __post_init__(self):
        unknown = [k for k in self.kept if k not in FEATURE_NAMES]
        if unknown:
            raise ConfigError(f"unknown feature names {unknown}")
        if len(set(self.kept)) != len(self.kept):
            raise ConfigError("duplicate feature names in mask")
        if not C.RFE_MIN_FEATURES <= len(self.kept) <= len(FEATURE_NAMES):
            raise ConfigError(f"mask must keep 3..12 features, got {len(self.kept)}")
        object.__setattr__(self, "kept", tuple(n for n in FEATURE_NAMES if n in self.kept))

    @classmethod
    def all(cls) -> "FeatureMask":
        return cls(FEATURE_NAMES)

    @classmethod
    def from_indices(cls, indices) -> "FeatureMask":
        return cls(tuple(FEATURE_NAMES[i] for i in sorted(indices)))

    @property
    def indices(self) -> tuple:
        return tuple(FEATURE_NAMES.index(n) for n in self.kept)

    def __len__(self):
        return len(self.kept)

    def key(self) -> str:
        return "+".join(self.kept)


@dataclass
class NormScale:
    max_delta: float
    clamped: int = 0

    def __post_init__(self):
        if not self.max_delta > 0:
            raise DegenerateLabelError(f"max_delta must be positive, got {self.max_delta}")


@dataclass
class WindowDataset:
    """Column-oriented collection of window samples."""

    sim_id: np.ndarray
    window_index: np.ndarray
    features: np.ndarray
    delta_soh_raw: np.ndarray
    delta_soh_norm: np.ndarray = None

    def __post_init__(self):
        self.sim_id = np.asarray(self.sim_id, dtype=object)
        self.window_index = np.asarray(self.window_index, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=float).reshape(-1, len(FEATURE_NAMES))
        self.delta_soh_raw = np.asarray(self.delta_soh_raw, dtype=float)
        if self.delta_soh_norm is None:
            self.delta_soh_norm = np.full(len(self.delta_soh_raw), np.nan)
        self.delta_soh_norm = np.asarray(self.delta_soh_norm, dtype=float)

    def __len__(self):
        return len(self.delta_soh_raw)

    def take(self, rows) -> "WindowDataset":
        return WindowDataset(self.sim_id[rows], self.window_index[rows], self.features[rows],
                             self.delta_soh_raw[rows], self.delta_soh_norm[rows])

    def select_sims(self, sim_ids) -> "WindowDataset":
        wanted = set(sim_ids)
        return self.take(np.array([s in wanted for s in self.sim_id], dtype=bool))

    def X(self, mask: FeatureMask | None = None) -> np.ndarray:
        if mask is None:
            return self.features
        return self.features[:, list(mask.indices)]

    @property
    def y(self) -> np.ndarray:
        return self.delta_soh_norm

    @classmethod
    def concat(cls, parts) -> "WindowDataset":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(np.concatenate([p.sim_id for p in parts]),
                   np.concatenate([p.window_index for p in parts]),
                   np.concatenate([p.features for p in parts]),
                   np.concatenate([p.delta_soh_raw for p in parts]),
                   np.concatenate([p.delta_soh_norm for p in parts]))

    @classmethod
    def empty(cls) -> "WindowDataset":
        return cls(np.array([], dtype=object), np.array([], dtype=np.int64),
                   np.empty((0, len(FEATURE_NAMES))), np.array([]))


# ---------------------------------------------------------------- windows


def samples_per_window(window_len: float, sample_period: float) -> int:
    ratio = window_len / sample_period
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise ConfigError(f"window length {window_len} s is not a multiple of the sample period {sample_period} s")
    return n


def segment_windows(trace: Trace, window_len: float) -> list[tuple[int, int]]:
    """Non-overlapping full-length windows as half-open row ranges.

    Window ``k`` owns rows ``[start, stop)`` and ends at the instant of row
    ``stop``, which is also where the next window starts; the trailing
    partial window is dropped.
    """
    if len(trace) < 2:
        return []
    n = samples_per_window(window_len, trace.sample_period)
    count = (len(trace) - 1) // n
    return [(k * n, (k + 1) * n) for k in range(count)]


@njit(cache=True)
def _stats_into(x, start, stop, out, offset):
    count = 0
    mean = 0.0
    m2 = 0.0
    lo = np.inf
    hi = -np.inf
    for i in range(start, stop):
        v = x[i]
        count += 1
        delta = v - mean
        mean += delta / count
        m2 += delta * (v - mean)
        if v < lo:
            lo = v
        if v > hi:
            hi = v
    out[offset] = min(max(mean, lo), hi)
    out[offset + 1] = max(m2 / count, 0.0)
    out[offset + 2] = lo
    out[offset + 3] = hi


@njit(cache=True)
def _features_kernel(current, voltage, temp, starts, stops, out):
    for w in range(starts.shape[0]):
        _stats_into(current, starts[w], stops[w], out[w], 0)
        _stats_into(voltage, starts[w], stops[w], out[w], 4)
        _stats_into(temp, starts[w], stops[w], out[w], 8)


def _temperature_column(trace: Trace, temperature: str) -> np.ndarray:
    if temperature == "cell":
        if trace.t_cell_c is None:
            raise DataError(f"{trace.sim_id}: no t_cell_c column; use the ambient temperature source")
        return trace.t_cell_c
    if temperature == "ambient":
        return trace.t_amb_c
    raise ConfigError(f"temperature source must be 'cell' or 'ambient', got {temperature!r}")


def window_features(trace: Trace, ranges, temperature: str = "cell") -> np.ndarray:
    """Full 12-feature matrix for ``ranges`` (one row per window)."""
    out = np.empty((len(ranges), len(FEATURE_NAMES)))
    if not len(ranges):
        return out
    starts = np.array([r[0] for r in ranges], dtype=np.int64)
    stops = np.array([r[1] for r in ranges], dtype=np.int64)
    if np.any(stops <= starts):
        raise DomainError("empty window range")
    if starts.min() < 0 or stops.max() > len(trace):
        raise DomainError("window range outside the trace")
    _features_kernel(np.ascontiguousarray(trace.current_a, float),
                     np.ascontiguousarray(trace.voltage_v, float),
                     np.ascontiguousarray(_temperature_column(trace, temperature), float),
                     starts, stops, out)
    return out


def extract_features(trace: Trace, rng, mask: FeatureMask | None = None,
                     temperature: str = "cell") -> np.ndarray:
    """Population mean, variance, min and max of I, V and T over one window."""
    full = window_features(trace, [tuple(rng)], temperature)[0]
    if mask is None:
        return full
    return full[list(mask.indices)]


def label_window(trace: Trace, rng) -> float:
    """SOH at the window start minus SOH at the window end instant."""
    start, stop = rng
    if stop <= start:
        raise DomainError("empty window range")
    end = min(stop, len(trace) - 1)
    return float(trace.soh[start] - trace.soh[end])


def trace_windows(trace: Trace, window_len: float, temperature: str = "cell") -> WindowDataset:
    ranges = segment_windows(trace, window_len)
    feats = window_features(trace, ranges, temperature)
    soh = trace.soh
    labels = np.array([soh[a] - soh[b] for a, b in ranges], dtype=float)
    return WindowDataset(np.full(len(ranges), trace.sim_id, dtype=object),
                         np.arange(len(ranges)), feats, labels)


# ------------------------------------------------------------ normalization


def fit_norm(train_labels) -> NormScale:
    labels = np.asarray(train_labels, dtype=float)
    if labels.size == 0:
        raise DegenerateLabelError("cannot fit normalization on an empty training split")
    top = float(labels.max())
    if not top > 0:
        raise DegenerateLabelError("all training labels are zero")
    return NormScale(top)


def apply_norm(scale: NormScale, raw):
    """Map raw labels to [0, 1]; values above the training maximum clamp to 1
    and are counted in ``scale.clamped``."""
    values = np.asarray(raw, dtype=float) / scale.max_delta
    over = values > 1.0
    scale.clamped += int(np.count_nonzero(over))
    out = np.clip(values, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def denormalize(scale: NormScale, norm):
    out = np.asarray(norm, dtype=float) * scale.max_delta
    return float(out) if out.ndim == 0 else out


# ----------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitAssignment:
    buckets: dict = field(default_factory=dict)

    def members(self, bucket: str) -> list[str]:
        return sorted(s for s, b in self.buckets.items() if b == bucket)

    def counts(self) -> tuple:
        return tuple(len(self.members(b)) for b in BUCKETS)


def _bucket_sizes(n: int, proportions) -> list[int]:
    raw = [p * n for p in proportions]
    sizes = [int(math.floor(r + 1e-9)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    for i in range(len(sizes)):
        if sizes[i] == 0:
            donor = max(range(len(sizes)), key=lambda j: (sizes[j], -j))
            sizes[donor] -= 1
            sizes[i] += 1
    return sizes


def split_by_simulation(sim_ids, proportions=C.SPLIT_PROPORTIONS, seed: int = 0) -> SplitAssignment:
    """Shuffle the distinct simulation ids with ``seed`` and cut the sequence
    into train/val/test blocks sized by ``proportions``."""
    ids = sorted(set(sim_ids))
    if len(proportions) != len(BUCKETS) or min(proportions) <= 0:
        raise ConfigError(f"need three positive proportions, got {proportions}")
    total = float(sum(proportions))
    proportions = [p / total for p in proportions]
    if len(ids) < len(BUCKETS):
        raise ConfigError(f"need at least {len(BUCKETS)} simulations to split, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    sizes = _bucket_sizes(len(ids), proportions)
    assignment = {}
    pos = 0
    for bucket, size in zip(BUCKETS, sizes):
        for k in order[pos:pos + size]:
            assignment[ids[k]] = bucket
        pos += size
    return SplitAssignment(assignment)


# ------------------------------------------------------------- end to end


@dataclass
class DatasetMeta:
    max_delta: float
    clamped: int
    seed: int
    proportions: tuple
    window_s: float
    sample_period_s: float
    temperature: str
    splits: dict

    def to_json(self) -> str:
        d = {
            "feature_names": list(FEATURE_NAMES),
            "max_delta": self.max_delta,
            "clamped": self.clamped,
            "seed": self.seed,
            "proportions": list(self.proportions),
            "window_s": self.window_s,
            "sample_period_s": self.sample_period_s,
            "temperature": self.temperature,
            "splits": dict(sorted(self.splits.items())),
        }
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetMeta":
        d = json.loads(text)
        return cls(d["max_delta"], d["clamped"], d["seed"], tuple(d["proportions"]),
                   d["window_s"], d["sample_period_s"], d["temperature"], d["splits"])

    @property
    def window_samples(self) -> int:
        return samples_per_window(self.window_s, self.sample_period_s)

    @property
    def scale(self) -> NormScale:
        return NormScale(self.max_delta, self.clamped)

    @property
    def assignment(self) -> SplitAssignment:
        return SplitAssignment(dict(self.splits))


def build_dataset(traces, window_len: float = C.WINDOW_HOURS * 3600.0,
                  proportions=C.SPLIT_PROPORTIONS, seed: int = 0,
                  temperature: str = "cell") -> tuple[WindowDataset, DatasetMeta]:
    """Window every trace, split by simulation, fit the label scale on the
    training split and normalize all labels. ``traces`` may be any iterable;
    each trace is released after windowing."""
    parts, sim_ids, periods = [], [], set()
    for trace in traces:
        parts.append(trace_windows(trace, window_len, temperature))
        sim_ids.append(trace.sim_id)
        if len(trace) > 1:
            periods.add(trace.sample_period)
    if len(periods) != 1:
        raise DataError(f"traces must share one sample period, got {sorted(periods)}")
    if len(set(sim_ids)) != len(sim_ids):
        raise DataError("duplicate sim ids among traces")
    data = WindowDataset.concat(parts)
    split = split_by_simulation(sim_ids, proportions, seed)
    train = data.select_sims(split.members("train"))
    scale = fit_norm(train.delta_soh_raw)
    data.delta_soh_norm = apply_norm(scale, data.delta_soh_raw)
    meta = DatasetMeta(scale.max_delta, scale.clamped, seed, tuple(proportions), window_len,
                       periods.pop(), temperature, split.buckets)
    return data, meta


def dataset_splits(data: WindowDataset, meta: DatasetMeta) -> dict[str, WindowDataset]:
    split = meta.assignment
    return {b: data.select_sims(split.members(b)) for b in BUCKETS}


# --------------------------------------------------------------------- IO

_HEADER = ("sim_id", "window_index") + FEATURE_NAMES + ("delta_soh_raw", "delta_soh_norm")


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_dataset(data: WindowDataset, meta: DatasetMeta, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_HEADER)
        for i in range(len(data)):
            writer.writerow([data.sim_id[i], int(data.window_index[i])]
                            + [repr(float(v)) for v in data.features[i]]
                            + [repr(float(data.delta_soh_raw[i])), repr(float(data.delta_soh_norm[i]))])
    meta_path(path).write_text(meta.to_json())


def read_dataset(path) -> tuple[WindowDataset, DatasetMeta]:
    path = Path(path)
    try:
        meta = DatasetMeta.from_json(meta_path(path).read_text())
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read dataset sidecar for {path}: {exc}") from exc
    sims, idx, feats, raw, norm = [], [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != _HEADER:
            raise DataError(f"{path}: unexpected dataset header")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(_HEADER):
                raise DataError(f"{path}: line {lineno}: expected {len(_HEADER)} fields")
            try:
                sims.append(row[0])
                idx.append(int(row[1]))
                feats.append([float(v) for v in row[2:14]])
                raw.append(float(row[14]))
                norm.append(float(row[15]))
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    data = WindowDataset(np.array(sims, dtype=object), np.array(idx, dtype=np.int64),
                         np.array(feats).reshape(-1, len(FEATURE_NAMES)), np.array(raw), np.array(norm))
    return data, meta
