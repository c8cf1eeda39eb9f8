"""Gradient boosted regression trees on squared error.

Trees are grown depth-first with an exact greedy split search over presorted
feature columns. Features are handled as float32 (the target-side scalar
width) and leaf values are stored as float32, so an ensemble serialized to the
8-byte-per-node layout predicts exactly like the in-memory one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import constants as C
from .dataset import FeatureMask
from .errors import ConfigError, DataError

MAGIC = b"SGBT"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIIdd")   # magic, version, n_features, n_trees, max_depth, min_leaf, lr, base
_NODE = np.dtype([("feature", "<i4"), ("value", "<f4")])
LEAF = -1
MIN_GAIN_REL = 1e-12


@dataclass(frozen=True)
class GbtConfig:
    n_trees: int = 50
    max_depth: int = 5
    learning_rate: float = C.GBT_LEARNING_RATE
    min_samples_leaf: int = 1

    def __post_init__(self):
        if int(self.n_trees) != self.n_trees or self.n_trees < 1:
            raise ConfigError(f"n_trees must be a positive integer, got {self.n_trees}")
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            raise ConfigError(f"max_depth must be a positive integer, got {self.max_depth}")
        if not 0 < self.learning_rate <= 1:
            raise ConfigError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")

    def key(self) -> str:
        return f"gbt_n{self.n_trees}_d{self.max_depth}"


@dataclass(frozen=True)
class GbtEnsemble:
    """Flattened preorder node arrays for all trees.

    ``feature[i] == -1`` marks a leaf whose ``value`` is the leaf output;
    otherwise ``value`` is the split threshold, the left child is ``i + 1``
    and the right child is ``right[i]``.
    """

    base_prediction: float
    config: GbtConfig
    n_features: int
    feature: np.ndarray
    value: np.ndarray
    right: np.ndarray
    tree_offsets: np.ndarray
    depths: np.ndarray
    gains: np.ndarray
    feature_mask: FeatureMask | None = field(default=None, compare=False)

    @property
    def n_trees(self) -> int:
        return len(self.tree_offsets) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def tree_nodes(self, t: int) -> list[tuple]:
        """Nodes of tree ``t`` as ``(feature, value, left, right)`` with local
        child indices (``None`` for leaves)."""
        lo, hi = int(self.tree_offsets[t]), int(self.tree_offsets[t + 1])
        out = []
        for i in range(lo, hi):
            if self.feature[i] == LEAF:
                out.append((LEAF, float(self.value[i]), None, None))
            else:
                out.append((int(self.feature[i]), float(self.value[i]), i + 1 - lo, int(self.right[i]) - lo))
        return out


# ------------------------------------------------------------------ builder


@njit(cache=True)
def _midpoint(a, b):
    mid = np.float32((np.float64(a) + np.float64(b)) * 0.5)
    if mid >= b:
        return a
    return mid


@njit(cache=True)
def _build_tree(X, r, order, max_depth, min_leaf, min_gain,
                feat_out, val_out, right_out, gains):
    """Grow one tree on residuals ``r``; returns (node_count, depth).

    ``order`` is a (n_features, n) scratch copy of the presorted row order,
    partitioned in place as the tree grows.
    """
    n_feat, n = order.shape
    go_left = np.zeros(X.shape[0], dtype=np.bool_)
    buf = np.empty(n, dtype=order.dtype)
    # stack of (lo, hi, depth, parent) ; parent >= 0 marks a right child
    st_lo = np.empty(2 * max_depth + 2, dtype=np.int64)
    st_hi = np.empty_like(st_lo)
    st_depth = np.empty_like(st_lo)
    st_parent = np.empty_like(st_lo)
    st_lo[0], st_hi[0], st_depth[0], st_parent[0] = 0, n, 0, -1
    top = 1
    count = 0
    tree_depth = 0
    while top > 0:
        top -= 1
        lo, hi, depth, parent = st_lo[top], st_hi[top], st_depth[top], st_parent[top]
        node = count
        count += 1
        if parent >= 0:
            right_out[parent] = node
        size = hi - lo
        total = 0.0
        for k in range(lo, hi):
            total += r[order[0, k]]
        best_gain = min_gain
        best_f = -1
        best_thr = np.float32(0.0)
        if depth < max_depth and size >= 2 * min_leaf:
            base = total * total / size
            for f in range(n_feat):
                left_sum = 0.0
                for k in range(lo, hi - 1):
                    idx = order[f, k]
                    left_sum += r[idx]
                    n_left = k - lo + 1
                    n_right = size - n_left
                    if n_left < min_leaf:
                        continue
                    if n_right < min_leaf:
                        break
                    xv = X[idx, f]
                    xn = X[order[f, k + 1], f]
                    if xn <= xv:
                        continue
                    right_sum = total - left_sum
                    gain = left_sum * left_sum / n_left + right_sum * right_sum / n_right - base
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_thr = _midpoint(xv, xn)
        if best_f < 0:
            feat_out[node] = -1
            val_out[node] = np.float32(total / size)
            right_out[node] = -1
            if depth > tree_depth:
                tree_depth = depth
            continue
        feat_out[node] = best_f
        val_out[node] = best_thr
        gains[best_f] += best_gain
        for k in range(lo, hi):
            idx = order[0, k]
            go_left[idx] = X[idx, best_f] <= best_thr
        n_left = 0
        for f in range(n_feat):
            a = 0
            b = 0
            for k in range(lo, hi):
                idx = order[f, k]
                if go_left[idx]:
                    order[f, lo + a] = idx
                    a += 1
                else:
                    buf[b] = idx
                    b += 1
            for k in range(b):
                order[f, lo + a + k] = buf[k]
            n_left = a
        # right pushed first so the left subtree is emitted next (preorder)
        st_lo[top], st_hi[top], st_depth[top], st_parent[top] = lo + n_left, hi, depth + 1, node
        top += 1
        st_lo[top], st_hi[top], st_depth[top], st_parent[top] = lo, lo + n_left, depth + 1, -1
        top += 1
    return count, tree_depth


@njit(cache=True)
def _tree_apply(X, feature, value, right, start, out, scale):
    for i in range(X.shape[0]):
        node = start
        while feature[node] >= 0:
            if X[i, feature[node]] <= value[node]:
                node += 1
            else:
                node = right[node]
        out[i] += scale * np.float64(value[node])


@njit(cache=True)
def _predict_kernel(X, feature, value, right, offsets, base, lr):
    out = np.zeros(X.shape[0])
    for t in range(offsets.shape[0] - 1):
        _tree_apply(X, feature, value, right, offsets[t], out, 1.0)
    for i in range(X.shape[0]):
        out[i] = base + lr * out[i]
    return out


def _as_features(X, n_features: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if n_features is not None and X.shape[1] != n_features:
        raise DataError(f"expected {n_features} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite feature values")
    return np.ascontiguousarray(X, dtype=np.float32)


def fit(X, y, cfg: GbtConfig = GbtConfig(), feature_mask: FeatureMask | None = None,
        callback=None) -> GbtEnsemble:
    """Fit ``cfg.n_trees`` regression trees to successive residuals.

    ``callback(m, train_mse)`` is invoked after each tree when given.
    """
    X32 = _as_features(X)
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != len(X32) or len(y) == 0:
        raise DataError("need at least one sample and one label per feature row")
    if not np.all(np.isfinite(y)):
        raise DataError("non-finite labels")
    if feature_mask is not None and len(feature_mask) != X32.shape[1]:
        raise DataError("feature mask size does not match feature columns")
    n, n_feat = X32.shape
    base = float(y[0]) if np.all(y == y[0]) else float(np.mean(y))
    pred = np.full(n, base)
    presorted = np.stack([np.argsort(X32[:, f], kind="stable") for f in range(n_feat)]).astype(np.int64)
    cap = max(1, min(2 * n - 1, 2 ** min(cfg.max_depth + 1, 62) - 1))
    feats, vals, rights, offsets, depths = [], [], [], [0], []
    gains = np.zeros(n_feat)
    for m in range(cfg.n_trees):
        resid = y - pred
        feat_out = np.empty(cap, dtype=np.int32)
        val_out = np.empty(cap, dtype=np.float32)
        right_out = np.empty(cap, dtype=np.int32)
        min_gain = MIN_GAIN_REL * float(resid @ resid)
        count, depth = _build_tree(X32, resid, presorted.copy(), cfg.max_depth, cfg.min_samples_leaf,
                                   min_gain, feat_out, val_out, right_out, gains)
        step = np.zeros(n)
        _tree_apply(X32, feat_out, val_out, right_out, 0, step, 1.0)
        pred = pred + cfg.learning_rate * step
        shift = offsets[-1]
        right_out = right_out[:count].copy()
        right_out[right_out >= 0] += shift
        feats.append(feat_out[:count])
        vals.append(val_out[:count])
        rights.append(right_out)
        offsets.append(shift + count)
        depths.append(depth)
        if callback is not None:
            callback(m + 1, float(np.mean((y - pred) ** 2)))
    return GbtEnsemble(base, cfg, n_feat, np.concatenate(feats), np.concatenate(vals),
                       np.concatenate(rights), np.array(offsets, dtype=np.int64),
                       np.array(depths, dtype=np.int64), gains, feature_mask)


def predict(ens: GbtEnsemble, X) -> np.ndarray:
    """Batch prediction; a 1-D input is treated as a single sample."""
    X32 = _as_features(X, ens.n_features)
    return _predict_kernel(X32, ens.feature, ens.value, ens.right, ens.tree_offsets,
                           ens.base_prediction, ens.config.learning_rate)


def predict_one(ens: GbtEnsemble, features) -> float:
    return float(predict(ens, np.asarray(features, dtype=float).reshape(1, -1))[0])


def tree_predict(ens: GbtEnsemble, t: int, X) -> np.ndarray:
    """Raw (unscaled) output of tree ``t``."""
    X32 = _as_features(X, ens.n_features)
    out = np.zeros(len(X32))
    lo = ens.tree_offsets[t]
    _tree_apply(X32, ens.feature, ens.value, ens.right, lo, out, 1.0)
    return out


def feature_importance(ens: GbtEnsemble) -> np.ndarray:
    """Share of total squared-error reduction credited to each feature."""
    total = float(ens.gains.sum())
    if total <= 0:
        return np.zeros(ens.n_features)
    return ens.gains / total


def count_branches(ens: GbtEnsemble) -> int:
    """Worst-case comparisons per inference: sum of per-tree depths."""
    return int(ens.depths.sum())


def branch_formula(n_trees: int, max_depth: int) -> int:
    return int(n_trees) * int(max_depth)


def serialized_bytes(ens: GbtEnsemble) -> int:
    """Node storage plus the float32 input buffer."""
    return C.GBT_NODE_BYTES * ens.n_nodes + C.SCALAR_BYTES * ens.n_features


# ------------------------------------------------------------ serialization


def serialize(ens: GbtEnsemble) -> bytes:
    """Little-endian layout: header, then per tree a uint32 node count and
    ``count`` preorder records of (int32 feature or -1, float32 threshold or
    leaf value), then the float64 per-feature gain totals."""
    cfg = ens.config
    parts = [_HEADER.pack(MAGIC, VERSION, ens.n_features, ens.n_trees, cfg.max_depth,
                          cfg.min_samples_leaf, cfg.learning_rate, ens.base_prediction)]
    for t in range(ens.n_trees):
        lo, hi = ens.tree_offsets[t], ens.tree_offsets[t + 1]
        nodes = np.empty(hi - lo, dtype=_NODE)
        nodes["feature"] = ens.feature[lo:hi]
        nodes["value"] = ens.value[lo:hi]
        parts.append(struct.pack("<I", hi - lo))
        parts.append(nodes.tobytes())
    parts.append(np.asarray(ens.gains, dtype="<f8").tobytes())
    return b"".join(parts)


def _rebuild_right(feature: np.ndarray) -> tuple[np.ndarray, int]:
    right = np.full(len(feature), -1, dtype=np.int32)
    pending = []        # internal nodes still waiting for their right child
    depth_of = np.zeros(len(feature), dtype=np.int64)
    depth = 0
    for i, f in enumerate(feature):
        if i > 0:
            if feature[i - 1] >= 0:
                depth_of[i] = depth_of[i - 1] + 1
            else:
                if not pending:
                    raise DataError("malformed tree: too many nodes")
                parent = pending.pop()
                right[parent] = i
                depth_of[i] = depth_of[parent] + 1
        if f >= 0:
            pending.append(i)
        else:
            depth = max(depth, int(depth_of[i]))
    if pending:
        raise DataError("malformed tree: missing nodes")
    return right, depth


def deserialize(blob: bytes, feature_mask: FeatureMask | None = None) -> GbtEnsemble:
    if len(blob) < _HEADER.size:
        raise DataError("truncated GBT blob")
    magic, version, n_feat, n_trees, max_depth, min_leaf, lr, base = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC or version != VERSION:
        raise DataError("not a version-1 GBT blob")
    pos = _HEADER.size
    feats, vals, rights, offsets, depths = [], [], [], [0], []
    try:
        for _ in range(n_trees):
            (count,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            nodes = np.frombuffer(blob, dtype=_NODE, count=count, offset=pos)
            pos += count * _NODE.itemsize
            right, depth = _rebuild_right(nodes["feature"])
            right[right >= 0] += offsets[-1]
            feats.append(nodes["feature"].astype(np.int32))
            vals.append(nodes["value"].astype(np.float32))
            rights.append(right)
            offsets.append(offsets[-1] + count)
            depths.append(depth)
        gains = np.frombuffer(blob, dtype="<f8", count=n_feat, offset=pos).astype(float)
    except (struct.error, ValueError) as exc:
        raise DataError(f"truncated GBT blob: {exc}") from exc
    feature = np.concatenate(feats)
    if np.any(feature >= n_feat):
        raise DataError("node feature index out of range")
    cfg = GbtConfig(n_trees, max_depth, lr, min_leaf)
    return GbtEnsemble(base, cfg, n_feat, feature, np.concatenate(vals), np.concatenate(rights),
                       np.array(offsets, dtype=np.int64), np.array(depths, dtype=np.int64),
                       gains, feature_mask)


def dump_text(ens: GbtEnsemble, names=None) -> str:
    names = names or (ens.feature_mask.kept if ens.feature_mask else [f"x{i}" for i in range(ens.n_features)])
    lines = [f"gbt trees={ens.n_trees} max_depth={ens.config.max_depth} "
             f"lr={ens.config.learning_rate!r} base={ens.base_prediction!r}"]
    for t in range(ens.n_trees):
        lines.append(f"tree {t} depth={int(ens.depths[t])}")
        depth = {0: 0}
        for i, (f, v, left, right) in enumerate(ens.tree_nodes(t)):
            pad = "  " * (depth[i] + 1)
            if f == LEAF:
                lines.append(f"{pad}leaf {v!r}")
            else:
                lines.append(f"{pad}if {names[f]} <= {v!r}")
                depth[left] = depth[right] = depth[i] + 1
    return "\n".join(lines) + "\n"
