"""Small fully connected regression network (ReLU hidden layers, linear
output) trained with mini-batch Adam on mean squared error."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import constants as C
from .dataset import FeatureMask
from .errors import ConfigError, DataError, TrainingError

MAGIC = b"SMLP"
VERSION = 1
FD_STEP = 1e-4


@dataclass(frozen=True)
class MlpConfig:
    hidden_sizes: tuple = (16,)
    batch_size: int = C.MLP_BATCH_SIZE
    learning_rate: float = C.MLP_LEARNING_RATE
    epochs: int = C.MLP_EPOCHS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(s) for s in self.hidden_sizes))
        if len(self.hidden_sizes) not in (1, 2):
            raise ConfigError(f"1 or 2 hidden layers required, got {len(self.hidden_sizes)}")
        bad = [s for s in self.hidden_sizes if s not in C.MLP_SIZES]
        if bad:
            raise ConfigError(f"hidden sizes must come from {C.MLP_SIZES}, got {bad}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")

    @property
    def hidden_layers(self) -> int:
        return len(self.hidden_sizes)

    def key(self) -> str:
        return "mlp_h" + "x".join(str(s) for s in self.hidden_sizes)


@dataclass(frozen=True)
class MlpNetwork:
    """``layers[i] = (W, b)`` with ``W`` shaped (out, in)."""

    layers: tuple
    feature_mask: FeatureMask | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        for (w, b), (w_next, _) in zip(self.layers, self.layers[1:]):
            if w_next.shape[1] != w.shape[0]:
                raise ConfigError("layer dimensions do not chain")
        for w, b in self.layers:
            if b.shape != (w.shape[0],):
                raise ConfigError("bias shape does not match weight rows")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ConfigError("non-finite network parameters")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def widths(self) -> tuple:
        return (self.input_dim,) + tuple(w.shape[0] for w, _ in self.layers)

    @property
    def hidden_layers(self) -> int:
        return len(self.layers) - 1

    @property
    def affine_layers(self) -> int:
        return len(self.layers)

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _storage(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def from_arrays(arrays, feature_mask: FeatureMask | None = None) -> MlpNetwork:
    """Build a network from a flat ``[W0, b0, W1, b1, ...]`` list."""
    arrays = [np.array(a, dtype=float) for a in arrays]
    return MlpNetwork(tuple(zip(arrays[0::2], arrays[1::2])), feature_mask)


def init(cfg: MlpConfig, input_dim: int, feature_mask: FeatureMask | None = None) -> MlpNetwork:
    """Glorot-uniform weights and zero biases from a generator seeded by ``cfg.seed``."""
    if input_dim < 1:
        raise ConfigError("input_dim must be >= 1")
    rng = np.random.default_rng([cfg.seed, 0])
    dims = (input_dim,) + cfg.hidden_sizes + (1,)
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((_storage(rng.uniform(-limit, limit, size=(fan_out, fan_in))), np.zeros(fan_out)))
    return MlpNetwork(tuple(layers), feature_mask)


def _as_batch(net: MlpNetwork, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != net.input_dim:
        raise DataError(f"expected {net.input_dim} features, got {X.shape[1]}")
    return X


def predict(net: MlpNetwork, X) -> np.ndarray:
    """Batch forward pass; returns one value per row."""
    a = _as_batch(net, X)
    last = len(net.layers) - 1
    for i, (w, b) in enumerate(net.layers):
        a = a @ w.T + b
        if i < last:
            a = np.maximum(a, 0.0)
    return a[:, 0]


def forward(net: MlpNetwork, features) -> float:
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise DataError("forward takes a single feature vector")
    return float(predict(net, features)[0])


def forward_counted(net: MlpNetwork, features) -> tuple[float, int]:
    """Scalar-loop forward pass that counts every multiply-accumulate."""
    a = [float(v) for v in np.asarray(features, dtype=float)]
    if len(a) != net.input_dim:
        raise DataError(f"expected {net.input_dim} features, got {len(a)}")
    macs = 0
    last = len(net.layers) - 1
    for i, (w, b) in enumerate(net.layers):
        out = []
        for r in range(w.shape[0]):
            acc = float(b[r])
            for c in range(w.shape[1]):
                acc += float(w[r, c]) * a[c]
                macs += 1
            out.append(max(acc, 0.0) if i < last else acc)
        a = out
    return a[0], macs


def loss_and_gradients(net: MlpNetwork, X, y) -> tuple[float, list[np.ndarray]]:
    """Mean squared error over the batch and its gradient for every
    parameter, in ``net.parameters()`` order."""
    X = _as_batch(net, X)
    y = np.asarray(y, dtype=float).ravel()
    acts = [X]
    last = len(net.layers) - 1
    for i, (w, b) in enumerate(net.layers):
        z = acts[-1] @ w.T + b
        acts.append(np.maximum(z, 0.0) if i < last else z)
    err = acts[-1][:, 0] - y
    n = len(y)
    loss = float(err @ err / n)
    delta = (2.0 / n) * err[:, None]
    grads = [None] * (2 * len(net.layers))
    for i in range(last, -1, -1):
        w, _ = net.layers[i]
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w) * (acts[i] > 0)
    return loss, grads


def relu_margin(net: MlpNetwork, features) -> float:
    """Smallest |pre-activation| over the hidden units for one sample; central
    differences are only meaningful when this exceeds the step size."""
    a = _as_batch(net, features)
    margin = np.inf
    for w, b in net.layers[:-1]:
        z = a @ w.T + b
        margin = min(margin, float(np.min(np.abs(z))))
        a = np.maximum(z, 0.0)
    return margin


def gradient_check(net: MlpNetwork, sample, grad_fn=loss_and_gradients, h: float = FD_STEP) -> float:
    """Largest relative gap between ``grad_fn`` and central differences over
    every parameter, for one ``(features, label)`` sample."""
    x, y = sample
    X = np.asarray(x, dtype=float).reshape(1, -1)
    Y = np.asarray([y], dtype=float)
    _, analytic = grad_fn(net, X, Y)
    params = [p.copy() for p in net.parameters()]
    worst = 0.0
    for k, p in enumerate(params):
        flat = p.reshape(-1)
        ga = np.asarray(analytic[k], dtype=float).reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            up = loss_and_gradients(from_arrays(params), X, Y)[0]
            flat[j] = keep - h
            down = loss_and_gradients(from_arrays(params), X, Y)[0]
            flat[j] = keep
            fd = (up - down) / (2.0 * h)
            rel = abs(ga[j] - fd) / max(1e-8, abs(ga[j]) + abs(fd))
            worst = max(worst, rel)
    return worst


@dataclass
class TrainHistory:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = 0


def _mse(net: MlpNetwork, X, y) -> float:
    err = predict(net, X) - y
    return float(err @ err / len(y))


def train(net: MlpNetwork, train_set, val_set, cfg: MlpConfig) -> tuple[MlpNetwork, TrainHistory]:
    """Mini-batch Adam on MSE; returns the parameters of the epoch with the
    lowest validation MSE (training MSE when the validation set is empty),
    rounded to float32 storage width."""
    X, y = np.asarray(train_set[0], dtype=float), np.asarray(train_set[1], dtype=float).ravel()
    Xv, yv = np.asarray(val_set[0], dtype=float), np.asarray(val_set[1], dtype=float).ravel()
    if len(y) == 0:
        raise DataError("empty training set")
    X = _as_batch(net, X)
    if len(yv):
        Xv = _as_batch(net, Xv)
    rng = np.random.default_rng([cfg.seed, 1])
    params = [p.copy() for p in net.parameters()]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps, lr = C.ADAM_BETA1, C.ADAM_BETA2, C.ADAM_EPS, cfg.learning_rate
    history = TrainHistory()
    best, best_score = params, np.inf
    step = 0
    # divergence is detected explicitly below, so overflow warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(y))
            for start in range(0, len(y), cfg.batch_size):
                rows = order[start:start + cfg.batch_size]
                current = from_arrays(params)
                _, grads = loss_and_gradients(current, X[rows], y[rows])
                step += 1
                c1 = 1.0 - b1 ** step
                c2 = 1.0 - b2 ** step
                for p, g, mk, vk in zip(params, grads, m, v):
                    mk *= b1
                    mk += (1.0 - b1) * g
                    vk *= b2
                    vk += (1.0 - b2) * g * g
                    p -= lr * (mk / c1) / (np.sqrt(vk / c2) + eps)
            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingError("parameters became non-finite", epoch)
            current = MlpNetwork(tuple(zip(params[0::2], params[1::2])))
            train_mse = _mse(current, X, y)
            val_mse = _mse(current, Xv, yv) if len(yv) else train_mse
            if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
                raise TrainingError("loss became non-finite", epoch)
            history.train_mse.append(train_mse)
            history.val_mse.append(val_mse)
            if val_mse < best_score:
                best_score = val_mse
                best = [p.copy() for p in params]
                history.best_epoch = epoch
    final = [_storage(p) for p in best]
    return MlpNetwork(tuple(zip(final[0::2], final[1::2])), net.feature_mask), history


def standardizer(X) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and scale; constant columns get scale 1."""
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[~(sd > 1e-12 * np.maximum(1.0, np.abs(mu)))] = 1.0
    return mu, sd


def fold_input_scaling(net: MlpNetwork, mu, sd) -> MlpNetwork:
    """Absorb ``x -> (x - mu) / sd`` into the first layer so the network
    takes raw features with no extra operations."""
    (w, b), rest = net.layers[0], net.layers[1:]
    w_raw = w / sd
    b_raw = b - w_raw @ mu
    layers = ((_storage(w_raw), _storage(b_raw)),) + tuple(rest)
    return MlpNetwork(layers, net.feature_mask)


def fit(X, y, cfg: MlpConfig, val=None, feature_mask: FeatureMask | None = None):
    """Initialize and train on standardized inputs, then fold the scaling
    into the first layer."""
    X = np.asarray(X, dtype=float)
    if val is None:
        val = (np.empty((0, X.shape[1])), np.empty(0))
    mu, sd = standardizer(X)
    net = init(cfg, X.shape[1], feature_mask)
    scaled_val = ((np.asarray(val[0], dtype=float) - mu) / sd, val[1])
    trained, history = train(net, ((X - mu) / sd, y), scaled_val, cfg)
    return fold_input_scaling(trained, mu, sd), history


# ------------------------------------------------------------------- costs


def count_macs(net: MlpNetwork) -> int:
    return int(sum(w.shape[0] * w.shape[1] for w, _ in net.layers))


def mac_formula(widths) -> int:
    """MACs for a chain of layer widths, input first and output last."""
    return int(sum(a * b for a, b in zip(widths, widths[1:])))


def memory_formula(widths) -> int:
    params = sum(a * b + b for a, b in zip(widths, widths[1:]))
    buffers = sum(sorted(widths)[-2:]) if len(widths) > 1 else widths[0]
    return C.SCALAR_BYTES * (params + buffers)


def memory_bytes(net: MlpNetwork) -> int:
    """Weights and biases plus the two largest activation buffers."""
    return memory_formula(net.widths)


# ------------------------------------------------------------ serialization


def serialize(net: MlpNetwork) -> bytes:
    """Little-endian: magic, uint16 version, uint16 layer count, uint32 widths
    (input first), then per layer W (row-major) and b as float32."""
    widths = net.widths
    parts = [struct.pack("<4sHH", MAGIC, VERSION, len(net.layers)),
             struct.pack(f"<{len(widths)}I", *widths)]
    for w, b in net.layers:
        parts.append(np.asarray(w, dtype="<f4").tobytes())
        parts.append(np.asarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def deserialize(blob: bytes, feature_mask: FeatureMask | None = None) -> MlpNetwork:
    try:
        magic, version, n_layers = struct.unpack_from("<4sHH", blob, 0)
        if magic != MAGIC or version != VERSION:
            raise DataError("not a version-1 MLP blob")
        pos = 8
        widths = struct.unpack_from(f"<{n_layers + 1}I", blob, pos)
        pos += 4 * (n_layers + 1)
        arrays = []
        for fan_in, fan_out in zip(widths, widths[1:]):
            w = np.frombuffer(blob, dtype="<f4", count=fan_in * fan_out, offset=pos).reshape(fan_out, fan_in)
            pos += 4 * w.size
            b = np.frombuffer(blob, dtype="<f4", count=fan_out, offset=pos)
            pos += 4 * b.size
            arrays += [w.astype(np.float64), b.astype(np.float64)]
    except (struct.error, ValueError) as exc:
        raise DataError(f"truncated MLP blob: {exc}") from exc
    return from_arrays(arrays, feature_mask)


def dump_text(net: MlpNetwork) -> str:
    lines = [f"mlp widths={'-'.join(str(w) for w in net.widths)} "
             f"hidden_layers={net.hidden_layers} affine_layers={net.affine_layers}"]
    for i, (w, b) in enumerate(net.layers):
        lines.append(f"layer {i} W {w.shape[0]}x{w.shape[1]}")
        lines.extend("  " + " ".join(repr(float(v)) for v in row) for row in w)
        lines.append("  b " + " ".join(repr(float(v)) for v in b))
    return "\n".join(lines) + "\n"
