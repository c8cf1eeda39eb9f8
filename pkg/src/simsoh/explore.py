"""Grid search over model configurations and RFE feature subsets, error
metrics, Pareto fronts and report files."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import constants as C
from . import gbt, mlp
from .costs import CostEstimate, estimate
from .dataset import FEATURE_NAMES, DatasetMeta, FeatureMask, WindowDataset, dataset_splits
from .errors import ConfigError, DegenerateLabelError, SimSohError
from .kvconfig import as_float, as_int, as_list, check_keys, read_kv

COST_AXES = ("time", "memory")
ERROR_METRICS = ("mae", "mse")


# ------------------------------------------------------------------- space


def default_mlp_grid(sizes=C.MLP_SIZES, layers=(1, 2)) -> tuple:
    grid = []
    for n in layers:
        grid.extend(itertools.product(sizes, repeat=n))
    return tuple(grid)


@dataclass(frozen=True)
class SearchSpace:
    gbt_n_trees: tuple = C.GBT_N_TREES
    gbt_max_depth: tuple = C.GBT_MAX_DEPTH
    mlp_hidden: tuple = default_mlp_grid()
    rfe_min_features: int = C.RFE_MIN_FEATURES
    mask_sizes: tuple | None = None
    gbt_learning_rate: float = C.GBT_LEARNING_RATE
    mlp_epochs: int = C.MLP_EPOCHS
    mlp_batch_size: int = C.MLP_BATCH_SIZE
    mlp_learning_rate: float = C.MLP_LEARNING_RATE

    def __post_init__(self):
        if not C.RFE_MIN_FEATURES <= self.rfe_min_features <= len(FEATURE_NAMES):
            raise ConfigError(f"rfe_min_features must be in 3..12, got {self.rfe_min_features}")
        if self.mask_sizes is not None:
            bad = [s for s in self.mask_sizes if not self.rfe_min_features <= s <= len(FEATURE_NAMES)]
            if bad:
                raise ConfigError(f"mask sizes {bad} outside {self.rfe_min_features}..12")
        # validate every configuration eagerly
        self.gbt_configs()
        self.mlp_configs(seed=0)

    def gbt_configs(self) -> list[gbt.GbtConfig]:
        return [gbt.GbtConfig(n, d, self.gbt_learning_rate)
                for n in self.gbt_n_trees for d in self.gbt_max_depth]

    def mlp_configs(self, seed: int) -> list[mlp.MlpConfig]:
        return [mlp.MlpConfig(h, self.mlp_batch_size, self.mlp_learning_rate, self.mlp_epochs, seed)
                for h in self.mlp_hidden]

    def select_masks(self, masks: list[FeatureMask]) -> list[FeatureMask]:
        if self.mask_sizes is None:
            return list(masks)
        wanted = set(self.mask_sizes)
        return [m for m in masks if len(m) in wanted]

    def evaluation_count(self, n_masks: int) -> int:
        return (len(self.gbt_n_trees) * len(self.gbt_max_depth) + len(self.mlp_hidden)) * n_masks


_SPACE_KEYS = {"gbt_n_trees", "gbt_max_depth", "gbt_learning_rate", "mlp_sizes", "mlp_layers",
               "mlp_hidden", "mlp_epochs", "mlp_batch_size", "mlp_learning_rate",
               "rfe_min_features", "mask_sizes"}


def _hidden(token: str) -> tuple:
    try:
        return tuple(int(p) for p in token.lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"bad hidden layer spec {token!r}; use e.g. 16 or 32x8") from exc


def space_from_dict(values: dict) -> SearchSpace:
    """Keys: gbt_n_trees, gbt_max_depth, gbt_learning_rate, mlp_sizes,
    mlp_layers, mlp_hidden (explicit list like ``8, 16x4``), mlp_epochs,
    mlp_batch_size, mlp_learning_rate, rfe_min_features, mask_sizes."""
    check_keys(values, _SPACE_KEYS, "search space")
    if "mlp_hidden" in values:
        hidden = tuple(_hidden(t) for t in as_list(values, "mlp_hidden", str))
    else:
        hidden = default_mlp_grid(as_list(values, "mlp_sizes", int, C.MLP_SIZES),
                                  as_list(values, "mlp_layers", int, (1, 2)))
    mask_sizes = as_list(values, "mask_sizes", int) if "mask_sizes" in values else None
    return SearchSpace(
        gbt_n_trees=as_list(values, "gbt_n_trees", int, C.GBT_N_TREES),
        gbt_max_depth=as_list(values, "gbt_max_depth", int, C.GBT_MAX_DEPTH),
        mlp_hidden=hidden,
        rfe_min_features=as_int(values, "rfe_min_features", C.RFE_MIN_FEATURES),
        mask_sizes=tuple(mask_sizes) if mask_sizes is not None else None,
        gbt_learning_rate=as_float(values, "gbt_learning_rate", C.GBT_LEARNING_RATE),
        mlp_epochs=as_int(values, "mlp_epochs", C.MLP_EPOCHS),
        mlp_batch_size=as_int(values, "mlp_batch_size", C.MLP_BATCH_SIZE),
        mlp_learning_rate=as_float(values, "mlp_learning_rate", C.MLP_LEARNING_RATE),
    )


def load_space(path) -> SearchSpace:
    return space_from_dict(read_kv(path))


# --------------------------------------------------------------------- RFE


def rfe(X, y, min_features: int = C.RFE_MIN_FEATURES, n_trees: int = C.RFE_REFERENCE_TREES,
        max_depth: int = C.RFE_REFERENCE_DEPTH) -> list[FeatureMask]:
    """Recursive elimination on the 12 canonical feature columns.

    Each round fits a reference GBT on the surviving columns and drops the
    least important one (the highest canonical index among ties). Returns
    masks from all 12 features down to ``min_features``.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[1] != len(FEATURE_NAMES):
        raise ConfigError("rfe expects the 12 canonical feature columns")
    if not C.RFE_MIN_FEATURES <= min_features <= len(FEATURE_NAMES):
        raise ConfigError(f"min_features must be in 3..12, got {min_features}")
    y = np.asarray(y, dtype=float)
    if len(y) == 0 or np.all(y == y[0]):
        raise DegenerateLabelError("rfe needs labels with some variation")
    kept = list(range(len(FEATURE_NAMES)))
    masks = [FeatureMask.from_indices(kept)]
    cfg = gbt.GbtConfig(n_trees, max_depth)
    while len(kept) > min_features:
        ens = gbt.fit(X[:, kept], y, cfg)
        imp = gbt.feature_importance(ens)
        low = imp.min()
        drop = max(i for i in range(len(kept)) if imp[i] == low)
        del kept[drop]
        masks.append(FeatureMask.from_indices(kept))
    return masks


# ----------------------------------------------------------------- metrics


@dataclass(frozen=True)
class Metrics:
    mae: float
    mse: float
    r2: float


def metrics(predictions, labels) -> Metrics:
    """MAE and MSE in percent of the normalized label scale, and R^2."""
    p = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if len(p) != len(y) or len(y) == 0:
        raise ValueError("predictions and labels need equal non-zero lengths")
    err = p - y
    spread = float(np.sum((y - y.mean()) ** 2))
    if spread == 0:
        raise DegenerateLabelError("R^2 is undefined for constant labels")
    return Metrics(float(np.mean(np.abs(err)) * 100.0), float(np.mean(err ** 2) * 100.0),
                   float(1.0 - np.sum(err ** 2) / spread))


# ------------------------------------------------------------------ points


@dataclass(frozen=True)
class ParetoPoint:
    model_kind: str
    config: str
    feature_mask: FeatureMask
    mae: float
    mse: float
    r2: float
    val_mse: float
    cost: CostEstimate
    hidden_layers: int = 0
    affine_layers: int = 0
    failure: str = ""

    @property
    def key(self) -> str:
        return f"{self.model_kind}|{self.config}|{len(self.feature_mask)}"

    @property
    def ok(self) -> bool:
        return not self.failure

    def error(self, metric: str = "mae") -> float:
        if metric not in ERROR_METRICS:
            raise ValueError(f"error metric must be one of {ERROR_METRICS}")
        return getattr(self, metric)


def _config_sort_key(kind: str, config: str) -> tuple:
    nums = tuple(int(t) for t in config.replace("gbt_n", "").replace("mlp_h", "")
                 .replace("_d", " ").replace("x", " ").split())
    return (0 if kind == "gbt" else 1, len(nums), nums)


def point_order(p: ParetoPoint) -> tuple:
    return _config_sort_key(p.model_kind, p.config) + (-len(p.feature_mask),)


# ------------------------------------------------------------- grid search

_WORKER = {}


def _init_worker(splits, window_samples, seed):
    _WORKER.update(splits=splits, window_samples=window_samples, seed=seed)


def _failed(kind, cfg, mask, window_samples, exc, layers=(0, 0)) -> ParetoPoint:
    nan = float("nan")
    return ParetoPoint(kind, cfg.key(), mask, nan, nan, nan, nan, CostEstimate(0, 0, 0),
                       layers[0], layers[1], f"{type(exc).__name__}: {exc}")


def evaluate(kind: str, cfg, mask: FeatureMask, splits: dict, window_samples: int) -> ParetoPoint:
    """Train one configuration on the train split and score it on the test split."""
    train, val, test = splits["train"], splits["val"], splits["test"]
    Xtr, Xva, Xte = train.X(mask), val.X(mask), test.X(mask)
    layers = (cfg.hidden_layers, cfg.hidden_layers + 1) if kind == "mlp" else (0, 0)
    try:
        if kind == "gbt":
            model = gbt.fit(Xtr, train.y, cfg, mask)
            pred_val, pred_test = gbt.predict(model, Xva), gbt.predict(model, Xte)
        else:
            model, _ = mlp.fit(Xtr, train.y, cfg, val=(Xva, val.y), feature_mask=mask)
            pred_val, pred_test = mlp.predict(model, Xva), mlp.predict(model, Xte)
        m = metrics(pred_test, test.y)
        val_mse = float(np.mean((pred_val - val.y) ** 2) * 100.0) if len(val) else float("nan")
    except (SimSohError, ArithmeticError, ValueError) as exc:
        return _failed(kind, cfg, mask, window_samples, exc, layers)
    return ParetoPoint(kind, cfg.key(), mask, m.mae, m.mse, m.r2, val_mse,
                       estimate(model, window_samples), layers[0], layers[1])


def _evaluate_item(item):
    kind, cfg, mask = item
    return evaluate(kind, cfg, mask, _WORKER["splits"], _WORKER["window_samples"])


def work_items(space: SearchSpace, masks, seed: int) -> list[tuple]:
    items = []
    for mask in masks:
        items.extend(("gbt", cfg, mask) for cfg in space.gbt_configs())
        items.extend(("mlp", cfg, mask) for cfg in space.mlp_configs(seed))
    return items


def grid_search(space: SearchSpace, splits: dict, masks, window_samples: int,
                seed: int = 0, jobs: int = 1, progress=None) -> list[ParetoPoint]:
    """Evaluate every (mask, configuration) pair; results come back in a fixed
    order regardless of worker scheduling."""
    items = work_items(space, masks, seed)
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker,
                                 initargs=(splits, window_samples, seed)) as pool:
            points = []
            for p in pool.map(_evaluate_item, items, chunksize=1):
                points.append(p)
                if progress:
                    progress(len(points), len(items), p)
    else:
        points = []
        for kind, cfg, mask in items:
            points.append(evaluate(kind, cfg, mask, splits, window_samples))
            if progress:
                progress(len(points), len(items), points[-1])
    return sorted(points, key=point_order)


# ------------------------------------------------------------------ fronts


def front_indices(costs, errors) -> list[int]:
    """Indices of the non-dominated (cost, error) pairs, both minimized.

    Exact duplicates keep only their first occurrence. Returned in order of
    increasing cost.
    """
    costs = list(costs)
    errors = list(errors)
    order = sorted(range(len(costs)), key=lambda i: (costs[i], errors[i], i))
    keep = []
    best = np.inf
    for i in order:
        if errors[i] < best:
            keep.append(i)
            best = errors[i]
    return keep


def pareto_front(points, cost_axis: str = "time", error: str = "mae") -> list[ParetoPoint]:
    points = [p for p in points if p.ok]
    if not points:
        raise ValueError("pareto_front needs at least one successful point")
    idx = front_indices([p.cost.axis(cost_axis) for p in points], [p.error(error) for p in points])
    return [points[i] for i in idx]


def extremes(points, error: str = "mae") -> dict:
    """Lowest-error, lowest-time and lowest-memory points; ties fall to the
    other axes and then to input order."""
    points = [p for p in points if p.ok]
    if not points:
        raise ValueError("extremes needs at least one successful point")
    ranked = list(enumerate(points))

    def pick(key):
        return min(ranked, key=lambda ip: key(ip[1]) + (ip[0],))[1]

    return {
        "lowest_error": pick(lambda p: (p.error(error), p.cost.total_time_proxy, p.cost.memory_bytes)),
        "lowest_time": pick(lambda p: (p.cost.total_time_proxy, p.error(error), p.cost.memory_bytes)),
        "lowest_memory": pick(lambda p: (p.cost.memory_bytes, p.error(error), p.cost.total_time_proxy)),
    }


@dataclass
class RunReport:
    points: list
    masks: list
    seed: int
    error_metric: str = "mae"
    fronts: dict = field(default_factory=dict)
    extremes: dict = field(default_factory=dict)

    def __post_init__(self):
        ok = [p for p in self.points if p.ok]
        if ok and not self.fronts:
            self.fronts = {axis: pareto_front(ok, axis, self.error_metric) for axis in COST_AXES}
        if ok and not self.extremes:
            self.extremes = {"all": extremes(ok, self.error_metric)}
            for kind in ("gbt", "mlp"):
                subset = [p for p in ok if p.model_kind == kind]
                if subset:
                    self.extremes[kind] = extremes(subset, self.error_metric)


def explore(data: WindowDataset, meta: DatasetMeta, space: SearchSpace = SearchSpace(),
            seed: int = 0, jobs: int = 1, progress=None) -> RunReport:
    splits = dataset_splits(data, meta)
    if min(len(s) for s in splits.values()) == 0:
        raise DegenerateLabelError("every split needs at least one window")
    ranking = WindowDataset.concat([splits["train"], splits["val"]])
    masks = rfe(ranking.features, ranking.y, space.rfe_min_features)
    chosen = space.select_masks(masks)
    points = grid_search(space, splits, chosen, meta.window_samples, seed, jobs, progress)
    return RunReport(points, chosen, seed)


# ------------------------------------------------------------------ report

POINT_FIELDS = ("model_kind", "config", "n_features", "features", "hidden_layers", "affine_layers",
                "mae_pct", "mse_pct", "r2", "val_mse_pct", "feature_ops", "eval_ops",
                "time_proxy", "memory_bytes", "failure")


def _point_row(p: ParetoPoint) -> list:
    return [p.model_kind, p.config, len(p.feature_mask), p.feature_mask.key(), p.hidden_layers,
            p.affine_layers, repr(p.mae), repr(p.mse), repr(p.r2), repr(p.val_mse),
            p.cost.feature_ops, p.cost.eval_ops, p.cost.total_time_proxy, p.cost.memory_bytes,
            p.failure]


def write_points(points, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(POINT_FIELDS)
        writer.writerows(_point_row(p) for p in points)


def read_points(path) -> list[ParetoPoint]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cost = CostEstimate(int(row["feature_ops"]), int(row["eval_ops"]), int(row["memory_bytes"]))
            out.append(ParetoPoint(row["model_kind"], row["config"],
                                   FeatureMask(tuple(row["features"].split("+"))),
                                   float(row["mae_pct"]), float(row["mse_pct"]), float(row["r2"]),
                                   float(row["val_mse_pct"]), cost, int(row["hidden_layers"]),
                                   int(row["affine_layers"]), row["failure"]))
    return out


def write_report(report: RunReport, out_dir, extra: dict | None = None) -> Path:
    """points.csv, front_time.csv, front_memory.csv, extremes.csv and report.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_points(report.points, out / "points.csv")
    for axis, front in report.fronts.items():
        write_points(front, out / f"front_{axis}.csv")
    with open(out / "extremes.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("scope", "extreme") + POINT_FIELDS)
        for scope, picks in report.extremes.items():
            for name, p in picks.items():
                writer.writerow([scope, name] + _point_row(p))
    summary = {
        "seed": report.seed,
        "error_metric": report.error_metric,
        "error_units": "percent of the normalized delta-SOH scale",
        "evaluations": len(report.points),
        "by_kind": {k: sum(p.model_kind == k for p in report.points) for k in ("gbt", "mlp")},
        "failures": sum(not p.ok for p in report.points),
        "masks": [m.key() for m in report.masks],
        "fronts": {axis: [p.key for p in front] for axis, front in report.fronts.items()},
        "extremes": {scope: {n: p.key for n, p in picks.items()}
                     for scope, picks in report.extremes.items()},
    }
    if extra:
        summary.update(extra)
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out


def report_digest(out_dir) -> str:
    """sha256 over the report files (names and contents, sorted by name)."""
    h = hashlib.sha256()
    for path in sorted(Path(out_dir).glob("*.*")):
        if path.is_file():
            h.update(path.name.encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def write_plotdata(points, out_dir, error: str = "mae") -> list[Path]:
    """Two-column ``cost error`` series per cost axis and model kind, for all
    points and for the front."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ok = [p for p in points if p.ok]
    written = []
    for axis in COST_AXES:
        front = pareto_front(ok, axis, error)
        series = {"front": front}
        for kind in ("gbt", "mlp"):
            series[f"{kind}_all"] = [p for p in ok if p.model_kind == kind]
        for name, pts in series.items():
            path = out / f"{axis}_{name}.dat"
            lines = [f"# {axis}_cost {error}_pct config n_features"]
            lines += [f"{p.cost.axis(axis)} {p.error(error)!r} {p.config} {len(p.feature_mask)}"
                      for p in sorted(pts, key=lambda q: (q.cost.axis(axis), q.error(error)))]
            path.write_text("\n".join(lines) + "\n")
            written.append(path)
    return written
