"""Command-line entry point: ``simsoh <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from pathlib import Path

from . import constants as C
from . import dataset, explore, gbt, mlp, profiles
from .errors import ConfigError, DataError, SimSohError
from .kvconfig import as_float, as_int, as_list, check_keys, read_kv
from .models import info_for, load_model, save_model

log = logging.getLogger("simsoh")


def _split(text: str) -> tuple:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"--split expects three comma-separated numbers, got {text!r}") from exc
    if len(parts) != 3:
        raise ConfigError(f"--split expects three values, got {len(parts)}")
    return parts


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ------------------------------------------------------------------ commands


def cmd_simulate(args) -> int:
    doe = profiles.load_doe(args.doe) if args.doe else profiles.DoeConfig()
    specs = profiles.generate_campaign(doe)
    manifest = profiles.run_campaign(specs, args.out, with_ukf=args.ukf, jobs=args.jobs)
    print(f"{len(specs)} simulations written; manifest {manifest}")
    return 0


def _trace_files(traces_dir: Path) -> list[Path]:
    manifest = traces_dir / "manifest.csv"
    if manifest.exists():
        return [traces_dir / row["file"] for row in profiles.read_manifest(manifest)]
    files = sorted(p for p in traces_dir.glob("*.csv") if p.name != "manifest.csv")
    if not files:
        raise DataError(f"no trace files in {traces_dir}")
    return files


def cmd_dataset(args) -> int:
    files = _trace_files(Path(args.traces))

    def traces():
        for path in files:
            log.info("windowing %s", path.name)
            yield profiles.read_trace(path)

    data, meta = dataset.build_dataset(traces(), args.window_hours * 3600.0, _split(args.split),
                                       args.seed, args.temperature)
    dataset.write_dataset(data, meta, args.out)
    counts = dataset.SplitAssignment(meta.splits).counts()
    print(f"{len(data)} windows from {len(files)} traces; sims train/val/test = "
          f"{counts[0]}/{counts[1]}/{counts[2]}; max_delta {meta.max_delta:.6g}; "
          f"clamped {meta.clamped}")
    return 0


_GBT_KEYS = {"n_trees", "max_depth", "learning_rate", "min_samples_leaf", "features"}
_MLP_KEYS = {"hidden_sizes", "batch_size", "learning_rate", "epochs", "seed", "features"}


def _mask(values: dict) -> dataset.FeatureMask:
    if "features" not in values:
        return dataset.FeatureMask.all()
    return dataset.FeatureMask(tuple(as_list(values, "features")))


def cmd_train(args) -> int:
    values = read_kv(args.config)
    data, meta = dataset.read_dataset(args.dataset)
    splits = dataset.dataset_splits(data, meta)
    train, val, test = splits["train"], splits["val"], splits["test"]
    mask = _mask(values)
    if args.model == "gbt":
        check_keys(values, _GBT_KEYS, "gbt config")
        cfg = gbt.GbtConfig(as_int(values, "n_trees", 50), as_int(values, "max_depth", 5),
                            as_float(values, "learning_rate", C.GBT_LEARNING_RATE),
                            as_int(values, "min_samples_leaf", 1))
        model = gbt.fit(train.X(mask), train.y, cfg, mask)
        predict = gbt.predict
        config = {"n_trees": cfg.n_trees, "max_depth": cfg.max_depth,
                  "learning_rate": cfg.learning_rate, "min_samples_leaf": cfg.min_samples_leaf}
    else:
        check_keys(values, _MLP_KEYS, "mlp config")
        hidden = explore._hidden(values.get("hidden_sizes", "16").replace(",", "x").replace(" ", ""))
        cfg = mlp.MlpConfig(hidden, as_int(values, "batch_size", C.MLP_BATCH_SIZE),
                            as_float(values, "learning_rate", C.MLP_LEARNING_RATE),
                            as_int(values, "epochs", C.MLP_EPOCHS), as_int(values, "seed", 0))
        model, history = mlp.fit(train.X(mask), train.y, cfg, val=(val.X(mask), val.y),
                                 feature_mask=mask)
        log.info("best epoch %d of %d", history.best_epoch, cfg.epochs)
        predict = mlp.predict
        config = {"hidden_sizes": list(cfg.hidden_sizes), "batch_size": cfg.batch_size,
                  "learning_rate": cfg.learning_rate, "epochs": cfg.epochs, "seed": cfg.seed}
    save_model(args.out, model, info_for(model, meta, config))
    if len(test):
        m = explore.metrics(predict(model, test.X(mask)), test.y)
        print(f"test MAE {m.mae:.4f} %  MSE {m.mse:.4f} %  R2 {m.r2:.4f}")
    print(f"model written to {args.out}")
    return 0


def cmd_explore(args) -> int:
    space = explore.load_space(args.space) if args.space else explore.SearchSpace()
    data, meta = dataset.read_dataset(args.dataset)

    def progress(done, total, point):
        log.info("[%d/%d] %s mae=%.4g", done, total, point.key, point.mae)

    report = explore.explore(data, meta, space, seed=args.seed, jobs=args.jobs, progress=progress)
    out = explore.write_report(report, args.report,
                               extra={"dataset_sha256": _file_digest(args.dataset)})
    best = report.extremes.get("all", {}).get("lowest_error")
    print(f"{len(report.points)} points evaluated; report in {out}")
    if best is not None:
        print(f"lowest error: {best.key} MAE {best.mae:.4f} %")
    return 0


def cmd_report(args) -> int:
    in_dir = Path(args.in_dir)
    points_file = in_dir / "points.csv"
    if not points_file.exists():
        raise DataError(f"{points_file} not found")
    points = explore.read_points(points_file)
    if args.format == "plotdata":
        out = Path(args.out) if args.out else in_dir / "plotdata"
        for path in explore.write_plotdata(points, out, args.error):
            print(path)
        return 0
    writer = csv.writer(sys.stdout, lineterminator="\n")
    for axis in explore.COST_AXES:
        front = explore.pareto_front(points, axis, args.error)
        writer.writerow([f"# front {args.error} vs {axis}"])
        writer.writerow(("rank",) + explore.POINT_FIELDS)
        for rank, p in enumerate(front):
            writer.writerow([rank] + explore._point_row(p))
    return 0


def cmd_predict(args) -> int:
    model, info = load_model(args.model)
    trace = profiles.read_trace(args.trace)
    if len(trace) > 1 and abs(trace.sample_period - info.sample_period_s) > 1e-9:
        raise DataError(f"trace sampled every {trace.sample_period:g} s, model expects "
                        f"{info.sample_period_s:g} s")
    ranges = dataset.segment_windows(trace, info.window_s)
    if not ranges:
        raise DataError("trace is shorter than one window")
    X = dataset.window_features(trace, ranges, info.temperature)[:, list(info.mask.indices)]
    norm = gbt.predict(model, X) if info.kind == "gbt" else mlp.predict(model, X)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(("window", "t_end_h", "delta_soh_pred", "soh_pred", "soh_true"))
    soh = args.initial_soh
    for k, ((_, stop), value) in enumerate(zip(ranges, norm)):
        delta = value * info.max_delta      # one multiplication ...
        soh -= delta                        # ... and one sum per window
        end = min(stop, len(trace) - 1)
        writer.writerow([k, f"{trace.time_s[end] / 3600.0:.6g}", f"{delta:.9g}", f"{soh:.9g}",
                         f"{trace.soh[end]:.9g}"])
    truth = trace.soh[[min(stop, len(trace) - 1) for _, stop in ranges]]
    log.info("final SOH %.4f (trace %.4f)", soh, truth[-1])
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simsoh", description="Battery SOH simulate-then-learn pipeline")
    ap.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a DoE campaign into trace CSVs")
    p.add_argument("--doe", help="DoE config file (defaults to the built-in campaign)")
    p.add_argument("--out", required=True)
    p.add_argument("--ukf", action="store_true", help="add soc_est/r0_est columns")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dataset", help="window traces into a feature/label dataset")
    p.add_argument("--traces", required=True)
    p.add_argument("--window-hours", type=float, default=C.WINDOW_HOURS)
    p.add_argument("--split", default="50,20,30")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", choices=("cell", "ambient"), default="cell")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--model", choices=("gbt", "mlp"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explore", help="RFE + grid search + Pareto report")
    p.add_argument("--dataset", required=True)
    p.add_argument("--space", help="search space config (defaults to the full grid)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("report", help="print Pareto tables or write plot series")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--format", choices=("csv", "plotdata"), default="csv")
    p.add_argument("--error", choices=explore.ERROR_METRICS, default="mae")
    p.add_argument("--out", help="plotdata output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("predict", help="window a trace and accumulate predicted SOH")
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--initial-soh", type=float, default=1.0)
    p.set_defaults(func=cmd_predict)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SimSohError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
