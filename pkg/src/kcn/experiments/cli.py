"""Command-line entry point (``kcn <verb> ...``).

Exit codes: 0 success, 2 schema or input error, 3 training failure,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .. import kcn_models as km
from ..errors import (CheckpointError, EmptyDataset, InvalidInput, KcnError, NumericalError,
                      SchemaError, TrainingFailed)
from ..kriging import local_kriging_predict_many
from ..variogram import KINDS, VariogramModel, empirical_semivariogram, fit_variogram
from .baselines import GlobalGcnConfig
from .benchmark import BenchmarkConfig, config_hash, k_sweep, run_benchmark, trend_residuals, write_train_log
from .data import Schema, load_csv, split_half, synth_gp

log = logging.getLogger("kcn")

EXIT_OK, EXIT_SCHEMA, EXIT_TRAINING, EXIT_NUMERICAL = 0, 2, 3, 4


def _csv_list(text):
    return tuple(t.strip() for t in text.split(",") if t.strip()) if text else ()


def _int_list(text):
    return tuple(int(t) for t in _csv_list(text))


def load_config(path) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _build(cls, d, section):
    try:
        return cls(**d)
    except TypeError as exc:
        raise InvalidInput(f"bad [{section}] configuration: {exc}") from None


def _schema(args, cfg):
    d = dict(cfg.get("data", {}))
    for key in ("loc_cols", "label_col", "feature_cols", "categorical_cols"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = _csv_list(v) if key != "label_col" else v
    return _build(Schema, d, "data")


def _add_schema(p):
    p.add_argument("--loc-cols", dest="loc_cols", help="two location columns, e.g. x,y")
    p.add_argument("--label-col", dest="label_col")
    p.add_argument("--feature-cols", dest="feature_cols")
    p.add_argument("--categorical-cols", dest="categorical_cols")


KCN_FLAGS = {
    "backbone": str, "k": int, "phi": float, "dropout": float, "loss": str, "epochs": int,
    "patience": int, "val_fraction": float, "seed": int, "lr": float,
}


def _add_kcn(p):
    for name, typ in KCN_FLAGS.items():
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ)
    p.add_argument("--hidden-sizes", dest="hidden_sizes")
    p.add_argument("--normalize-adjacency", dest="normalize_adjacency", action="store_true", default=None)
    p.add_argument("--include-coords", dest="include_coords_as_features", action="store_true", default=None)
    p.add_argument("--strict-order", dest="strict_order", action="store_true", default=None)


def _kcn_config(args, cfg) -> km.KcnConfig:
    d = dict(cfg.get("kcn", {}))
    for f in fields(km.KcnConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        d[f.name] = _int_list(v) if f.name == "hidden_sizes" else v
    return km.KcnConfig.from_dict(d)


def _write_predictions(path, ds, pred):
    pred = np.asarray(pred)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if pred.ndim == 2:
            w.writerow(["x", "y", "u", "log_rate", "mean"])
            mean = km.zip_mean(pred)
            for s, row, m in zip(ds.locations, pred, mean):
                w.writerow([s[0], s[1], row[0], row[1], m])
        else:
            w.writerow(["x", "y", "prediction"])
            for s, p in zip(ds.locations, pred):
                w.writerow([s[0], s[1], p])


def _query_set(path, schema):
    """Queries may omit the label column."""
    try:
        return load_csv(path, schema)
    except SchemaError:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), [])
        if schema.label_col in header:
            raise
        tmp = replace(schema, label_col=schema.loc_cols[0])
        return load_csv(path, tmp)


def cmd_fit_variogram(args, cfg):
    ds = load_csv(args.data, _schema(args, cfg))
    vals = trend_residuals(ds) if ds.d else ds.labels
    emp = empirical_semivariogram(ds.locations, vals, args.bins, args.max_lag)
    kinds = _csv_list(args.kinds) or KINDS
    best, fits = fit_variogram(emp, kinds, return_all=True)
    out = {"model": best.to_dict(), "rss": {k: v[1] for k, v in fits.items()},
           "empirical": {"bin_centers": emp.bin_centers.tolist(),
                         "semivariances": emp.semivariances.tolist(),
                         "pair_counts": emp.pair_counts.tolist()}}
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(best.to_json())


def _variogram(args, train):
    if args.variogram:
        with open(args.variogram) as fh:
            d = json.load(fh)
        return VariogramModel.from_dict(d.get("model", d))
    vals = trend_residuals(train) if train.d else train.labels
    return fit_variogram(empirical_semivariogram(train.locations, vals))


def cmd_krige(args, cfg):
    schema = _schema(args, cfg)
    train = load_csv(args.train, schema)
    query = _query_set(args.query, schema)
    vg = _variogram(args, train)
    pred = local_kriging_predict_many(train, query.locations, query.features,
                                      min(args.k, len(train)), vg, not args.no_intercept)
    _write_predictions(args.out, query, pred)
    log.info("kriged %d queries with %s", len(query), vg)


def cmd_train_kcn(args, cfg):
    config = _kcn_config(args, cfg)
    log.info("train-kcn seed=%d config=%s", config.seed, config_hash(config.to_dict()))
    ds = load_csv(args.data, _schema(args, cfg))
    model = km.train(ds, config)
    model.save(args.out)
    if args.log:
        write_train_log(args.log, model.log)
    print(json.dumps({"best_epoch": model.best_epoch,
                      "val_loss": model.log[model.best_epoch - 1]["val_loss"]}))


def cmd_predict(args, cfg):
    model = km.TrainedModel.load(args.model)
    schema = _schema(args, cfg)
    train = load_csv(args.train, schema)
    query = _query_set(args.query, schema)
    pred = km.predict_many(model, train, query.locations, query.features)
    _write_predictions(args.out, query, pred)


def _bench_config(args, cfg):
    b = dict(cfg.get("benchmark", {}))
    kcn = _kcn_config(args, cfg)
    gcn = _build(GlobalGcnConfig, cfg.get("global_gcn", {}), "global_gcn")
    methods = _csv_list(args.methods) if getattr(args, "methods", None) else tuple(
        b.pop("methods", BenchmarkConfig.methods))
    b.pop("methods", None)
    grid = tuple(dict(c) for c in b.pop("grid", ()))
    sweep = _int_list(args.ks) if getattr(args, "ks", None) else tuple(b.pop("sweep_ks", ()))
    b.pop("sweep_ks", None)
    return _build(BenchmarkConfig, dict(methods=methods, kcn=kcn, grid=grid, gcn=gcn,
                                        sweep_ks=sweep, **b), "benchmark")


def _split(args, cfg):
    schema = _schema(args, cfg)
    ds = load_csv(args.data, schema)
    if args.test:
        return ds, load_csv(args.test, schema)
    return split_half(ds, args.split_seed)


def cmd_benchmark(args, cfg):
    train, test = _split(args, cfg)
    bcfg = _bench_config(args, cfg)
    report = run_benchmark(train, test, bcfg)
    report.write(args.out_dir)
    for row in report.rows():
        print(f"{row['method']:>14s}  mse={row['mse']:.6g} +- {row['mse_stderr']:.3g}"
              + ("" if row["nll"] is None else f"  nll={row['nll']:.6g}"))
    failed = [r for r in report.results.values() if not r.ok]
    for r in failed:
        print(f"{r.method:>14s}  FAILED {r.error}", file=sys.stderr)


def cmd_sweep_k(args, cfg):
    train, test = _split(args, cfg)
    config = _kcn_config(args, cfg)
    ks = _int_list(args.ks) or (0, 1, 5, 10, 20)
    rows = k_sweep(train, test, config, ks)
    out = args.out or sys.stdout
    fh = open(out, "w", newline="") if isinstance(out, str) else out
    try:
        w = csv.DictWriter(fh, fieldnames=["method", "k", "mse", "mse_stderr"])
        w.writeheader()
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_synth(args, cfg):
    s = dict(cfg.get("synth", {}))
    for key in ("n", "nugget", "psill", "range", "d", "seed", "zero_inflate", "count_scale", "kind"):
        v = getattr(args, key)
        if v is not None:
            s[key] = v
    vg = VariogramModel(s.get("kind", "exponential"), s.get("nugget", 0.1), s.get("psill", 1.0),
                        s.get("range", 0.2))
    d = int(s.get("d", 0))
    beta = _csv_list(args.beta) if args.beta else s.get("beta")
    beta = None if beta is None else [float(b) for b in beta]
    ds = synth_gp(int(s.get("n", 1000)), vg, beta, d, int(s.get("seed", 0)),
                  s.get("zero_inflate"), float(s.get("count_scale", 1.0)))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", *ds.feature_names, "label"])
        for loc, x, y in zip(ds.locations, ds.features, ds.labels):
            w.writerow([repr(float(loc[0])), repr(float(loc[1])), *(repr(float(v)) for v in x),
                        repr(float(y))])
    log.info("wrote %d points to %s", len(ds), args.out)


def build_parser():
    p = argparse.ArgumentParser(prog="kcn", description="Kriging convolutional networks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TOML configuration file")
        sp.set_defaults(func=fn)
        return sp

    sp = verb("fit-variogram", cmd_fit_variogram, "fit a variogram model to a CSV")
    sp.add_argument("--data", required=True)
    sp.add_argument("--kinds")
    sp.add_argument("--bins", type=int, default=15)
    sp.add_argument("--max-lag", dest="max_lag", type=float)
    sp.add_argument("--out")
    _add_schema(sp)

    sp = verb("krige", cmd_krige, "local universal kriging predictions")
    sp.add_argument("--train", required=True)
    sp.add_argument("--query", required=True)
    sp.add_argument("--variogram", help="JSON from fit-variogram; fitted on --train if omitted")
    sp.add_argument("--k", type=int, default=100)
    sp.add_argument("--no-intercept", dest="no_intercept", action="store_true")
    sp.add_argument("--out", required=True)
    _add_schema(sp)

    sp = verb("train-kcn", cmd_train_kcn, "train a KCN and save a checkpoint")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log", help="per-epoch CSV log")
    _add_schema(sp)
    _add_kcn(sp)

    sp = verb("predict", cmd_predict, "predict with a saved KCN checkpoint")
    sp.add_argument("--model", required=True)
    sp.add_argument("--train", required=True)
    sp.add_argument("--query", required=True)
    sp.add_argument("--out", required=True)
    _add_schema(sp)

    for name, fn, help_ in (("benchmark", cmd_benchmark, "compare methods on a train/test split"),
                            ("sweep-k", cmd_sweep_k, "test MSE against the neighbour count")):
        sp = verb(name, fn, help_)
        sp.add_argument("--data", required=True)
        sp.add_argument("--test", help="separate test CSV; otherwise a 1:1 split of --data")
        sp.add_argument("--split-seed", dest="split_seed", type=int, default=0)
        sp.add_argument("--ks", help="comma-separated neighbour counts")
        if name == "benchmark":
            sp.add_argument("--methods")
            sp.add_argument("--out-dir", dest="out_dir", required=True)
        else:
            sp.add_argument("--out")
        _add_schema(sp)
        _add_kcn(sp)

    sp = verb("synth", cmd_synth, "write a synthetic Gaussian-process field as CSV")
    sp.add_argument("--n", type=int)
    sp.add_argument("--kind", choices=KINDS)
    sp.add_argument("--nugget", type=float)
    sp.add_argument("--psill", type=float)
    sp.add_argument("--range", type=float)
    sp.add_argument("--d", type=int)
    sp.add_argument("--beta", help="comma-separated trend coefficients")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--zero-inflate", dest="zero_inflate", type=float)
    sp.add_argument("--count-scale", dest="count_scale", type=float)
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except (SchemaError, EmptyDataset, InvalidInput, CheckpointError, OSError,
            tomllib.TOMLDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except TrainingFailed as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (NumericalError, KcnError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
