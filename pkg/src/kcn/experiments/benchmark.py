"""Benchmark orchestration: train and score every method on a train/test split.

Each method reports the test MSE with its standard error over test points.
Count models with a ZIP head also report the per-point mean negative log
likelihood.  A Gaussian NLL proxy for MSE-trained methods can be switched on to
compare against them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import kcn_models as km
from ..errors import KcnError, NumericalError
from ..kriging import design_matrix, local_kriging_predict_many
from ..nn_core import zip_nll
from ..variogram import fit_from_data
from .baselines import GlobalGcnConfig, global_gcn_baseline, knn_average_many

log = logging.getLogger(__name__)

# method -> (backbone, forced loss or None for the configured loss)
KCN_METHODS = {"kcn": ("gcn", None), "kcn_att": ("attention", None), "kcn_sage": ("sage", None),
               "kcn_zip": ("gcn", "zip")}
METHODS = ("mean", "knn_average", "local_kriging", *KCN_METHODS, "global_gcn")


@dataclass
class MethodResult:
    method: str
    mse: float = float("nan")
    mse_stderr: float = float("nan")
    nll: float | None = None
    nll_stderr: float | None = None
    config: dict = field(default_factory=dict)
    seconds: float = 0.0
    error: str | None = None

    @property
    def ok(self):
        return self.error is None


@dataclass
class BenchmarkConfig:
    methods: tuple = ("knn_average", "local_kriging", "kcn", "kcn_att", "kcn_sage")
    kcn: km.KcnConfig = field(default_factory=km.KcnConfig)
    grid: tuple = ()
    knn_k: int | None = None
    kriging_k: int = 100
    gaussian_nll: bool = False
    gcn: GlobalGcnConfig = field(default_factory=GlobalGcnConfig)
    sweep_ks: tuple = ()

    def to_dict(self):
        d = {"methods": list(self.methods), "kcn": self.kcn.to_dict(), "grid": list(self.grid),
             "knn_k": self.knn_k, "kriging_k": self.kriging_k, "gaussian_nll": self.gaussian_nll,
             "gcn": asdict(self.gcn), "sweep_ks": list(self.sweep_ks)}
        d["gcn"]["hidden_sizes"] = list(self.gcn.hidden_sizes)
        return d


def config_hash(d) -> str:
    text = json.dumps(d, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass
class MetricsReport:
    results: dict
    metadata: dict
    sweep: list = field(default_factory=list)
    train_logs: dict = field(default_factory=dict)

    def __getitem__(self, method) -> MethodResult:
        return self.results[method]

    def rows(self):
        h = self.metadata.get("config_hash", "")
        return [{"method": r.method, "mse": r.mse, "mse_stderr": r.mse_stderr,
                 "nll": r.nll, "nll_stderr": r.nll_stderr, "config_hash": h}
                for r in self.results.values()]

    def to_dict(self):
        return {"metadata": self.metadata,
                "results": {m: asdict(r) for m, r in self.results.items()},
                "sweep": self.sweep}

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        cols = ["method", "mse", "mse_stderr", "nll", "nll_stderr", "config_hash"]
        with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in self.rows():
                w.writerow({k: ("" if v is None else v) for k, v in row.items()})
        with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=_json_default)
        write_train_log(os.path.join(out_dir, "train_log.csv"), self.train_logs)
        if self.sweep:
            with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=["method", "k", "mse", "mse_stderr"])
                w.writeheader()
                w.writerows(self.sweep)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def write_train_log(path, logs):
    """``logs`` maps a method name to its epoch records (or is a single record list)."""
    if isinstance(logs, list):
        logs = {"": logs}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "epoch", "train_loss", "val_loss"])
        for method, records in logs.items():
            for r in records:
                w.writerow([method, r["epoch"], r["train_loss"], r["val_loss"]])


def squared_error_stats(pred, y):
    se = (np.asarray(pred, dtype=np.float64) - y) ** 2
    return float(se.mean()), _stderr(se)


def _stderr(x):
    return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else float("nan")


def gaussian_nll(pred, y, var):
    """Per-point Gaussian negative log density with a shared variance."""
    var = max(float(var), 1e-12)
    return 0.5 * (np.log(2.0 * np.pi * var) + (y - pred) ** 2 / var)


def _kcn_config(base, method, **overrides):
    backbone, loss = KCN_METHODS[method]
    cfg = replace(base, backbone=backbone, **overrides)
    return cfg if loss is None else replace(cfg, loss=loss)


def _select_kcn(train, base, grid, method):
    """Train every grid cell and keep the best validation loss."""
    cells = grid or ({},)
    best = None
    for overrides in cells:
        cfg = _kcn_config(base, method, **overrides)
        model = km.train(train, cfg)
        val = model.log[model.best_epoch - 1]["val_loss"]
        log.info("%s %s validation %.5g", method, overrides, val)
        if best is None or val < best[0]:
            best = (val, model, overrides)
    return best[1], best[2]


def _residual_var(model, train):
    """Residual variance of an MSE-trained KCN over its training centres."""
    A, H0, _ = km.training_graphs(train, model.config, model.scaler)
    out = model.kernel().predict_many(model.theta, A, H0)
    pred = out[:, 0] * model.scaler.label_std + model.scaler.label_mean
    return float(np.mean((pred - train.labels) ** 2))


def trend_residuals(train):
    """Labels minus their least-squares fit on ``[1, features]``."""
    X = design_matrix(train.features)
    beta, *_ = np.linalg.lstsq(X, train.labels, rcond=None)
    return train.labels - X @ beta


def _run_method(method, train, test, cfg, report):
    res = MethodResult(method)
    y = test.labels
    if method == "mean":
        pred = np.full(len(test), train.labels.mean())
        var = train.labels.var()
    elif method == "knn_average":
        k = cfg.knn_k if cfg.knn_k is not None else cfg.kcn.k
        pred = knn_average_many(train, test.locations, k)
        res.config = {"k": k}
        var = None
    elif method == "local_kriging":
        k = min(cfg.kriging_k, len(train))
        vg = fit_from_data(train.locations, trend_residuals(train))
        pred = local_kriging_predict_many(train, test.locations, test.features, k, vg)
        res.config = {"k": k, "variogram": vg.to_dict()}
        var = None
    elif method in KCN_METHODS:
        model, overrides = _select_kcn(train, cfg.kcn, cfg.grid, method)
        res.config = model.config.to_dict()
        report.train_logs[method] = model.log
        out = model.kernel().predict_many(model.theta, *km.query_graphs(
            model, train, test.locations, test.features))
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"{method}: non-finite predictions")
        if model.config.loss == "zip":
            pred = km.zip_mean(out)
            nll = zip_nll(out[:, 0], out[:, 1], y)
            res.nll, res.nll_stderr = float(nll.mean()), _stderr(nll)
            var = None
        else:
            pred = out[:, 0] * model.scaler.label_std + model.scaler.label_mean
            var = _residual_var(model, train) if cfg.gaussian_nll else None
    elif method == "global_gcn":
        k = cfg.knn_k if cfg.knn_k is not None else cfg.kcn.k
        pred = global_gcn_baseline(train, test, k, cfg.gcn)
        res.config = {"k": k, **asdict(cfg.gcn)}
        var = None
    else:
        raise KcnError(f"unknown method {method!r}")
    res.mse, res.mse_stderr = squared_error_stats(pred, y)
    if cfg.gaussian_nll and res.nll is None:
        if var is None:
            var = _neighbour_residual_var(train, cfg)
        nll = gaussian_nll(pred, y, var)
        res.nll, res.nll_stderr = float(nll.mean()), _stderr(nll)
    return res


def _neighbour_residual_var(train, cfg):
    # methods without a training residual use the leave-one-out neighbour-average residual
    k = cfg.knn_k if cfg.knn_k is not None else max(cfg.kcn.k, 1)
    idx, _ = train.index.query_many(train.locations, k, np.arange(len(train)))
    return float(np.mean((train.labels[idx].mean(axis=1) - train.labels) ** 2))


def run_benchmark(train, test, config: BenchmarkConfig | None = None, seed: int | None = None) -> MetricsReport:
    """Train and evaluate each configured method; failures are recorded, not raised."""
    cfg = BenchmarkConfig() if config is None else config
    if seed is not None:
        cfg = replace(cfg, kcn=replace(cfg.kcn, seed=seed), gcn=replace(cfg.gcn, seed=seed))
    meta = {"seed": cfg.kcn.seed, "config": cfg.to_dict(), "config_hash": config_hash(cfg.to_dict()),
            "train_hash": train.digest(), "test_hash": test.digest(),
            "n_train": len(train), "n_test": len(test)}
    log.info("benchmark seed=%d config=%s", meta["seed"], meta["config_hash"])
    report = MetricsReport({}, meta)
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            res = _run_method(method, train, test, cfg, report)
        except (KcnError, ValueError, ArithmeticError) as exc:
            log.warning("%s failed: %s", method, exc)
            res = MethodResult(method, error=f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        report.results[method] = res
    if cfg.sweep_ks:
        report.sweep = k_sweep(train, test, cfg.kcn, cfg.sweep_ks)
    return report


def k_sweep(train, test, base: km.KcnConfig, ks, methods=("kcn", "knn_average")):
    """Test MSE against the neighbour count for each method (rows of dicts)."""
    rows = []
    for k in ks:
        for method in methods:
            row = {"method": method, "k": int(k), "mse": float("nan"), "mse_stderr": float("nan")}
            try:
                if method == "knn_average":
                    pred = knn_average_many(train, test.locations, k)
                else:
                    model = km.train(train, _kcn_config(base, method, k=int(k)))
                    pred = km.predict_many(model, train, test.locations, test.features)
                    if model.config.loss == "zip":
                        pred = km.zip_mean(pred)
                row["mse"], row["mse_stderr"] = squared_error_stats(pred, test.labels)
            except (KcnError, ValueError) as exc:
                log.info("sweep %s K=%d skipped: %s", method, k, exc)
            rows.append(row)
    return rows
