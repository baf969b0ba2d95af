"""Kriging convolutional networks: per-sample local graphs fed to a GCN,
attention-GCN or GraphSAGE backbone, followed by a dense head on the centre row.

Training visits every training point as a centre, hides its label, and fits it
from its ``K`` nearest training neighbours.  Prediction is inductive: a new
point only needs its neighbours in the training set.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import _backend
from . import nn_core as nn
from ._layout import BACKBONES, LOSSES, Layout
from .errors import CheckpointError, InvalidInput, NumericalError, TrainingFailed
from .graph_builder import (LocalGraph, assemble_input, gaussian_adjacency, kriging_adjacency,
                            normalize_adjacency)
from .kriging import design_matrix

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "kcn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class KcnConfig:
    backbone: str = "gcn"
    k: int = 10
    phi: float = 0.5
    hidden_sizes: tuple = (20, 10)
    dropout: float = 0.25
    loss: str = "mse"
    normalize_adjacency: bool = False
    include_coords_as_features: bool = False
    epochs: int = 300
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0
    lr: float = 1e-2
    strict_order: bool = False

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.backbone not in BACKBONES:
            raise InvalidInput(f"backbone must be one of {sorted(BACKBONES)}")
        if self.loss not in LOSSES:
            raise InvalidInput(f"loss must be one of {sorted(LOSSES)}")
        if self.k < 0:
            raise InvalidInput("k must be nonnegative")
        if self.backbone == "sage" and self.k < 1:
            raise InvalidInput("the sage backbone needs at least one neighbour")
        if self.backbone != "sage" and not self.phi > 0:
            raise InvalidInput("kernel length phi must be positive")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise InvalidInput("hidden sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInput("dropout must lie in [0, 1)")
        if not 0.0 <= self.val_fraction < 1.0:
            raise InvalidInput("val_fraction must lie in [0, 1)")

    @property
    def out_dim(self):
        return 2 if self.loss == "zip" else 1

    def to_dict(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Scaler:
    """Affine standardisation of features and (for the MSE head) labels."""

    feature_mean: np.ndarray
    feature_std: np.ndarray
    label_mean: float = 0.0
    label_std: float = 1.0

    @classmethod
    def fit(cls, features, labels, scale_labels):
        mean = features.mean(axis=0) if features.shape[1] else np.zeros(0)
        std = features.std(axis=0) if features.shape[1] else np.zeros(0)
        std = np.where(std > 0, std, 1.0)
        if scale_labels:
            s = float(labels.std())
            return cls(mean, std, float(labels.mean()), s if s > 0 else 1.0)
        return cls(mean, std)

    def features(self, x):
        return (x - self.feature_mean) / self.feature_std

    def labels(self, y):
        return (y - self.label_mean) / self.label_std


@dataclass
class TrainedModel:
    config: KcnConfig
    theta: np.ndarray
    scaler: Scaler
    n_features: int
    log: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def layout(self) -> Layout:
        return Layout(self.config.backbone, network_dims(self.config, self.n_features),
                      self.config.out_dim)

    def kernel(self, backend=None):
        mod = _backend.kernels if backend is None else _backend.available()[backend]
        return mod.NetKernel(self.config.backbone, network_dims(self.config, self.n_features),
                             self.config.out_dim, self.config.loss)

    def parameters(self):
        """Name -> array view of every weight."""
        return self.layout.views(self.theta)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    def to_dict(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "n_features": self.n_features,
            "shapes": {name: list(shape) for name, shape, _ in self.layout.entries},
            "theta": self.theta.tolist(),
            "scaler": {
                "feature_mean": self.scaler.feature_mean.tolist(),
                "feature_std": self.scaler.feature_std.tolist(),
                "label_mean": self.scaler.label_mean,
                "label_std": self.scaler.label_std,
            },
            "best_epoch": self.best_epoch,
            "log": self.log,
        }

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CheckpointError(f"{path}: not a JSON checkpoint ({exc})") from None
        return cls.from_dict(d)

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError("not a KCN checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {d.get('version')}")
        config = KcnConfig.from_dict(d["config"])
        n_features = int(d["n_features"])
        layout = Layout(config.backbone, network_dims(config, n_features), config.out_dim)
        expected = {name: list(shape) for name, shape, _ in layout.entries}
        if d["shapes"] != expected:
            raise CheckpointError(f"checkpoint shapes {d['shapes']} do not match config {expected}")
        theta = np.asarray(d["theta"], dtype=np.float64)
        if theta.shape != (layout.size,):
            raise CheckpointError(f"checkpoint has {theta.size} weights, expected {layout.size}")
        s = d["scaler"]
        scaler = Scaler(np.asarray(s["feature_mean"], dtype=np.float64),
                        np.asarray(s["feature_std"], dtype=np.float64),
                        float(s["label_mean"]), float(s["label_std"]))
        return cls(config, theta, scaler, n_features, list(d.get("log", [])), int(d.get("best_epoch", -1)))


def network_dims(config: KcnConfig, n_features: int):
    d = n_features + (2 if config.include_coords_as_features else 0)
    return [2 + d, *config.hidden_sizes]


def _raw_features(ds, include_coords):
    if include_coords:
        return np.column_stack([ds.features, ds.locations])
    return ds.features


def _neighbors(train, locations, k, exclude=None):
    if k == 0:
        return np.zeros((len(locations), 0), dtype=np.int64)
    idx, _ = train.index.query_many(locations, k, exclude)
    return idx


def _graph_batch(config, scaler, train_feats, train_labels, train_locs,
                 center_locs, center_feats, nb):
    """A and H0 tensors for a batch of centres with neighbour index rows ``nb``."""
    m, k = nb.shape
    coords = np.concatenate([center_locs[:, None, :], train_locs[nb]], axis=1)
    if config.backbone == "sage":
        A = np.ones((m, k + 1, k + 1))
    else:
        A = gaussian_adjacency(coords, config.phi)
    if config.normalize_adjacency:
        A = normalize_adjacency(A)
    xf = scaler.features(train_feats)
    d = xf.shape[1]
    H0 = np.zeros((m, k + 1, 2 + d))
    H0[:, 0, 1] = 1.0
    H0[:, 0, 2:] = scaler.features(center_feats)
    H0[:, 1:, 0] = train_labels[nb]
    H0[:, 1:, 2:] = xf[nb]
    return np.ascontiguousarray(A), np.ascontiguousarray(H0)


def _scaled_labels(config, scaler, labels):
    return scaler.labels(labels) if config.loss == "mse" else labels


def build_neighborhood(train, center, config: KcnConfig, scaler: Scaler | None = None) -> LocalGraph:
    """Local graph for a training index (its own point excluded) or a new
    ``(location, features)`` query."""
    inc = config.include_coords_as_features
    feats = _raw_features(train, inc)
    if scaler is None:
        scaler = Scaler(np.zeros(feats.shape[1]), np.ones(feats.shape[1]))
    if isinstance(center, (int, np.integer)):
        i = int(center)
        if not 0 <= i < len(train):
            raise InvalidInput(f"centre index {i} out of range")
        limit = len(train) - 1
        loc, x, target, ex = train.locations[i], feats[i], float(train.labels[i]), i
    else:
        loc, x = center
        loc = np.asarray(loc, dtype=np.float64).reshape(2)
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if inc:
            x = np.concatenate([x, loc])
        limit, target, ex, i = len(train), float("nan"), None, -1
    if not 0 <= config.k <= limit:
        raise InvalidInput(f"K={config.k} out of range [0, {limit}]")
    if x.shape != (feats.shape[1],):
        raise InvalidInput(f"query has {x.shape[0]} features, training data has {feats.shape[1]}")
    exclude = None if ex is None else np.array([ex])
    nb = _neighbors(train, loc[None, :], config.k, exclude)
    labels = _scaled_labels(config, scaler, train.labels)
    A, H0 = _graph_batch(config, scaler, feats, labels, train.locations, loc[None, :], x[None, :], nb)
    return LocalGraph(nb[0], A[0], H0[0], target, i)


def training_graphs(train, config, scaler):
    feats = _raw_features(train, config.include_coords_as_features)
    if not config.k <= len(train) - 1:
        raise InvalidInput(f"K={config.k} needs more than {len(train)} training points")
    nb = _neighbors(train, train.locations, config.k, np.arange(len(train)))
    labels = _scaled_labels(config, scaler, train.labels)
    A, H0 = _graph_batch(config, scaler, feats, labels, train.locations, train.locations, feats, nb)
    return A, H0, nb


def query_graphs(model, train, locations, features):
    config = model.config
    locations = np.asarray(locations, dtype=np.float64).reshape(-1, 2)
    feats = _raw_features(train, config.include_coords_as_features)
    qf = np.asarray(features, dtype=np.float64).reshape(len(locations), -1)
    if config.include_coords_as_features:
        qf = np.column_stack([qf, locations])
    if qf.shape[1] != feats.shape[1]:
        raise InvalidInput(f"queries have {qf.shape[1]} features, training data has {feats.shape[1]}")
    if config.k > len(train):
        raise InvalidInput(f"K={config.k} exceeds the training set size {len(train)}")
    nb = _neighbors(train, locations, config.k)
    labels = _scaled_labels(config, model.scaler, train.labels)
    return _graph_batch(config, model.scaler, feats, labels, train.locations, locations, qf, nb)


def _per_sample_loss(config, out, y):
    if config.loss == "mse":
        return (out[:, 0] - y) ** 2
    return nn.zip_nll(out[:, 0], out[:, 1], y)


def init_model(train, config: KcnConfig) -> TrainedModel:
    feats = _raw_features(train, config.include_coords_as_features)
    scaler = Scaler.fit(feats, train.labels, config.loss == "mse")
    if config.loss == "zip":
        nn.check_count(train.labels)
    layout = Layout(config.backbone, network_dims(config, train.d), config.out_dim)
    theta = layout.init_theta(np.random.default_rng(config.seed))
    return TrainedModel(config, theta, scaler, train.d)


def train(train, config: KcnConfig, backend: str | None = None) -> TrainedModel:
    """Fit a KCN by per-sample Adam steps with early stopping on a held-out split.

    The neighbour pool is the whole training set; validation centres are only
    withheld as targets.  Returns the best-validation weights.
    """
    n = len(train)
    if n < 10 or n <= config.k:
        raise InvalidInput(f"need at least 10 and more than K={config.k} training points, got {n}")
    model = init_model(train, config)
    mrng = np.random.default_rng([config.seed, 1])
    perm = mrng.permutation(n)
    n_val = int(math.ceil(config.val_fraction * n)) if config.val_fraction > 0 else 0
    val_idx, fit_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])

    A, H0, _ = training_graphs(train, config, model.scaler)
    y = np.ascontiguousarray(_scaled_labels(config, model.scaler, train.labels))
    kernel = model.kernel(backend)
    layout = kernel.layout
    theta = model.theta
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    step = 0
    unit = model.scaler.label_std ** 2 if config.loss == "mse" else 1.0
    best_val, best_theta, best_epoch, stale = np.inf, theta.copy(), 0, 0
    msize = layout.mask_size(A.shape[1])
    for epoch in range(1, config.epochs + 1):
        order = fit_idx if config.strict_order else mrng.permutation(fit_idx)
        masks = None
        if config.dropout > 0:
            masks = np.ascontiguousarray(nn.dropout_mask(mrng, (n, msize), config.dropout))
        t0 = time.perf_counter()
        total, step = kernel.train_epoch(theta, m, v, step, config.lr, 0.9, 0.999, 1e-8,
                                         A, H0, y, np.ascontiguousarray(order, dtype=np.int64), masks)
        elapsed = time.perf_counter() - t0
        train_loss = total / max(len(order), 1) * unit
        if n_val:
            out = kernel.predict_many(theta, A[val_idx], H0[val_idx])
            val_loss = float(np.mean(_per_sample_loss(config, out, y[val_idx]))) * unit
        else:
            val_loss = train_loss
        model.log.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                          "seconds": elapsed})
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)) or not np.all(np.isfinite(theta)):
            raise TrainingFailed(f"training diverged at epoch {epoch}", model.log)
        if val_loss < best_val:
            best_val, best_theta, best_epoch, stale = val_loss, theta.copy(), epoch, 0
        else:
            stale += 1
            if n_val and stale >= config.patience:
                break
    model.theta = best_theta
    model.best_epoch = best_epoch
    log.info("trained %s K=%d: best epoch %d val %.5g", config.backbone, config.k, best_epoch, best_val)
    return model


def forward(model: TrainedModel, g: LocalGraph, train_mode: bool = False, rng=None,
            backend: str | None = None) -> np.ndarray:
    """Raw head output for one local graph (standardised units for the MSE head)."""
    kernel = model.kernel(backend)
    A = np.ascontiguousarray(g.A)
    H0 = np.ascontiguousarray(g.H0)
    if not train_mode or model.config.dropout == 0:
        return kernel.forward(model.theta, A, H0)
    rng = np.random.default_rng() if rng is None else rng
    mask = nn.dropout_mask(rng, kernel.layout.mask_size(A.shape[0]), model.config.dropout)
    out = _pykernels_forward(model, A, H0, mask)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite network output")
    return out


def _pykernels_forward(model, A, H0, mask):
    from ._pykernels import NetKernel
    k = NetKernel(model.config.backbone, network_dims(model.config, model.n_features),
                  model.config.out_dim, model.config.loss)
    params = k._params(model.theta, None)
    return k._forward(None, params, A, H0, mask).value.reshape(-1)


def _decode(model, out):
    if model.config.loss == "mse":
        return out[:, 0] * model.scaler.label_std + model.scaler.label_mean
    return out


def predict_many(model: TrainedModel, train, locations, features, backend=None) -> np.ndarray:
    """Inductive predictions for a batch of queries.

    MSE models return label values; ZIP models return ``(M, 2)`` rows of
    ``[u, log_rate]`` (see :func:`zip_mean`).
    """
    A, H0 = query_graphs(model, train, locations, features)
    out = model.kernel(backend).predict_many(model.theta, A, H0)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite network output")
    return _decode(model, out)


def predict(model: TrainedModel, train, query_location, query_features, backend=None):
    out = predict_many(model, train, np.reshape(query_location, (1, 2)),
                       np.reshape(np.asarray(query_features, dtype=np.float64), (1, -1)), backend)
    return float(out[0]) if model.config.loss == "mse" else out[0]


def zip_mean(out):
    """Expected count ``expit(u) * exp(log_rate)`` from ZIP head outputs."""
    out = np.asarray(out, dtype=np.float64).reshape(-1, 2)
    from scipy.special import expit
    return expit(out[:, 0]) * np.exp(out[:, 1])


def kriging_emulation_predict(train, query_location, query_features, k: int, vg,
                              intercept: bool = True) -> float:
    """Kriging prediction produced by a one-layer KCN with hand-set weights.

    The adjacency is :func:`~kcn.graph_builder.kriging_adjacency`, ``W1`` selects
    the label and indicator columns, the activation is :func:`~kcn.nn_core.sigma_div`
    and the dense head is ``[1, 0]`` with identity activation.
    """
    loc = np.asarray(query_location, dtype=np.float64).reshape(2)
    nb = train.index.k_nearest(loc, k).indices
    xq = np.asarray(query_features, dtype=np.float64).reshape(1, -1)
    design = design_matrix(np.vstack([xq, train.features[nb]]), intercept)
    coords = np.vstack([loc[None, :], train.locations[nb]])
    adj = kriging_adjacency(vg, coords, design)
    H0 = assemble_input(design[0], design[1:], train.labels[nb])
    W1 = np.zeros((H0.shape[1], 2))
    W1[0, 0] = W1[1, 1] = 1.0
    h = nn.gcn_layer(None, adj.matrix, H0, W1, "identity")
    hrow = nn.sigma_div(h.value[0])
    w_den = np.array([[1.0], [0.0]])
    return float(nn.dense(None, hrow, w_den, "identity").value[0, 0])
