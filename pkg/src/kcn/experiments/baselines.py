"""Reference predictors: neighbour averaging and a transductive global GCN."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .. import nn_core as nn
from ..errors import InvalidInput, TrainingFailed
from ..spatial_index import SpatialIndex

log = logging.getLogger(__name__)


def knn_average_baseline(train, query, k: int) -> float:
    """Unweighted mean label of the ``k`` training points nearest ``query``."""
    nb = train.index.k_nearest(query, k)
    return float(train.labels[nb.indices].mean())


def knn_average_many(train, queries, k: int) -> np.ndarray:
    idx, _ = train.index.query_many(np.asarray(queries, dtype=np.float64).reshape(-1, 2), k)
    return train.labels[idx].mean(axis=1)


def union_knn_graph(points, k: int) -> sp.csr_matrix:
    """Symmetric 0/1 graph with an edge ``(i, j)`` iff either is among the other's ``k`` nearest."""
    if k < 1:
        raise InvalidInput("the global GCN graph needs k >= 1")
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if k > n - 1:
        raise InvalidInput(f"k={k} needs more than {n} points")
    idx, _ = SpatialIndex(pts).query_many(pts, k, np.arange(n))
    rows = np.repeat(np.arange(n), k)
    g = sp.coo_matrix((np.ones(n * k), (rows, idx.ravel())), shape=(n, n)).tocsr()
    g = ((g + g.T) > 0).astype(np.float64)
    g.setdiag(0.0)
    g.eliminate_zeros()
    return g.tocsr()


def normalized_graph(g) -> sp.csr_matrix:
    deg = np.asarray(g.sum(axis=1)).ravel() + 1.0
    r = sp.diags(1.0 / np.sqrt(deg))
    return (r @ (g + sp.identity(g.shape[0])) @ r).tocsr()


@dataclass
class GlobalGcnConfig:
    hidden_sizes: tuple = (20, 10)
    dropout: float = 0.0
    lr: float = 1e-2
    epochs: int = 500
    patience: int = 20
    val_fraction: float = 0.1
    seed: int = 0


def global_gcn_baseline(train, test, k: int, config: GlobalGcnConfig | None = None) -> np.ndarray:
    """Transductive GCN over the union k-NN graph of train and test points.

    Inputs are the standardised features plus a constant column; labels never
    enter the input.  The MSE is masked to training nodes, with a seeded
    validation subset used for early stopping.  Returns test predictions.
    """
    config = GlobalGcnConfig() if config is None else config
    n_tr = len(train)
    pts = np.vstack([train.locations, test.locations])
    A = normalized_graph(union_knn_graph(pts, k))
    feats = np.vstack([train.features, test.features])
    std = feats.std(axis=0)
    feats = (feats - feats.mean(axis=0)) / np.where(std > 0, std, 1.0)
    X = np.column_stack([feats, np.ones(len(pts))])
    y_mean, y_std = train.labels.mean(), train.labels.std() or 1.0
    y = (train.labels - y_mean) / y_std

    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n_tr)
    n_val = int(np.ceil(config.val_fraction * n_tr))
    val, fit = perm[:n_val], perm[n_val:]
    dims = [X.shape[1], *config.hidden_sizes]
    weights = [nn.Parameter(nn.glorot_uniform(rng, (a, b)), name=f"W{i}")
               for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]
    weights.append(nn.Parameter(nn.glorot_uniform(rng, (dims[-1], 1)), name="w_den"))
    eye = sp.identity(len(pts), format="csr")
    state = nn.AdamState(lr=config.lr)

    def run(tape, train_mode):
        h = X
        for W in weights[:-1]:
            if train_mode and config.dropout > 0:
                h = nn.dropout(tape, h, nn.dropout_mask(rng, nn._val(h).shape, config.dropout))
            h = nn.gcn_layer(tape, A, h, W, "relu")
        return nn.gcn_layer(tape, eye, h, weights[-1], "identity")

    best, best_w, stale = np.inf, [w.value.copy() for w in weights], 0
    for epoch in range(1, config.epochs + 1):
        for w in weights:
            w.zero_grad()
        tape = nn.Tape()
        out = run(tape, True)
        pred = out.value[:n_tr, 0]
        resid = pred[fit] - y[fit]
        loss = float(np.mean(resid ** 2))
        seed = np.zeros_like(out.value)
        seed[fit, 0] = 2.0 * resid / len(fit)
        tape.backward(out, seed)
        nn.adam_step(weights, state)
        val_pred = run(None, False).value[:n_tr, 0]
        val_loss = float(np.mean((val_pred[val] - y[val]) ** 2)) if n_val else loss
        if not (np.isfinite(loss) and np.isfinite(val_loss)):
            raise TrainingFailed(f"global GCN diverged at epoch {epoch}")
        if val_loss < best:
            best, best_w, stale = val_loss, [w.value.copy() for w in weights], 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    for w, b in zip(weights, best_w):
        w.value[...] = b
    out = run(None, False).value[n_tr:, 0]
    return out * y_std + y_mean
