"""Per-sample local graphs: kernel adjacency, GCN normalisation, input matrix,
and the kriging-equivalent adjacency.

Row 0 of every matrix built here is the centre (the point being predicted).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_solve

from .errors import InvalidInput, SingularSystem
from .kriging import check_rank, factor
from .variogram import VariogramModel, semivariance_matrix


@dataclass
class LocalGraph:
    """Neighbourhood of one centre.  ``target`` never enters ``H0``."""

    neighbor_indices: np.ndarray
    A: np.ndarray
    H0: np.ndarray
    target: float = float("nan")
    center_index: int = -1

    @property
    def n_nodes(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class KrigingAdjacency:
    matrix: np.ndarray
    z: float
    t: float
    r: float


def gaussian_adjacency(coords, phi: float) -> np.ndarray:
    """``A_jk = exp(-|s_j - s_k|^2 / (2 phi^2))`` with an exact unit diagonal.

    ``coords`` has shape ``(n, 2)`` or ``(batch, n, 2)``.
    """
    if not phi > 0:
        raise InvalidInput("kernel length must be positive")
    s = np.asarray(coords, dtype=np.float64)
    if s.ndim not in (2, 3) or s.shape[-1] != 2:
        raise InvalidInput(f"coordinates must have shape (n, 2) or (batch, n, 2), got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise InvalidInput("coordinates must be finite")
    d2 = ((s[..., :, None, :] - s[..., None, :, :]) ** 2).sum(axis=-1)
    A = np.exp(-d2 / (2.0 * phi * phi))
    diag = np.arange(s.shape[-2])
    A[..., diag, diag] = 1.0
    return A


def normalize_adjacency(A) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with ``D = diag(A 1 + 1)``; batches allowed."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim not in (2, 3) or A.shape[-1] != A.shape[-2]:
        raise InvalidInput("adjacency must be square")
    if np.any(A < 0):
        raise InvalidInput("adjacency entries must be nonnegative")
    r = 1.0 / np.sqrt(A.sum(axis=-1) + 1.0)
    return (A + np.eye(A.shape[-1])) * r[..., :, None] * r[..., None, :]


def assemble_input(center_features, neighbor_features, neighbor_labels) -> np.ndarray:
    """Input matrix with rows ``[0, 1, x_center]`` then ``[y_j, 0, x_j]`` per neighbour."""
    xc = np.asarray(center_features, dtype=np.float64).reshape(-1)
    d = len(xc)
    yk = np.asarray(neighbor_labels, dtype=np.float64).reshape(-1)
    Xk = np.asarray(neighbor_features, dtype=np.float64).reshape(len(yk), -1) if len(yk) else np.zeros((0, d))
    if Xk.shape[1] != d:
        raise InvalidInput(f"neighbour features have {Xk.shape[1]} columns, centre has {d}")
    H0 = np.zeros((len(yk) + 1, 2 + d))
    H0[0, 1] = 1.0
    H0[0, 2:] = xc
    H0[1:, 0] = yk
    H0[1:, 2:] = Xk
    return H0


def kriging_adjacency(vg: VariogramModel, locations, features) -> KrigingAdjacency:
    """Adjacency whose first row reproduces universal-kriging weights.

    ``locations`` and ``features`` (the trend design rows) are stacked with the
    query first.  The result is ``Gt^-1 - Gt^-1 X (X^T Gt^-1 X)^-1 X^T Gt^-1`` where
    ``Gt`` is the semivariance matrix over query and neighbours with a zero
    query self-entry.  Its first row equals ``[1, -lambda] / z``.
    """
    if not vg.nugget > 0:
        raise InvalidInput("kriging adjacency requires a positive nugget")
    s = np.asarray(locations, dtype=np.float64).reshape(-1, 2)
    Xt = np.asarray(features, dtype=np.float64).reshape(len(s), -1)
    if len(s) < 2:
        raise InvalidInput("need the query and at least one neighbour")
    check_rank(Xt, "stacked design")
    Gt = semivariance_matrix(vg, s)
    G, g = Gt[1:, 1:], Gt[1:, 0]
    X, xs = Xt[1:], Xt[0]
    if not np.any(g):
        raise SingularSystem("query semivariances are all zero")
    try:
        lu = factor(G)
    except SingularSystem:
        return _adjacency_direct(Gt, Xt)

    sol = lu_solve(lu, np.column_stack([g, X, np.eye(len(g))]), check_finite=False)
    gi_g, gi_x, g_inv = sol[:, 0], sol[:, 1:1 + X.shape[1]], sol[:, 1 + X.shape[1]:]
    g_inv = 0.5 * (g_inv + g_inv.T)
    a = -gi_g
    t = float(g @ a)
    if t == 0.0:
        raise SingularSystem("Schur complement of the query block vanishes")
    c = xs + X.T @ a
    T = X.T @ gi_x
    try:
        r = float(c @ np.linalg.solve(T, c))
    except np.linalg.LinAlgError:
        raise SingularSystem("X^T Gamma^-1 X is singular") from None

    head = np.concatenate([[1.0], a])
    gt_inv = np.outer(head, head) / t
    gt_inv[1:, 1:] += g_inv
    F = np.outer(head, c) / t
    F[1:] += gi_x
    S_inv = np.outer(c, c) / t + T
    try:
        FS = np.linalg.solve(S_inv, F.T).T
    except np.linalg.LinAlgError:
        raise SingularSystem("X~^T Gamma~^-1 X~ is singular") from None
    Abar = gt_inv - FS @ F.T
    Abar = 0.5 * (Abar + Abar.T)
    return KrigingAdjacency(Abar, t + r, t, r)


def _adjacency_direct(Gt, Xt):
    # neighbour block singular (e.g. a single neighbour with zero self-semivariance)
    lu = factor(Gt, "augmented semivariance matrix")
    n = len(Gt)
    gt_inv = lu_solve(lu, np.eye(n), check_finite=False)
    gt_inv = 0.5 * (gt_inv + gt_inv.T)
    F = gt_inv @ Xt
    FS = np.linalg.solve(Xt.T @ F, F.T).T
    Abar = gt_inv - FS @ F.T
    Abar = 0.5 * (Abar + Abar.T)
    if Abar[0, 0] == 0.0:
        raise SingularSystem("kriging adjacency has a zero corner")
    z = 1.0 / Abar[0, 0]
    return KrigingAdjacency(Abar, float(z), float("nan"), float("nan"))
