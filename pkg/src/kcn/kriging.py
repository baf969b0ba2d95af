"""Universal kriging weights and local (nearest-k) kriging predictions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgWarning, lapack, lu_factor, lu_solve

from .errors import InvalidInput, RankDeficient, SingularSystem
from .variogram import VariogramModel, semivariance_matrix

COND_LIMIT = 1e12


class KrigingWarning(UserWarning):
    """Emitted when local kriging falls back to an intercept-only trend."""


@dataclass(frozen=True)
class KrigingSystem:
    """Semivariances between ``n`` neighbours (``Gamma``) and to the query (``gamma``),
    plus the trend design rows ``X`` (n x d) and ``x_star`` (d,)."""

    Gamma: np.ndarray
    gamma: np.ndarray
    X: np.ndarray
    x_star: np.ndarray

    @property
    def n(self):
        return len(self.gamma)


def design_matrix(features, intercept: bool = True) -> np.ndarray:
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if intercept:
        f = np.column_stack([np.ones(len(f)), f])
    return f


def build_system(vg: VariogramModel, locations, X, query_location, x_star) -> KrigingSystem:
    locs = np.asarray(locations, dtype=np.float64).reshape(-1, 2)
    q = np.asarray(query_location, dtype=np.float64).reshape(1, 2)
    Gamma = semivariance_matrix(vg, locs)
    gamma = semivariance_matrix(vg, locs, q)[:, 0]
    return KrigingSystem(Gamma, gamma, np.asarray(X, dtype=np.float64).reshape(len(locs), -1),
                         np.asarray(x_star, dtype=np.float64).reshape(-1))


def check_rank(X, what="trend design"):
    n, d = X.shape
    if d > n or np.linalg.matrix_rank(X) < d:
        raise RankDeficient(f"{what} of shape {X.shape} is not of full column rank")


def factor(M, what="semivariance matrix"):
    """LU factors of ``M``, raising :class:`SingularSystem` when ill-conditioned."""
    if not np.all(np.isfinite(M)):
        raise SingularSystem(f"{what} has non-finite entries")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(M, check_finite=False)
    anorm = np.linalg.norm(M, 1)
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not rcond > 1.0 / COND_LIMIT:
        raise SingularSystem(f"{what} is singular or ill-conditioned (rcond={rcond:.3g})")
    return lu, piv


def kriging_weights(sys: KrigingSystem) -> np.ndarray:
    """Universal-kriging weights ``lambda`` with ``X^T lambda = x_star``.

    When ``X`` is square the unbiasedness constraint alone fixes the weights and
    ``Gamma`` is not consulted.
    """
    G, g, X, xs = sys.Gamma, sys.gamma, sys.X, sys.x_star
    n = len(g)
    if G.shape != (n, n) or X.shape[0] != n or X.shape[1] != len(xs):
        raise InvalidInput("kriging system dimensions do not conform")
    check_rank(X)
    if X.shape[1] == n:
        return np.linalg.solve(X.T, xs)
    lu = factor(G)
    sol = lu_solve(lu, np.column_stack([g, X]), check_finite=False)
    gi_g, gi_x = sol[:, 0], sol[:, 1:]
    T = X.T @ gi_x
    try:
        mu = np.linalg.solve(T, xs - X.T @ gi_g)
    except np.linalg.LinAlgError:
        raise RankDeficient("X^T Gamma^-1 X is singular") from None
    return gi_g + gi_x @ mu


def kriging_predict(weights, y) -> float:
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if w.shape != y.shape:
        raise InvalidInput(f"{len(w)} weights for {len(y)} labels")
    return float(w @ y)


def local_system(train, query_location, query_features, k, vg, intercept=True, exclude=None):
    """Neighbour indices and :class:`KrigingSystem` for one query."""
    nb = train.index.k_nearest(query_location, k, exclude)
    X = design_matrix(train.features[nb.indices], intercept)
    xs = design_matrix(np.asarray(query_features, dtype=np.float64).reshape(1, -1), intercept)[0]
    return nb.indices, build_system(vg, train.locations[nb.indices], X, query_location, xs)


def local_kriging_predict(train, query_location, query_features, k: int, vg: VariogramModel,
                          intercept: bool = True, exclude=None) -> float:
    """Universal kriging over the ``k`` training points nearest the query.

    If the neighbours' trend design is rank deficient the prediction is retried
    with an intercept-only trend and a :class:`KrigingWarning` is issued.
    """
    if not vg.nugget > 0:
        raise InvalidInput("local kriging requires a positive nugget")
    idx, sys = local_system(train, query_location, query_features, k, vg, intercept, exclude)
    try:
        lam = kriging_weights(sys)
    except RankDeficient:
        warnings.warn(f"rank-deficient trend at query {tuple(np.ravel(query_location))}; "
                      "using intercept-only kriging", KrigingWarning, stacklevel=2)
        ones = np.ones((sys.n, 1))
        lam = kriging_weights(KrigingSystem(sys.Gamma, sys.gamma, ones, np.ones(1)))
    return kriging_predict(lam, train.labels[idx])


def local_kriging_predict_many(train, query_locations, query_features, k, vg,
                               intercept=True) -> np.ndarray:
    qf = np.asarray(query_features, dtype=np.float64).reshape(len(query_locations), -1)
    return np.array([local_kriging_predict(train, s, x, k, vg, intercept)
                     for s, x in zip(np.asarray(query_locations), qf)])
