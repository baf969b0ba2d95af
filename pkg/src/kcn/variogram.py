"""Empirical semivariograms and parametric model fitting.

Three bounded model families are supported (spherical, exponential, gaussian).
Fitting is pair-count-weighted least squares per family; the family with the
smallest weighted residual sum of squares wins.

Semivariance convention used throughout the package: ``gamma`` of an index
with itself is 0, while two distinct indices separated by lag ``h`` (including
coincident locations, ``h = 0``) get ``nugget + psill * f(h)``, i.e. the nugget.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import EmptyVariogram, FitFailed, InsufficientData, InvalidInput
from .spatial_index import as_points

log = logging.getLogger(__name__)

KINDS = ("spherical", "exponential", "gaussian")
NUGGET_FLOOR = 1e-6
DEFAULT_BINS = 15
_PAIR_BLOCK = 512


@dataclass(frozen=True)
class EmpiricalVariogram:
    bin_centers: np.ndarray
    semivariances: np.ndarray
    pair_counts: np.ndarray

    def __len__(self):
        return len(self.bin_centers)


@dataclass(frozen=True)
class VariogramModel:
    kind: str
    nugget: float
    psill: float
    range: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown variogram kind {self.kind!r}; expected one of {KINDS}")
        if not (self.nugget >= 0 and self.psill >= 0 and self.range > 0):
            raise InvalidInput(f"invalid variogram parameters: {self}")
        if not all(np.isfinite([self.nugget, self.psill, self.range])):
            raise InvalidInput("variogram parameters must be finite")

    @property
    def sill(self) -> float:
        return self.nugget + self.psill

    def __call__(self, h):
        return model_semivariance(self, h)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_dict(self) -> dict:
        d = asdict(self)
        return {"kind": d["kind"], "nugget": d["nugget"], "psill": d["psill"], "range": d["range"]}

    @classmethod
    def from_dict(cls, d) -> "VariogramModel":
        try:
            return cls(str(d["kind"]), float(d["nugget"]), float(d["psill"]), float(d["range"]))
        except KeyError as exc:
            raise InvalidInput(f"variogram record missing field {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "VariogramModel":
        return cls.from_dict(json.loads(text))


def _shape(kind, h, rng_):
    """Normalised structure function ``f(h)``, with ``f(0) = 0`` and ``f(inf) = 1``."""
    x = h / rng_
    if kind == "exponential":
        return -np.expm1(-x)
    if kind == "gaussian":
        return -np.expm1(-x * x)
    return np.where(x < 1.0, 1.5 * x - 0.5 * x ** 3, 1.0)


def model_semivariance(model: VariogramModel, h):
    """Semivariance at lag(s) ``h`` between distinct points.

    ``h = 0`` returns the nugget; self-pairs are handled by :func:`semivariance_matrix`.
    """
    h = np.asarray(h, dtype=np.float64)
    if np.any(h < 0) or not np.all(np.isfinite(h)):
        raise InvalidInput("lags must be finite and nonnegative")
    out = model.nugget + model.psill * _shape(model.kind, h, model.range)
    return float(out) if out.ndim == 0 else out


def semivariance_matrix(model: VariogramModel, a, b=None):
    """Semivariances between the rows of ``a`` and ``b`` (planar coordinates).

    With ``b`` omitted the result is the square matrix over ``a`` with a zero
    diagonal (each point against itself).
    """
    a = np.asarray(a, dtype=np.float64)
    same = b is None
    b = a if same else np.asarray(b, dtype=np.float64)
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    g = model_semivariance(model, d)
    g = np.atleast_2d(g)
    if same:
        np.fill_diagonal(g, 0.0)
    return g


def _pairs(pts, vals, max_lag):
    """Yield (distance, half squared difference) for every pair i < j within max_lag."""
    n = len(pts)
    for lo in range(0, n, _PAIR_BLOCK):
        hi = min(n, lo + _PAIR_BLOCK)
        d = np.sqrt(((pts[lo:hi, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
        sq = 0.5 * (vals[lo:hi, None] - vals[None, :]) ** 2
        rows = np.arange(lo, hi)[:, None]
        keep = (np.arange(n)[None, :] > rows) & (d <= max_lag)
        yield d[keep], sq[keep]


def max_pair_distance(points):
    pts = as_points(points)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return float(np.hypot(*(hi - lo)))


def empirical_semivariogram(points, values, num_bins: int = DEFAULT_BINS,
                            max_lag: float | None = None) -> EmpiricalVariogram:
    """Method-of-moments semivariogram on equal-width lag bins over ``[0, max_lag]``.

    ``max_lag`` defaults to half the bounding-box diagonal.  Bin centres are the
    mean pair distance inside each bin; empty bins are dropped.
    """
    pts = as_points(points)
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    if len(vals) != len(pts):
        raise InvalidInput("values and points differ in length")
    if len(pts) < 2:
        raise InvalidInput("need at least two points")
    if num_bins < 1:
        raise InvalidInput("num_bins must be positive")
    if max_lag is None:
        max_lag = 0.5 * max_pair_distance(pts)
        if max_lag <= 0:
            raise EmptyVariogram("all points coincide")
    if not max_lag > 0:
        raise InvalidInput("max_lag must be positive")

    edges = np.linspace(0.0, max_lag, num_bins + 1)
    sums = np.zeros(num_bins)
    dsum = np.zeros(num_bins)
    counts = np.zeros(num_bins, dtype=np.int64)
    for d, sq in _pairs(pts, vals, max_lag):
        b = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, num_bins - 1)
        sums += np.bincount(b, weights=sq, minlength=num_bins)
        dsum += np.bincount(b, weights=d, minlength=num_bins)
        counts += np.bincount(b, minlength=num_bins)
    keep = counts > 0
    if not np.any(keep):
        raise EmptyVariogram(f"no pairs within max_lag={max_lag}")
    return EmpiricalVariogram(dsum[keep] / counts[keep], sums[keep] / counts[keep], counts[keep])


def weighted_rss(model: VariogramModel, emp: EmpiricalVariogram) -> float:
    r = model_semivariance(model, emp.bin_centers) - emp.semivariances
    return float(np.sum(emp.pair_counts * r * r))


def _initial_guesses(emp):
    g = emp.semivariances
    h = emp.bin_centers
    sill = max(float(np.max(g)), 1e-12)
    nug = max(float(g[0]), 0.0)
    hmax = float(h[-1])
    return [
        (min(nug, 0.9 * sill), max(sill - nug, 0.1 * sill), hmax / 3.0),
        (0.0, sill, hmax / 2.0),
        (0.1 * sill, 0.9 * sill, hmax / 6.0),
    ]


def _fit_kind(kind, emp, max_iter):
    h = emp.bin_centers
    w = np.sqrt(emp.pair_counts.astype(np.float64))
    g = emp.semivariances
    scale = max(float(np.max(g)), 1e-300)
    hscale = max(float(h[-1]), 1e-300)

    def resid(theta):
        nug, ps, rg = theta[0] * scale, theta[1] * scale, theta[2] * hscale
        return w * (nug + ps * _shape(kind, h, rg) - g) / scale

    best = None
    for nug0, ps0, rg0 in _initial_guesses(emp):
        x0 = np.array([nug0 / scale, ps0 / scale, rg0 / hscale])
        res = least_squares(resid, x0, bounds=([0.0, 0.0, 1e-6], [np.inf, np.inf, np.inf]),
                            method="trf", max_nfev=max_iter)
        if not np.all(np.isfinite(res.x)):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitFailed(f"{kind}: no finite solution")
    nug, ps, rg = best.x[0] * scale, best.x[1] * scale, best.x[2] * hscale
    nug = max(nug, NUGGET_FLOOR * (nug + ps))
    return VariogramModel(kind, float(nug), float(ps), float(rg))


def fit_variogram(emp: EmpiricalVariogram, kinds=KINDS, max_iter: int = 200,
                  return_all: bool = False):
    """Fit each kind and return the one with the smallest weighted RSS.

    With ``return_all`` the result is ``(best, {kind: (model, rss)})``.
    """
    kinds = tuple(kinds)
    if not kinds:
        raise InvalidInput("kinds must not be empty")
    for k in kinds:
        if k not in KINDS:
            raise InvalidInput(f"unknown variogram kind {k!r}")
    if len(emp) < 3:
        raise InsufficientData(f"need at least 3 lag bins, got {len(emp)}")
    fits, failures = {}, {}
    for kind in kinds:
        try:
            model = _fit_kind(kind, emp, max_iter)
        except (FitFailed, InvalidInput, ValueError) as exc:
            failures[kind] = str(exc)
            continue
        fits[kind] = (model, weighted_rss(model, emp))
        log.debug("variogram %s: %s rss=%.6g", kind, model, fits[kind][1])
    if not fits:
        raise FitFailed("variogram fitting failed for every kind", failures)
    best = min(fits, key=lambda k: fits[k][1])
    return (fits[best][0], fits) if return_all else fits[best][0]


def fit_from_data(points, values, kinds=KINDS, num_bins=DEFAULT_BINS, max_lag=None):
    return fit_variogram(empirical_semivariogram(points, values, num_bins, max_lag), kinds)
