"""CSV ingestion, train/test splitting and synthetic Gaussian-process fields."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from ..dataset import Dataset
from ..errors import EmptyDataset, GenerationFailed, InvalidInput, SchemaError
from ..variogram import VariogramModel, semivariance_matrix

log = logging.getLogger(__name__)

MAX_SYNTH_POINTS = 3000
JITTER = 1e-10
NA_TOKENS = frozenset({"", "na", "nan", "null", "none"})


@dataclass
class Schema:
    """Column mapping for :func:`load_csv`."""

    loc_cols: tuple = ("x", "y")
    label_col: str = "label"
    feature_cols: tuple = ()
    categorical_cols: tuple = ()

    def __post_init__(self):
        self.loc_cols = tuple(self.loc_cols)
        self.feature_cols = tuple(self.feature_cols)
        self.categorical_cols = tuple(self.categorical_cols)
        if len(self.loc_cols) != 2:
            raise SchemaError("exactly two location columns are required")

    @property
    def required(self):
        return (*self.loc_cols, self.label_col, *self.feature_cols, *self.categorical_cols)


@dataclass
class LoadReport:
    n_read: int = 0
    n_dropped: int = 0
    indicator_columns: list = field(default_factory=list)


def _is_na(v):
    return v is None or v.strip().lower() in NA_TOKENS


def load_csv(path, schema: Schema, report: LoadReport | None = None) -> Dataset:
    """Read a headered CSV into a :class:`Dataset`.

    Rows with a missing value in any mapped column are dropped (and counted in
    ``report``).  Each categorical column becomes one 0/1 indicator per level,
    levels in sorted order.
    """
    report = LoadReport() if report is None else report
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in schema.required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        rows = []
        for row in reader:
            report.n_read += 1
            if any(_is_na(row[c]) for c in schema.required):
                report.n_dropped += 1
                continue
            rows.append(row)
    if report.n_dropped:
        log.info("%s: dropped %d of %d rows with missing values", path, report.n_dropped, report.n_read)
    if not rows:
        raise EmptyDataset(f"{path}: no complete rows")

    def numeric(col):
        try:
            return np.array([float(r[col]) for r in rows])
        except ValueError as exc:
            raise SchemaError(f"{path}: column {col!r} is not numeric ({exc})") from None

    locs = np.column_stack([numeric(c) for c in schema.loc_cols])
    labels = numeric(schema.label_col)
    cols, names = [numeric(c) for c in schema.feature_cols], list(schema.feature_cols)
    for c in schema.categorical_cols:
        values = [r[c].strip() for r in rows]
        for level in sorted(set(values)):
            cols.append(np.array([v == level for v in values], dtype=np.float64))
            names.append(f"{c}={level}")
            report.indicator_columns.append(names[-1])
    feats = np.column_stack(cols) if cols else np.zeros((len(rows), 0))
    return Dataset(locs, feats, labels, names, provenance=str(path))


def split_half(ds: Dataset, seed: int = 0):
    """Seeded 1:1 split; the training half gets the extra point when N is odd."""
    n = len(ds)
    if n < 2:
        raise InvalidInput("need at least two points to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = math.ceil(n / 2)
    return (ds.subset(np.sort(perm[:n_train]), f"{ds.provenance}:train"),
            ds.subset(np.sort(perm[n_train:]), f"{ds.provenance}:test"))


def synth_gp(n: int, vg: VariogramModel, trend_coeffs=None, d: int = 0, seed: int = 0,
             zero_inflate: float | None = None, count_scale: float = 1.0) -> Dataset:
    """Sample a field on the unit square with semivariogram ``vg``.

    Locations are uniform, features are standard normal (``d`` columns), and
    ``y = X beta + eps`` where ``eps`` has covariance ``sill - gamma(h)``.  With
    ``zero_inflate = pi`` the labels become counts
    ``Bernoulli(pi) * Poisson(exp(count_scale * y))``.
    """
    if not 1 <= n <= MAX_SYNTH_POINTS:
        raise InvalidInput(f"n must lie in [1, {MAX_SYNTH_POINTS}]")
    if d < 0:
        raise InvalidInput("d must be nonnegative")
    beta = np.zeros(d) if trend_coeffs is None else np.asarray(trend_coeffs, dtype=np.float64).reshape(-1)
    if beta.shape != (d,):
        raise InvalidInput(f"{beta.size} trend coefficients for {d} features")
    if zero_inflate is not None and not 0.0 <= zero_inflate <= 1.0:
        raise InvalidInput("zero_inflate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.0, 1.0, size=(n, 2))
    X = rng.standard_normal((n, d))
    cov = vg.sill - semivariance_matrix(vg, s)
    cov[np.diag_indices(n)] += JITTER
    try:
        Lc = cholesky(cov, lower=True, check_finite=False)
    except LinAlgError:
        raise GenerationFailed("covariance is not positive definite after jitter") from None
    y = X @ beta + Lc @ rng.standard_normal(n)
    if zero_inflate is not None:
        keep = rng.uniform(size=n) < zero_inflate
        y = np.where(keep, rng.poisson(np.exp(count_scale * y)), 0).astype(np.float64)
    return Dataset(s, X, y, provenance=f"synth_gp(n={n},{vg.kind},seed={seed})")
