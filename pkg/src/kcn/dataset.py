"""The (locations, features, labels) container shared by all modules."""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import InvalidInput
from .spatial_index import SpatialIndex, as_points


class Dataset:
    """N spatial points with ``d`` features and one label each.

    The KD-tree over the locations is built lazily on first use of :attr:`index`.
    """

    def __init__(self, locations, features=None, labels=None, feature_names=None,
                 provenance: str = ""):
        self.locations = as_points(locations)
        n = len(self.locations)
        if features is None:
            features = np.zeros((n, 0))
        self.features = np.ascontiguousarray(features, dtype=np.float64).reshape(n, -1)
        if labels is None:
            raise InvalidInput("labels are required")
        self.labels = np.ascontiguousarray(labels, dtype=np.float64).reshape(-1)
        if len(self.labels) != n:
            raise InvalidInput(f"{len(self.labels)} labels for {n} locations")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.labels))):
            raise InvalidInput("features and labels must be finite")
        self.feature_names = list(feature_names) if feature_names is not None else [
            f"x{j}" for j in range(self.features.shape[1])]
        if len(self.feature_names) != self.features.shape[1]:
            raise InvalidInput("feature_names length does not match the feature matrix")
        self.provenance = provenance
        self._index = None

    def __len__(self):
        return len(self.labels)

    def __repr__(self):
        return f"Dataset(n={len(self)}, d={self.d}, provenance={self.provenance!r})"

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def index(self) -> SpatialIndex:
        if self._index is None:
            self._index = SpatialIndex(self.locations)
        return self._index

    def subset(self, idx, provenance=None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.locations[idx], self.features[idx], self.labels[idx],
                       self.feature_names, self.provenance if provenance is None else provenance)

    def with_coordinate_features(self) -> "Dataset":
        return Dataset(self.locations, np.column_stack([self.features, self.locations]),
                       self.labels, self.feature_names + ["s_x", "s_y"], self.provenance)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.locations, self.features, self.labels):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]
