"""Exact k-nearest-neighbour search over planar point sets.

The tree is a bucketed KD-tree with median splits on alternating axes.  It is
stored as flat node arrays so the same structure can be walked either by the
compiled kernel or by the pure-Python fallback.

Distances are planar Euclidean on the raw coordinates.  Project geographic
coordinates before indexing them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import InvalidInput

LEAF_SIZE = 8


@dataclass(frozen=True)
class NeighborList:
    """Neighbours sorted by ascending distance, ties broken by ascending index."""

    indices: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.indices)


def as_points(points) -> np.ndarray:
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInput(f"expected an (N, 2) array of locations, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidInput("locations must be finite")
    return pts


class SpatialIndex:
    """Immutable KD-tree over an ``(N, 2)`` array of locations.

    Parameters
    ----------
    points : array_like, shape (N, 2)
        Planar coordinates.  Row ``i`` keeps index ``i`` for the life of the index.
    leaf_size : int
        Maximum number of points stored in a leaf bucket.
    """

    def __init__(self, points, leaf_size: int = LEAF_SIZE):
        pts = as_points(points)
        if len(pts) == 0:
            raise InvalidInput("cannot index an empty point set")
        if leaf_size < 1:
            raise InvalidInput("leaf_size must be positive")
        self.points = pts
        self.points.setflags(write=False)
        self.leaf_size = int(leaf_size)
        self._build()

    def __len__(self):
        return len(self.points)

    @property
    def n(self) -> int:
        return len(self.points)

    def _build(self):
        n = len(self.points)
        perm = np.arange(n, dtype=np.int64)
        dims, splits, lefts, rights, starts, ends = [], [], [], [], [], []

        def new_node():
            dims.append(-1)
            splits.append(0.0)
            lefts.append(-1)
            rights.append(-1)
            starts.append(0)
            ends.append(0)
            return len(dims) - 1

        root = new_node()
        stack = [(root, 0, n, 0)]
        while stack:
            node, lo, hi, depth = stack.pop()
            starts[node], ends[node] = lo, hi
            if hi - lo <= self.leaf_size:
                continue
            axis = depth % 2
            block = perm[lo:hi]
            mid = (hi - lo) // 2
            order = np.argpartition(self.points[block, axis], mid)
            perm[lo:hi] = block[order]
            dims[node] = axis
            splits[node] = float(self.points[perm[lo + mid], axis])
            left, right = new_node(), new_node()
            lefts[node], rights[node] = left, right
            stack.append((right, lo + mid, hi, depth + 1))
            stack.append((left, lo, lo + mid, depth + 1))

        self.perm = perm
        self.node_dim = np.asarray(dims, dtype=np.int64)
        self.node_split = np.asarray(splits, dtype=np.float64)
        self.node_left = np.asarray(lefts, dtype=np.int64)
        self.node_right = np.asarray(rights, dtype=np.int64)
        self.node_start = np.asarray(starts, dtype=np.int64)
        self.node_end = np.asarray(ends, dtype=np.int64)

    def _tree(self):
        return (self.points, self.perm, self.node_dim, self.node_split,
                self.node_left, self.node_right, self.node_start, self.node_end)

    def _check_k(self, k, excluding):
        if isinstance(k, bool) or int(k) != k:
            raise InvalidInput(f"k must be an integer, got {k!r}")
        k = int(k)
        limit = self.n - (1 if excluding else 0)
        if k < 1 or k > limit:
            raise InvalidInput(f"k={k} out of range [1, {limit}]")
        return k

    def k_nearest(self, query, k: int, exclude: int | None = None) -> NeighborList:
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape != (2,) or not np.all(np.isfinite(q)):
            raise InvalidInput("query must be a finite 2-vector")
        if exclude is not None and not 0 <= exclude < self.n:
            raise InvalidInput(f"exclude index {exclude} out of range")
        k = self._check_k(k, exclude is not None)
        ex = -1 if exclude is None else int(exclude)
        idx, d2 = _backend.kernels.knn_query(*self._tree(), float(q[0]), float(q[1]), k, ex)
        return NeighborList(idx, np.sqrt(d2))

    def query_many(self, queries, k: int, exclude=None):
        """Batched :meth:`k_nearest`.

        ``exclude`` is either None or an integer array with one entry per query
        (``-1`` meaning no exclusion).  Returns ``(indices, distances)`` arrays of
        shape ``(M, k)``.
        """
        qs = as_points(queries)
        if exclude is None:
            ex = np.full(len(qs), -1, dtype=np.int64)
        else:
            ex = np.ascontiguousarray(exclude, dtype=np.int64)
            if ex.shape != (len(qs),):
                raise InvalidInput("exclude must have one entry per query")
            if np.any(ex >= self.n) or np.any(ex < -1):
                raise InvalidInput("exclude index out of range")
        k = self._check_k(k, bool(np.any(ex >= 0)))
        idx, d2 = _backend.kernels.knn_query_many(*self._tree(), qs, k, ex)
        return idx, np.sqrt(d2)


def build_index(points) -> SpatialIndex:
    return SpatialIndex(points)


def k_nearest(index: SpatialIndex, query, k: int, exclude: int | None = None) -> NeighborList:
    return index.k_nearest(query, k, exclude)
