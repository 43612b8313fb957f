"""Exact nearest-neighbour index over a point cloud.

One 3D kd-tree plus three 2D trees over the coordinate-plane projections.
All queries are exact; ties are broken by the smallest point index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kdtree
from .errors import InvalidArgumentError
from .geometry import Plane, PointCloud

PLANES = (Plane.XY, Plane.YZ, Plane.XZ)


@dataclass(frozen=True, eq=False)
class SpatialIndex:
    source: PointCloud
    tree: tuple
    planar: dict  # Plane -> tree

    def nearest(self, q) -> tuple[int, float]:
        q = _query_point(q)
        i, d = _kdtree.query_one(self.tree, q)
        return int(i), float(d)

    def nearest_projected(self, q, plane: Plane) -> tuple[int, float]:
        plane = Plane(plane)
        q = _query_point(q)[list(plane.axes)].copy()
        i, d = _kdtree.query_one(self.planar[plane], q)
        return int(i), float(d)

    def query(self, queries, plane: Plane | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized :meth:`nearest` / :meth:`nearest_projected` over an (m, 3) array."""
        queries = np.asarray(queries, dtype=np.float64)
        if queries.ndim != 2 or queries.shape[1] != 3:
            raise InvalidArgumentError("queries must have shape (m, 3)")
        if not np.all(np.isfinite(queries)):
            raise InvalidArgumentError("queries must be finite")
        if plane is None:
            tree, qs = self.tree, np.ascontiguousarray(queries)
        else:
            plane = Plane(plane)
            tree, qs = self.planar[plane], np.ascontiguousarray(queries[:, list(plane.axes)])
        idx = np.empty(qs.shape[0], dtype=np.int64)
        d = np.empty(qs.shape[0])
        _kdtree.query(tree, qs, idx, d)
        return idx, d


def _query_point(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (3,) or not np.all(np.isfinite(q)):
        raise InvalidArgumentError("query must be a finite 3-vector")
    return q


def build_index(cloud: PointCloud) -> SpatialIndex:
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(cloud)
    pts = cloud.points
    tree = _kdtree.build_tree(np.ascontiguousarray(pts), _kdtree.LEAF_SIZE)
    planar = {
        p: _kdtree.build_tree(np.ascontiguousarray(pts[:, list(p.axes)]), _kdtree.LEAF_SIZE)
        for p in PLANES
    }
    return SpatialIndex(cloud, tree, planar)
