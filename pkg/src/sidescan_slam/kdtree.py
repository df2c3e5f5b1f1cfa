"""Exact 2-D nearest-neighbor index over geo-referenced pixels.

A thin facade over a balanced median-split kd-tree (scipy's cKDTree) that
pins down the contract the matcher relies on: exact nearest neighbors under
Euclidean distance and a deterministic tie-break by lowest payload id.
"""

import numpy as np
from scipy.spatial import cKDTree


class KdTree2:
    """Static 2-D point index with integer payloads."""

    def __init__(self, points, payloads=None, leafsize=16):
        pts = np.ascontiguousarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must have shape (n, 2)")
        if pts.shape[0] == 0:
            raise ValueError("cannot build a kd-tree over zero points")
        if payloads is None:
            payloads = np.arange(pts.shape[0], dtype=np.int64)
        else:
            payloads = np.asarray(payloads, dtype=np.int64)
            if payloads.shape != (pts.shape[0],):
                raise ValueError("payloads must be one id per point")
        self._points = pts
        self._payloads = payloads
        self._tree = cKDTree(pts, leafsize=leafsize, balanced_tree=True)

    def __len__(self):
        return self._points.shape[0]

    def nearest(self, query):
        """Exact nearest neighbor of one query point.

        Ties in distance are broken by the lowest payload id. Returns
        ``(point, payload, distance)``.
        """
        q = np.asarray(query, dtype=float).reshape(2)
        dist, idx = self._tree.query(q, k=1)
        # Gather every point at the minimal distance and pick the lowest id.
        radius = float(dist) * (1.0 + 1e-12) + 1e-300
        cand = self._tree.query_ball_point(q, radius)
        cand = np.asarray(cand, dtype=np.int64)
        d2 = np.sum((self._points[cand] - q) ** 2, axis=1)
        best = cand[d2 <= d2.min()]
        payloads = self._payloads[best]
        pick = best[int(np.argmin(payloads))]
        return self._points[pick].copy(), int(self._payloads[pick]), float(
            np.sqrt(np.sum((self._points[pick] - q) ** 2))
        )

    def nearest_batch(self, queries, workers=1):
        """Exact nearest neighbors for a stack of queries.

        Returns ``(payloads, distances)``. Distance ties resolve to the
        tree's deterministic traversal choice; exactness of the distance is
        guaranteed either way.
        """
        qs = np.ascontiguousarray(queries, dtype=float)
        if qs.ndim != 2 or qs.shape[1] != 2:
            raise ValueError("queries must have shape (m, 2)")
        dists, idx = self._tree.query(qs, k=1, workers=workers)
        return self._payloads[idx], dists
