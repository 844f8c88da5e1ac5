"""Exact k-nearest-neighbor search over a static point set.

A median-split KD-tree with best-first backtracking: a subtree is pruned
only when the query's distance to its splitting hyperplane already
exceeds the current k-th best distance, so results are exactly the
brute-force answer. Neighbors are ordered by (distance, index), which
also makes ties deterministic.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

__all__ = ["KDTree", "brute_force_knn"]


def brute_force_knn(points: np.ndarray, query: np.ndarray, k: int) -> list[tuple[float, int]]:
    """Reference linear scan; returns [(distance, index)] sorted."""
    q = np.asarray(query, dtype=np.float64)
    d = np.sqrt(((points - q) ** 2).sum(axis=1))
    order = np.lexsort((np.arange(len(points)), d))
    return [(float(d[i]), int(i)) for i in order[:k]]


@dataclass
class _Node:
    axis: int
    threshold: float
    index: int               # the splitting point's row
    left: "_Node | None"
    right: "_Node | None"


class KDTree:
    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or len(points) == 0:
            raise ValueError("points must be a non-empty 2-D array")
        if not np.all(np.isfinite(points)):
            raise ValueError("points must be finite")
        self.points = points
        self.dim = points.shape[1]
        self._root = self._build(np.arange(len(points)), depth=0)

    def __len__(self) -> int:
        return len(self.points)

    def _build(self, idx: np.ndarray, depth: int) -> _Node | None:
        if len(idx) == 0:
            return None
        axis = depth % self.dim
        # stable sort on (coordinate, index) keeps duplicates deterministic
        order = np.lexsort((idx, self.points[idx, axis]))
        idx = idx[order]
        mid = len(idx) // 2
        node_index = int(idx[mid])
        return _Node(
            axis=axis,
            threshold=float(self.points[node_index, axis]),
            index=node_index,
            left=self._build(idx[:mid], depth + 1),
            right=self._build(idx[mid + 1:], depth + 1),
        )

    def query(self, point: np.ndarray, k: int = 1) -> list[tuple[float, int]]:
        """k nearest rows as [(distance, index)], sorted by (distance, index).

        k larger than the point count returns every point.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(point, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query must have dimension {self.dim}")
        k = min(k, len(self.points))
        # max-heap of the best k so far, keyed by (-distance, -index)
        heap: list[tuple[float, int]] = []

        def visit(node: _Node | None) -> None:
            if node is None:
                return
            d = float(np.sqrt(((self.points[node.index] - q) ** 2).sum()))
            entry = (-d, -node.index)
            if len(heap) < k:
                heapq.heappush(heap, entry)
            elif entry > heap[0]:
                heapq.heapreplace(heap, entry)
            diff = float(q[node.axis] - node.threshold)
            near, far = (node.left, node.right) if diff < 0 else (node.right, node.left)
            visit(near)
            # the far side can only help if the splitting plane is closer than
            # the current k-th best (or the heap is not full yet); on an exact
            # tie the far side may hold an equal-distance lower index
            if len(heap) < k or abs(diff) <= -heap[0][0]:
                visit(far)

        visit(self._root)
        out = sorted((-nd, -ni) for nd, ni in heap)
        return [(d, i) for d, i in out]
