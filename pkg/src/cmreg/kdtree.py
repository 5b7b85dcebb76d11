"""Exact kd-tree over flat 6-D poses (angle dimensions are periodic)."""
from __future__ import annotations

import numpy as np

from . import _backend
from .pose import wrap_degrees

LEAF_SIZE = 16


class KDTree:
    """Median-split kd-tree; splits on the dimension of maximum spread.

    Nodes carry bounding boxes, and pruning uses the shortest-arc distance to
    the box in the angle dimensions, so queries are exact under the flat
    pose metric. Ties resolve to the lowest insertion index.
    """

    def __init__(self, points, leaf_size: int = LEAF_SIZE):
        pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 6).copy()
        pts[:, 3:] = wrap_degrees(pts[:, 3:])
        self.points = pts
        self.leaf_size = int(leaf_size)
        self._build()

    def __len__(self):
        return len(self.points)

    def _build(self):
        n = len(self.points)
        perm = np.arange(n, dtype=np.int64)
        left, right, start, end, dim, split, lo, hi = ([] for _ in range(8))

        def new_node(s, e):
            left.append(-1)
            right.append(-1)
            start.append(s)
            end.append(e)
            dim.append(0)
            split.append(0.0)
            if e > s:
                block = self.points[perm[s:e]]
                lo.append(block.min(axis=0))
                hi.append(block.max(axis=0))
            else:
                lo.append(np.full(6, np.inf))
                hi.append(np.full(6, -np.inf))
            return len(left) - 1

        root = new_node(0, n)
        stack = [root]
        while stack:
            node = stack.pop()
            s, e = start[node], end[node]
            if e - s <= self.leaf_size:
                continue
            spread = hi[node] - lo[node]
            d = int(np.argmax(spread))
            vals = self.points[perm[s:e], d]
            order = np.argsort(vals, kind="stable")
            perm[s:e] = perm[s:e][order]
            m = s + (e - s) // 2
            dim[node] = d
            split[node] = float(self.points[perm[m], d])
            l_id = new_node(s, m)
            r_id = new_node(m, e)
            left[node] = l_id
            right[node] = r_id
            stack.append(r_id)
            stack.append(l_id)

        self.tree = {
            "data": np.ascontiguousarray(self.points[perm]),
            "perm": perm,
            "left": np.array(left, dtype=np.int64),
            "right": np.array(right, dtype=np.int64),
            "start": np.array(start, dtype=np.int64),
            "end": np.array(end, dtype=np.int64),
            "dim": np.array(dim, dtype=np.int64),
            "split": np.array(split, dtype=float),
            "lo": np.ascontiguousarray(np.array(lo, dtype=float).reshape(-1, 6)),
            "hi": np.ascontiguousarray(np.array(hi, dtype=float).reshape(-1, 6)),
        }

    def query(self, queries, exclude=None, backend=None):
        """Return ``(indices, squared_distances)`` of the nearest points."""
        if len(self.points) == 0:
            raise ValueError("kd-tree is empty")
        q = np.ascontiguousarray(queries, dtype=float).reshape(-1, 6).copy()
        q[:, 3:] = wrap_degrees(q[:, 3:])
        fn = _backend.kd_query if backend is None else backend
        return fn(self.tree, q, exclude)


def linear_scan(points, queries):
    """Brute-force nearest neighbour; the oracle the tree must reproduce."""
    pts = np.asarray(points, dtype=float).reshape(-1, 6)
    Q = np.asarray(queries, dtype=float).reshape(-1, 6).copy()
    Q[:, 3:] = wrap_degrees(Q[:, 3:])
    P = pts.copy()
    P[:, 3:] = wrap_degrees(P[:, 3:])
    idx = np.empty(len(Q), dtype=np.int64)
    dist = np.empty(len(Q))
    for i, q in enumerate(Q):
        d2 = _backend._fallback._sqdist(q, P)
        j = int(np.argmin(d2))
        idx[i] = j
        dist[i] = d2[j]
    return idx, dist
