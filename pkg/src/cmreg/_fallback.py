"""Pure NumPy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
reference the compiled kernels are checked against. Both implementations
follow the same arithmetic so results agree to rounding.
"""
from __future__ import annotations

import math

import numpy as np

from .pose import to_matrices


class ContactKernel:
    """Signed peg-to-wall gap of an extruded peg inside an extruded hole.

    The peg's lateral surface is cut into ``n_slices`` sections along its own
    axis (bottom rim to the deepest mouth crossing) plus the exact section in
    the mouth plane. Each section is an affine image of the peg profile; the
    gap is the minimum over sections of (sampled peg points vs hole walls) and
    (hole vertices vs the section polygon).
    """

    def __init__(self, data: dict):
        self.samples = data["samples"]
        self.peg_verts = data["peg_verts"]
        self.hole_verts = data["hole_verts"]
        self.hole_edge_n = data["hole_edge_n"]
        self.hole_vert_n = data["hole_vert_n"]
        self.peg_length = float(data["peg_length"])
        self.n_slices = int(data["n_slices"])
        self.rho = float(data["rho"])
        self.r_max = float(data["r_max"])
        self._hA = self.hole_verts
        self._hB = np.roll(self.hole_verts, -1, axis=0)

    # ------------------------------------------------------------ sections
    def _sections(self, pose):
        T = to_matrices(np.asarray(pose, dtype=float))
        R = T[:3, :3]
        t = T[:3, 3]
        if t[2] > 0.0:
            return None
        A = R[:2, :2]
        r2 = R[:2, 2]
        vx, vy = self.peg_verts[:, 0], self.peg_verts[:, 1]
        s_mouth = -(t[2] + R[2, 0] * vx + R[2, 1] * vy) / R[2, 2]
        s_full = min(max(float(s_mouth.min()), 0.0), self.peg_length)
        L = self.n_slices
        mats, offs = [], []
        for l in range(L):
            s = s_full * l / (L - 1) if L > 1 else 0.0
            mats.append(A)
            offs.append(r2 * s + t[:2])
        Am = A - np.outer(r2, R[2, :2]) / R[2, 2]
        om = t[:2] - r2 * t[2] / R[2, 2]
        mats.append(Am)
        offs.append(om)
        return np.array(mats), np.array(offs)

    def gap(self, pose) -> float:
        sec = self._sections(pose)
        if sec is None:
            return math.inf
        mats, offs = sec
        best = math.inf
        for A, o in zip(mats, offs):
            P = _affine(self.samples, A, o)
            g1 = _signed_min(P, self._hA, self._hB, self.hole_edge_n, self.hole_vert_n)
            V = _affine(self.peg_verts, A, o)
            VB = np.roll(V, -1, axis=0)
            d = VB - V
            n = np.stack([d[:, 1], -d[:, 0]], axis=1)
            n = n / np.sqrt(n[:, 0] * n[:, 0] + n[:, 1] * n[:, 1])[:, None]
            vn = n + np.roll(n, 1, axis=0)
            g2 = _signed_min(self.hole_verts, V, VB, n, vn)
            best = min(best, g1, g2)
        return best

    def gap_many(self, poses) -> np.ndarray:
        poses = np.asarray(poses, dtype=float).reshape(-1, 6)
        return np.array([self.gap(p) for p in poses])

    # -------------------------------------------------------- first contact
    def lipschitz(self, p0, p1) -> float:
        """Conservative bound on |d gap / d lambda| along ``p0 -> p1``.

        Rotations act through a lever no longer than the part of the peg that
        can be inside the hole on this segment.
        """
        a = [float(v) for v in p0]
        d = [float(p1[i]) - a[i] for i in range(6)]
        lin = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        ang = (abs(d[3]) + abs(d[4]) + abs(d[5])) * math.pi / 180.0
        depth = max(0.0, -a[2], -(a[2] + d[2]))
        am = max(abs(a[3]), abs(a[3] + d[3]))
        bm = max(abs(a[4]), abs(a[4] + d[4]))
        smax = self.peg_length
        if am < 80.0 and bm < 80.0:
            c = math.cos(am * math.pi / 180.0) * math.cos(bm * math.pi / 180.0)
            smax = min((depth + self.r_max * math.sqrt(1.0 - c * c)) / c, self.peg_length)
        return 1.3 * (lin + ang * math.sqrt(self.r_max * self.r_max + smax * smax))

    def first_contact(self, p0, p1, contact_tol: float, tol: float, accept: float = 0.0):
        """First non-Free point on the segment ``p0 -> p1`` (``p0`` Free).

        Returns ``(lam, gap)`` or ``None`` when the whole segment is Free.
        Conservative sphere tracing finds a bracket, then a safeguarded
        Illinois iteration shrinks it below ``tol`` (flat length units), or
        stops early once a non-Free point lies within ``accept`` of the
        threshold.
        """
        p0 = np.asarray(p0, dtype=float)
        d = np.asarray(p1, dtype=float) - p0
        length = math.sqrt(float(d @ d))
        if length == 0.0:
            return None
        lip = self.lipschitz(p0, p0 + d)
        eps = tol / length
        lam = 0.0
        f = self.gap(p0) - contact_tol
        while True:
            step = max(f / lip, eps)
            if lam + step >= 1.0:
                return None
            trial = min(1.0, lam + 3.0 * step)
            ft = self.gap(p0 + trial * d) - contact_tol
            if ft > 0.0:
                if trial >= 1.0:
                    return None
                lam, f = trial, ft
                continue
            lo = lam + step
            flo = self.gap(p0 + lo * d) - contact_tol
            if flo <= 0.0:
                lo, flo = lam, f
            hi, fhi = trial, ft
            break
        if fhi >= -accept:
            return hi, fhi + contact_tol
        side = 0
        for _ in range(100):
            if hi - lo <= eps:
                break
            x = (lo * fhi - hi * flo) / (fhi - flo)
            half = 0.5 * eps
            if x < lo + half:
                x = lo + half
            if x > hi - half:
                x = hi - half
            fx = self.gap(p0 + x * d) - contact_tol
            if fx > 0.0:
                lo, flo = x, fx
                if side == 1:
                    fhi *= 0.5
                side = 1
            else:
                hi, fhi = x, fx
                if fx >= -accept:
                    break
                if side == -1:
                    flo *= 0.5
                side = -1
        return hi, fhi + contact_tol


def _affine(pts, A, o):
    x, y = pts[:, 0], pts[:, 1]
    return np.stack([x * A[0, 0] + y * A[0, 1] + o[0], x * A[1, 0] + y * A[1, 1] + o[1]], axis=1)


def _signed_min(P, A, B, edge_n, vert_n) -> float:
    """Minimum signed distance of points ``P`` to the closed polyline ``A->B``.

    The sign is taken from the nearest feature's normal (edge normal, or the
    vertex pseudo-normal when the foot point is an endpoint).
    """
    ABx = B[:, 0] - A[:, 0]
    ABy = B[:, 1] - A[:, 1]
    len2 = ABx * ABx + ABy * ABy
    px = P[:, 0:1]
    py = P[:, 1:2]
    apx = px - A[None, :, 0]
    apy = py - A[None, :, 1]
    raw = (apx * ABx[None] + apy * ABy[None]) / len2[None]
    at_a = raw <= 0.0
    at_b = raw >= 1.0
    qx = np.where(at_a, A[None, :, 0], np.where(at_b, B[None, :, 0], A[None, :, 0] + raw * ABx[None]))
    qy = np.where(at_a, A[None, :, 1], np.where(at_b, B[None, :, 1], A[None, :, 1] + raw * ABy[None]))
    dx = px - qx
    dy = py - qy
    d2 = dx * dx + dy * dy
    j = np.argmin(d2, axis=1)
    rows = np.arange(P.shape[0])
    dxj, dyj = dx[rows, j], dy[rows, j]
    nxt = (j + 1) % A.shape[0]
    nx = np.where(at_a[rows, j], vert_n[j, 0], np.where(at_b[rows, j], vert_n[nxt, 0], edge_n[j, 0]))
    ny = np.where(at_a[rows, j], vert_n[j, 1], np.where(at_b[rows, j], vert_n[nxt, 1], edge_n[j, 1]))
    sign = np.where(dxj * nx + dyj * ny < 0.0, -1.0, 1.0)
    vals = sign * np.sqrt(d2[rows, j])
    return float(vals.min())


# ------------------------------------------------------------------ kd-tree

def _sqdist(q, pts):
    d0 = pts[:, 0] - q[0]
    d1 = pts[:, 1] - q[1]
    d2 = pts[:, 2] - q[2]
    d3 = _wrap(pts[:, 3] - q[3])
    d4 = _wrap(pts[:, 4] - q[4])
    d5 = _wrap(pts[:, 5] - q[5])
    return d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3 + d4 * d4 + d5 * d5


def _wrap(d):
    d = np.where(d > 180.0, d - 360.0, d)
    return np.where(d <= -180.0, d + 360.0, d)


def _box_lower_bound(q, lo, hi):
    s = 0.0
    for k in range(6):
        v = q[k]
        if lo[k] <= v <= hi[k]:
            continue
        if k < 3:
            e = lo[k] - v if v < lo[k] else v - hi[k]
        else:
            e = min(abs(float(_wrap(lo[k] - v))), abs(float(_wrap(hi[k] - v))))
        s += e * e
    return s


def kd_query(tree, queries, exclude=None):
    """Exact nearest neighbour for each query; ties go to the lowest index."""
    data, perm = tree["data"], tree["perm"]
    left, right = tree["left"], tree["right"]
    start, end = tree["start"], tree["end"]
    box_lo, box_hi = tree["lo"], tree["hi"]
    dim, split = tree["dim"], tree["split"]
    Q = np.asarray(queries, dtype=float).reshape(-1, 6)
    out_i = np.empty(len(Q), dtype=np.int64)
    out_d = np.empty(len(Q))
    for qi, q in enumerate(Q):
        skip = -1 if exclude is None else int(exclude[qi])
        best = [math.inf, -1]
        stack = [0]
        while stack:
            node = stack.pop()
            if _box_lower_bound(q, box_lo[node], box_hi[node]) > best[0]:
                continue
            if left[node] < 0:
                s, e = start[node], end[node]
                d2 = _sqdist(q, data[s:e])
                for k in range(e - s):
                    idx = perm[s + k]
                    if idx == skip:
                        continue
                    v = d2[k]
                    if v < best[0] or (v == best[0] and idx < best[1]):
                        best = [v, idx]
                continue
            if q[dim[node]] < split[node]:
                near, far = left[node], right[node]
            else:
                near, far = right[node], left[node]
            stack.append(far)
            stack.append(near)
        out_i[qi] = best[1]
        out_d[qi] = best[0]
    return out_i, out_d
