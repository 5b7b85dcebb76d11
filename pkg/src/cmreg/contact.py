"""Geometric contact proxy: signed gap queries and quasi-static compliance.

A physical force threshold is replaced by a displacement band on the signed
peg-to-wall gap: ``Contact`` when the gap lies in ``[-PEN_TOL, CONTACT_TOL]``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _backend
from .geometry import GeometryPair, point_segment_signed_distance
from .pose import Pose6, as_array, check_gimbal, flat_difference, wrap_degrees

CONTACT_TOL = 0.02
PEN_TOL = 0.05
N_SAMPLES = 96
N_SLICES = 8
BOUNDARY_TOL = 1e-4
GRID_CELL = 0.5
GRID_PAD = 4.0
GRID_KAPPA = 1.25


class ContactKind(enum.Enum):
    FREE = "Free"
    CONTACT = "Contact"
    PENETRATING = "Penetrating"


@dataclass(frozen=True)
class ContactState:
    kind: ContactKind
    depth: float


def classify(gap: float, contact_tol: float = CONTACT_TOL, pen_tol: float = PEN_TOL) -> ContactKind:
    if gap > contact_tol:
        return ContactKind.FREE
    if gap < -pen_tol:
        return ContactKind.PENETRATING
    return ContactKind.CONTACT


def classify_array(gaps, contact_tol: float = CONTACT_TOL, pen_tol: float = PEN_TOL) -> np.ndarray:
    """0 = Free, 1 = Contact, 2 = Penetrating."""
    g = np.asarray(gaps, dtype=float)
    return np.where(g > contact_tol, 0, np.where(g < -pen_tol, 2, 1))


def boundary_samples(poly: np.ndarray, k: int) -> np.ndarray:
    """All vertices plus ``k - len(poly)`` points spread by arc length."""
    n = len(poly)
    B = np.roll(poly, -1, axis=0)
    lengths = np.linalg.norm(B - poly, axis=1)
    extra = max(k - n, 0)
    share = lengths / lengths.sum() * extra
    counts = np.floor(share).astype(int)
    rem = extra - counts.sum()
    order = np.argsort(-(share - counts), kind="stable")
    counts[order[:rem]] += 1
    pts = []
    for i in range(n):
        pts.append(poly[i])
        c = counts[i]
        for j in range(1, c + 1):
            t = j / (c + 1)
            pts.append(poly[i] + t * (B[i] - poly[i]))
    return np.array(pts)


def _edge_normals(poly: np.ndarray, inward: bool) -> tuple[np.ndarray, np.ndarray]:
    d = np.roll(poly, -1, axis=0) - poly
    n = np.stack([d[:, 1], -d[:, 0]], axis=1)
    n = n / np.sqrt(n[:, 0] * n[:, 0] + n[:, 1] * n[:, 1])[:, None]
    if inward:
        n = -n
    return n, n + np.roll(n, 1, axis=0)


def _point_edge_distances(P: np.ndarray, poly: np.ndarray) -> np.ndarray:
    A = poly
    B = np.roll(poly, -1, axis=0)
    AB = B - A
    AP = P[:, None, :] - A[None]
    t = np.clip(np.einsum("nej,ej->ne", AP, AB) / np.einsum("ej,ej->e", AB, AB), 0.0, 1.0)
    Q = A[None] + t[..., None] * AB[None]
    return np.linalg.norm(P[:, None, :] - Q, axis=-1)


def _grid_candidates(poly: np.ndarray, cell: float, pad: float, kappa: float = 1.0):
    """Per-cell candidate edges for nearest-edge queries.

    Every edge that can be nearest to a point of the cell is listed, also when
    distances are measured after a linear map whose singular values differ by
    at most a factor ``kappa``.
    """
    lo = poly.min(axis=0) - pad
    hi = poly.max(axis=0) + pad
    shape = np.ceil((hi - lo) / cell).astype(int)
    gx = lo[0] + (np.arange(shape[0]) + 0.5) * cell
    gy = lo[1] + (np.arange(shape[1]) + 0.5) * cell
    X, Y = np.meshgrid(gx, gy)
    C = np.column_stack([X.ravel(), Y.ravel()])  # row-major in y then x
    D = _point_edge_distances(C, poly)
    hd = cell * math.sqrt(0.5)
    bound = kappa * (D.min(axis=1, keepdims=True) + hd) + hd + 1e-9
    mask = D <= bound
    counts = mask.sum(axis=1)
    ptr = np.zeros(len(C) + 1, dtype=np.int32)
    ptr[1:] = np.cumsum(counts)
    idx = np.nonzero(mask)[1].astype(np.int32)
    return lo, shape, ptr, idx


class ContactModel:
    """Precomputed sampling grid for one geometry pair (shared, read-only)."""

    def __init__(self, pair: GeometryPair, n_samples: int = N_SAMPLES, n_slices: int = N_SLICES,
                 contact_tol: float = CONTACT_TOL, pen_tol: float = PEN_TOL, kernel=None):
        self.pair = pair
        self.contact_tol = contact_tol
        self.pen_tol = pen_tol
        peg = pair.peg.boundary
        hole = pair.hole.boundary
        samples = boundary_samples(peg, n_samples)
        hole_n, hole_vn = _edge_normals(hole, inward=True)
        g_lo, g_shape, cell_ptr, cell_idx = _grid_candidates(hole, GRID_CELL, GRID_PAD)
        p_lo, p_shape, pcell_ptr, pcell_idx = _grid_candidates(peg, GRID_CELL, GRID_PAD, GRID_KAPPA)
        self.data = {
            "samples": np.ascontiguousarray(samples),
            "peg_verts": np.array(peg, dtype=float),
            "hole_verts": np.array(hole, dtype=float),
            "hole_edge_n": np.ascontiguousarray(hole_n),
            "hole_vert_n": np.ascontiguousarray(hole_vn),
            "grid_origin": g_lo,
            "grid_cell": GRID_CELL,
            "grid_shape": g_shape,
            "cell_ptr": cell_ptr,
            "cell_idx": cell_idx,
            "pgrid_origin": p_lo,
            "pgrid_cell": GRID_CELL,
            "pgrid_shape": p_shape,
            "pgrid_kappa": GRID_KAPPA,
            "pcell_ptr": pcell_ptr,
            "pcell_idx": pcell_idx,
            "peg_length": pair.peg_length,
            "n_slices": n_slices,
            "rho": math.hypot(pair.peg.max_radius, pair.peg_length),
            "r_max": pair.peg.max_radius,
        }
        cls = _backend.ContactKernel if kernel is None else kernel
        self.kernel = cls(self.data)

    # ---------------------------------------------------------------- gaps
    def gap(self, pose) -> float:
        return float(self.kernel.gap(_normalized(pose)))

    def gaps(self, poses) -> np.ndarray:
        P = np.asarray(poses, dtype=float).reshape(-1, 6).copy()
        P[:, 3:] = wrap_degrees(P[:, 3:])
        return self.kernel.gap_many(P)

    def state(self, pose) -> ContactState:
        g = self.gap(pose)
        return ContactState(classify(g, self.contact_tol, self.pen_tol), g)

    def kinds(self, poses) -> np.ndarray:
        return classify_array(self.gaps(poses), self.contact_tol, self.pen_tol)

    def is_free(self, pose) -> bool:
        return self.gap(pose) > self.contact_tol

    # ------------------------------------------------------------ segments
    def first_contact(self, start, toward, tol: float = BOUNDARY_TOL):
        """First Contact pose on the straight 6-D segment, or ``None``.

        ``start`` must be Free. Angles are interpolated along the shortest arc.
        """
        a = _normalized(start)
        if not self.gap(a) > self.contact_tol:
            raise ValueError("invalid start state: segment must start from a Free pose")
        b = a + flat_difference(_normalized(toward), a)
        hit = self.kernel.first_contact(a, b, self.contact_tol, tol)
        if hit is None:
            return None
        lam, _ = hit
        return a + lam * (b - a)

    def resolve(self, commanded):
        """Quasi-static compliance: where the peg ends up when commanded to a pose.

        Free commands are reached as-is. Otherwise the peg is retracted along
        the straight line toward the cavity axis at the commanded depth and
        stops at the first Contact pose. Returns ``(pose, in_contact)``.
        """
        w = _normalized(commanded)
        if self.gap(w) > self.contact_tol:
            return w, False
        axis = np.array([0.0, 0.0, w[2], 0.0, 0.0, 0.0])
        if w[2] > 0.0:
            # above the mouth nothing holds the peg; treat like resting on the rim
            return w, False
        hit = self.kernel.first_contact(axis, w, self.contact_tol, BOUNDARY_TOL)
        if hit is None:
            return w, False
        lam, _ = hit
        return axis + lam * (w - axis), True

    def resolve_many(self, commanded) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised :meth:`resolve`; returns ``(poses, in_contact)``."""
        W = np.asarray(commanded, dtype=float).reshape(-1, 6).copy()
        W[:, 3:] = wrap_degrees(W[:, 3:])
        g = self.kernel.gap_many(W)
        out = W.copy()
        hit = np.zeros(len(W), dtype=bool)
        for i in np.nonzero(~(g > self.contact_tol))[0]:
            w = W[i]
            if w[2] > 0.0:
                continue
            axis = np.array([0.0, 0.0, w[2], 0.0, 0.0, 0.0])
            r = self.kernel.first_contact(axis, w, self.contact_tol, BOUNDARY_TOL)
            if r is None:
                continue
            out[i] = axis + r[0] * (w - axis)
            hit[i] = True
        return out, hit

    def pull_back(self, commanded, budget: float) -> np.ndarray:
        """The commanded pose moved ``budget`` flat units toward the cavity axis."""
        w = _normalized(commanded)
        axis = np.array([0.0, 0.0, w[2], 0.0, 0.0, 0.0])
        d = w - axis
        n = float(np.sqrt(d @ d))
        if n <= budget:
            return axis
        return w - d * (budget / n)


def _normalized(p) -> np.ndarray:
    a = np.array(as_array(p), dtype=float).reshape(6)
    a[3:] = wrap_degrees(a[3:])
    return a


@lru_cache(maxsize=32)
def contact_model(pair: GeometryPair, n_samples: int = N_SAMPLES, n_slices: int = N_SLICES) -> ContactModel:
    return ContactModel(pair, n_samples, n_slices)


def _effective(pose, insertion_depth: float) -> np.ndarray:
    a = _normalized(pose)
    a[2] -= insertion_depth
    return a


def contact_query(pair: GeometryPair, pose, insertion_depth: float = 0.0,
                  n_samples: int = N_SAMPLES, n_slices: int = N_SLICES) -> ContactState:
    """Classify a peg pose (hole frame), optionally pushed ``insertion_depth`` deeper.

    A peg whose bottom centre is above the mouth plane is Free with an
    infinite gap.
    """
    if not 0.0 <= insertion_depth <= pair.hole_depth:
        raise ValueError("insertion_depth outside [0, hole depth]")
    check_gimbal([as_array(pose)])
    return contact_model(pair, n_samples, n_slices).state(_effective(pose, insertion_depth))


def project_to_contact(pair: GeometryPair, start, toward, insertion_depth: float = 0.0):
    """First Contact pose on the segment from a Free ``start`` toward ``toward``."""
    model = contact_model(pair)
    hit = model.first_contact(_effective(start, insertion_depth), _effective(toward, insertion_depth))
    if hit is None:
        return None
    hit[2] += insertion_depth
    return Pose6.from_array(hit)


def reference_gap(pair: GeometryPair, pose, n_slices: int = N_SLICES, n_dense: int = 2048) -> float:
    """Independent dense-sampling oracle for the gap (slow).

    Samples the peg boundary densely and uses even-odd signed distances, with
    the hole vertices checked against each section. Shares no code with the
    kernels beyond the section geometry definition.
    """
    from .pose import to_matrices

    T = to_matrices(_normalized(pose))
    R, t = T[:3, :3], T[:3, 3]
    if t[2] > 0:
        return math.inf
    peg = pair.peg.boundary
    dense = boundary_samples(peg, n_dense)
    s_m = -(t[2] + R[2, 0] * peg[:, 0] + R[2, 1] * peg[:, 1]) / R[2, 2]
    s_full = min(max(s_m.min(), 0.0), pair.peg_length)
    best = math.inf
    levels = [s_full * l / (n_slices - 1) for l in range(n_slices)]
    for s in levels + [None]:
        if s is None:
            # exact mouth-plane section: solve each generator for z = 0
            sb = -(t[2] + R[2, 0] * dense[:, 0] + R[2, 1] * dense[:, 1]) / R[2, 2]
            sv = -(t[2] + R[2, 0] * peg[:, 0] + R[2, 1] * peg[:, 1]) / R[2, 2]
            P = (R @ np.column_stack([dense, sb]).T).T[:, :2] + t[:2]
            V = (R @ np.column_stack([peg, sv]).T).T[:, :2] + t[:2]
        else:
            P = (R @ np.column_stack([dense, np.full(len(dense), s)]).T).T[:, :2] + t[:2]
            V = (R @ np.column_stack([peg, np.full(len(peg), s)]).T).T[:, :2] + t[:2]
        g1 = point_segment_signed_distance(P, pair.hole.boundary).min()
        g2 = point_segment_signed_distance(pair.hole.boundary, V, inside_positive=False).min()
        best = min(best, g1, g2)
    return float(best)
