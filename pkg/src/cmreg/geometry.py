"""Extruded 2-D peg/hole profiles.

The peg frame has its origin at the centroid of the peg's bottom face with z
along the extrusion. The hole frame has its origin at the centre of the hole
mouth, z pointing out of the cavity, so the cavity occupies ``z <= 0``. With
both frames coincident the peg sits concentric, bottom face in the mouth
plane; a pose of ``(0, 0, -d, 0, 0, 0)`` is the peg inserted to depth ``d``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HOLE_DEPTH_MM = 30.0
PEG_EXTRA_LENGTH_MM = 10.0


def signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_centroid(poly: np.ndarray) -> np.ndarray:
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def is_simple(poly: np.ndarray) -> bool:
    n = len(poly)
    for i in range(n):
        a1, a2 = poly[i], poly[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(a1, a2, poly[j], poly[(j + 1) % n]):
                return False
    return True


def point_segment_signed_distance(points, poly, inside_positive=True) -> np.ndarray:
    """Exact signed distance from points to a simple CCW polygon boundary.

    Positive inside the polygon when ``inside_positive``; the sign comes from
    an even-odd crossing test. Reference implementation, O(points x edges).
    """
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    A = poly
    B = np.roll(poly, -1, axis=0)
    AB = B - A
    AP = P[:, None, :] - A[None, :, :]
    t = np.clip(np.einsum("nej,ej->ne", AP, AB) / np.einsum("ej,ej->e", AB, AB), 0.0, 1.0)
    closest = A[None] + t[..., None] * AB[None]
    dist = np.sqrt(((P[:, None, :] - closest) ** 2).sum(-1)).min(axis=1)
    inside = point_in_polygon(P, poly)
    sign = np.where(inside, 1.0, -1.0)
    if not inside_positive:
        sign = -sign
    return sign * dist


def point_in_polygon(points, poly) -> np.ndarray:
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = P[:, 0:1], P[:, 1:2]
    ax, ay = poly[:, 0][None], poly[:, 1][None]
    bx, by = np.roll(poly[:, 0], -1)[None], np.roll(poly[:, 1], -1)[None]
    cond = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = ax + (y - ay) * (bx - ax) / (by - ay)
    crossings = np.sum(cond & (x < xint), axis=1)
    return (crossings % 2) == 1


def offset_polygon(poly: np.ndarray, distance: float) -> np.ndarray:
    """Mitred outward offset of a CCW polygon.

    Every offset edge lies exactly ``distance`` from its source edge, so the
    minimum boundary-to-boundary gap equals ``distance`` at convex and reflex
    corners alike.
    """
    A = poly
    B = np.roll(poly, -1, axis=0)
    d = B - A
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    n = np.stack([d[:, 1], -d[:, 0]], axis=1)
    c = np.einsum("ij,ij->i", n, A) + distance
    out = np.empty_like(poly)
    m = len(poly)
    for i in range(m):
        j = (i - 1) % m
        M = np.array([n[j], n[i]])
        out[i] = np.linalg.solve(M, np.array([c[j], c[i]]))
    return out


def boundary_gap(peg: np.ndarray, hole: np.ndarray) -> float:
    """Minimum distance between two polygon boundaries (vertex-to-edge both ways)."""
    a = np.abs(point_segment_signed_distance(peg, hole)).min()
    b = np.abs(point_segment_signed_distance(hole, peg)).min()
    return float(min(a, b))


@dataclass(frozen=True)
class Profile:
    name: str
    boundary: np.ndarray
    extrusion_depth: float

    def __post_init__(self):
        poly = np.asarray(self.boundary, dtype=float).reshape(-1, 2)
        if len(poly) < 3:
            raise ValueError(f"profile {self.name!r} needs at least 3 vertices")
        if signed_area(poly) <= 0:
            raise ValueError(f"profile {self.name!r} must be counter-clockwise")
        if not is_simple(poly):
            raise ValueError(f"profile {self.name!r} is self-intersecting")
        if self.extrusion_depth <= 0:
            raise ValueError("extrusion depth must be positive")
        poly.setflags(write=False)
        object.__setattr__(self, "boundary", poly)
        object.__setattr__(self, "extrusion_depth", float(self.extrusion_depth))

    @property
    def max_radius(self) -> float:
        return float(np.linalg.norm(self.boundary, axis=1).max())

    def __eq__(self, other):
        return (
            isinstance(other, Profile)
            and self.name == other.name
            and self.extrusion_depth == other.extrusion_depth
            and np.array_equal(self.boundary, other.boundary)
        )

    def __hash__(self):
        return hash((self.name, self.extrusion_depth, self.boundary.tobytes()))


@dataclass(frozen=True)
class GeometryPair:
    peg: Profile
    hole: Profile
    clearance: float

    def __post_init__(self):
        if not np.all(point_in_polygon(self.peg.boundary, self.hole.boundary)):
            raise ValueError("peg does not fit inside the hole at the identity pose")
        gap = boundary_gap(self.peg.boundary, self.hole.boundary)
        if abs(gap - self.clearance) > 1e-6:
            raise ValueError(f"boundary gap {gap:.9f} mm does not match clearance {self.clearance}")

    @property
    def name(self) -> str:
        return self.peg.name

    @property
    def hole_depth(self) -> float:
        return self.hole.extrusion_depth

    @property
    def peg_length(self) -> float:
        return self.peg.extrusion_depth


def make_pair(peg_boundary, name: str, clearance: float,
              hole_depth: float = HOLE_DEPTH_MM, peg_length: float | None = None) -> GeometryPair:
    poly = np.asarray(peg_boundary, dtype=float)
    poly = poly - polygon_centroid(poly)
    if peg_length is None:
        peg_length = hole_depth + PEG_EXTRA_LENGTH_MM
    peg = Profile(name, poly, peg_length)
    hole = Profile(name + "-hole", offset_polygon(poly, clearance), hole_depth)
    return GeometryPair(peg, hole, clearance)


def cross_profile(half_length=20.0, half_width=6.0) -> np.ndarray:
    L, w = half_length, half_width
    return np.array([
        (L, -w), (L, w), (w, w), (w, L), (-w, L), (-w, w),
        (-L, w), (-L, -w), (-w, -w), (-w, -L), (w, -L), (w, -w),
    ])


def gear_profile(teeth=12, root_radius=17.0, tip_radius=21.0,
                 root_half_angle=10.0, tip_half_angle=5.0) -> np.ndarray:
    pts = []
    pitch = 360.0 / teeth
    for k in range(teeth):
        c = k * pitch
        for r, a in ((root_radius, c - root_half_angle), (tip_radius, c - tip_half_angle),
                     (tip_radius, c + tip_half_angle), (root_radius, c + root_half_angle)):
            t = math.radians(a)
            pts.append((r * math.cos(t), r * math.sin(t)))
    return np.array(pts)


def hexagon_profile(circumradius=20.0) -> np.ndarray:
    t = np.radians(np.arange(6) * 60.0)
    return np.stack([circumradius * np.cos(t), circumradius * np.sin(t)], axis=1)


BUILTIN_CLEARANCES = {"cross": 0.1, "gear": 0.3, "extrusion": 1.0}

_BUILTIN_CACHE: dict = {}


def builtin_pair(name: str) -> GeometryPair:
    if name not in _BUILTIN_CACHE:
        if name == "cross":
            poly = cross_profile()
        elif name == "gear":
            poly = gear_profile()
        elif name == "extrusion":
            poly = hexagon_profile()
        else:
            raise KeyError(f"unknown builtin geometry {name!r}")
        _BUILTIN_CACHE[name] = make_pair(poly, name, BUILTIN_CLEARANCES[name])
    return _BUILTIN_CACHE[name]


def builtin_profiles() -> list[GeometryPair]:
    return [builtin_pair(n) for n in ("cross", "gear", "extrusion")]


# ------------------------------------------------------------- file format

def load_profile(path) -> Profile:
    """Read ``name`` / ``extrusion_depth_mm`` / ``x y`` lines."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if len(lines) < 5:
        raise ValueError(f"{path}: profile needs a name, a depth and at least 3 vertices")
    name = lines[0]
    try:
        depth = float(lines[1])
    except ValueError:
        raise ValueError(f"{path}: line 2: extrusion depth is not a number") from None
    verts = []
    for i, ln in enumerate(lines[2:], start=3):
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError(f"{path}: line {i}: expected 'x_mm y_mm'")
        verts.append((float(parts[0]), float(parts[1])))
    return Profile(name, np.array(verts), depth)


def save_profile(profile: Profile, path) -> None:
    rows = [profile.name, repr(profile.extrusion_depth)]
    rows += [f"{x!r} {y!r}" for x, y in profile.boundary.tolist()]
    Path(path).write_text("\n".join(rows) + "\n")


def resolve_geometry(name: str, clearance: float | None = None) -> GeometryPair:
    """``cross | gear | extrusion`` or ``@file`` holding a peg profile.

    For a file, the hole is the peg offset by ``clearance`` (default 0.3 mm)
    and the hole depth equals the profile's extrusion depth.
    """
    if name.startswith("@"):
        prof = load_profile(name[1:])
        c = 0.3 if clearance is None else clearance
        return make_pair(prof.boundary, prof.name, c, hole_depth=prof.extrusion_depth,
                         peg_length=prof.extrusion_depth + PEG_EXTRA_LENGTH_MM)
    return builtin_pair(name)
