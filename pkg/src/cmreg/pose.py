"""SE(3) pose algebra on the flat 6-vector ``[x, y, z, alpha, beta, gamma]``.

Translations are in mm, angles in degrees. The Euler convention is fixed-axis
X-Y-Z, i.e. ``R = Rz(gamma) @ Ry(beta) @ Rx(alpha)``; every conversion in the
package goes through :func:`euler_to_matrix` / :func:`matrix_to_euler`.

Two layers are provided: the immutable :class:`Pose6` value type for scalar
use, and ``*_arrays`` functions that operate on ``(..., 6)`` arrays for the
registration and simulation hot paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

GIMBAL_LIMIT_DEG = 85.0

ANGLE_DIMS = (3, 4, 5)


def wrap_degrees(a):
    """Map angles to the half-open interval (-180, 180]; in-range values pass through exactly."""
    a = np.asarray(a, dtype=float)
    w = 180.0 - np.mod(180.0 - a, 360.0)
    return np.where((a > -180.0) & (a <= 180.0), a, w)


def angle_diff(a, b):
    """Shortest-arc difference ``a - b`` for angles already in (-180, 180].

    The two-branch form is used (instead of a modulo) so that the compiled
    kd-tree kernel can reproduce it bit for bit.
    """
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = np.where(d > 180.0, d - 360.0, d)
    return np.where(d <= -180.0, d + 360.0, d)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


@dataclass(frozen=True)
class Pose6:
    """A 6-D pose; angles are normalized to (-180, 180] on construction."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("alpha", "beta", "gamma"):
            object.__setattr__(self, name, float(wrap_degrees(getattr(self, name))))

    @classmethod
    def from_array(cls, v) -> "Pose6":
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(*v.tolist())

    @classmethod
    def from_matrix(cls, T) -> "Pose6":
        return cls.from_array(from_matrices(np.asarray(T, dtype=float)))

    @classmethod
    def from_transform(cls, rt: RigidTransform) -> "Pose6":
        return cls.from_matrix(rt.matrix())

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.alpha, self.beta, self.gamma])

    def matrix(self) -> np.ndarray:
        return to_matrices(self.to_array())

    def transform(self) -> RigidTransform:
        T = self.matrix()
        return RigidTransform(T[:3, :3], T[:3, 3])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def angles(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])

    def __iter__(self):
        return iter((self.x, self.y, self.z, self.alpha, self.beta, self.gamma))

    def __repr__(self):
        vals = ", ".join(f"{v:.6g}" for v in self)
        return f"Pose6({vals})"


IDENTITY = Pose6()

PoseLike = Union[Pose6, Sequence[float], np.ndarray]


def as_array(p: PoseLike) -> np.ndarray:
    if isinstance(p, Pose6):
        return p.to_array()
    return np.asarray(p, dtype=float)


def as_pose_array(poses) -> np.ndarray:
    """Stack a list of poses (or an array) into an ``(N, 6)`` float array."""
    if isinstance(poses, np.ndarray):
        arr = poses.astype(float, copy=False)
    else:
        poses = list(poses)
        if not poses:
            return np.zeros((0, 6))
        arr = np.array([as_array(p) for p in poses], dtype=float)
    return arr.reshape(-1, 6)


def check_gimbal(poses, limit: float = GIMBAL_LIMIT_DEG) -> None:
    arr = as_pose_array(poses)
    if arr.size and np.any(np.abs(arr[:, 4]) >= limit):
        raise ValueError(f"pose with |beta| >= {limit} deg is too close to gimbal lock")


# ---------------------------------------------------------------- conversions

def euler_to_matrix(angles_deg) -> np.ndarray:
    a = np.radians(np.asarray(angles_deg, dtype=float))
    ca, cb, cg = np.cos(a[..., 0]), np.cos(a[..., 1]), np.cos(a[..., 2])
    sa, sb, sg = np.sin(a[..., 0]), np.sin(a[..., 1]), np.sin(a[..., 2])
    R = np.empty(a.shape[:-1] + (3, 3))
    R[..., 0, 0] = cg * cb
    R[..., 0, 1] = cg * sb * sa - sg * ca
    R[..., 0, 2] = cg * sb * ca + sg * sa
    R[..., 1, 0] = sg * cb
    R[..., 1, 1] = sg * sb * sa + cg * ca
    R[..., 1, 2] = sg * sb * ca - cg * sa
    R[..., 2, 0] = -sb
    R[..., 2, 1] = cb * sa
    R[..., 2, 2] = cb * ca
    return R


def matrix_to_euler(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    beta = np.arcsin(np.clip(-R[..., 2, 0], -1.0, 1.0))
    alpha = np.arctan2(R[..., 2, 1], R[..., 2, 2])
    gamma = np.arctan2(R[..., 1, 0], R[..., 0, 0])
    return wrap_degrees(np.degrees(np.stack([alpha, beta, gamma], axis=-1)))


def to_matrices(poses) -> np.ndarray:
    """``(..., 6)`` poses to ``(..., 4, 4)`` homogeneous matrices."""
    p = np.asarray(poses, dtype=float)
    T = np.zeros(p.shape[:-1] + (4, 4))
    T[..., :3, :3] = euler_to_matrix(p[..., 3:])
    T[..., :3, 3] = p[..., :3]
    T[..., 3, 3] = 1.0
    return T


def from_matrices(T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    out = np.empty(T.shape[:-2] + (6,))
    out[..., :3] = T[..., :3, 3]
    out[..., 3:] = matrix_to_euler(T[..., :3, :3])
    return out


def invert_matrices(T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    R = T[..., :3, :3]
    Rt = np.swapaxes(R, -1, -2)
    out = np.zeros_like(T)
    out[..., :3, :3] = Rt
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", Rt, T[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out


# ------------------------------------------------------------ array algebra

def compose_arrays(a, b) -> np.ndarray:
    """Compose pose arrays with broadcasting: matrix(a) @ matrix(b)."""
    return from_matrices(to_matrices(a) @ to_matrices(b))


def invert_arrays(p) -> np.ndarray:
    return from_matrices(invert_matrices(to_matrices(p)))


def flat_difference(a, b) -> np.ndarray:
    """Component-wise ``a - b`` with shortest-arc angles."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a - b
    d[..., 3:] = angle_diff(wrap_degrees(a[..., 3:]), wrap_degrees(b[..., 3:]))
    return d


def distance_arrays(a, b, weights=None) -> np.ndarray:
    d = flat_difference(a, b)
    if weights is not None:
        d = d * np.sqrt(np.asarray(weights, dtype=float))
    return np.sqrt(np.sum(d * d, axis=-1))


# ------------------------------------------------------------- scalar algebra

def compose(a: PoseLike, b: PoseLike) -> Pose6:
    return Pose6.from_array(compose_arrays(as_array(a), as_array(b)))


def inverse(p: PoseLike) -> Pose6:
    return Pose6.from_array(invert_arrays(as_array(p)))


def euclidean_distance(a: PoseLike, b: PoseLike, weights=None) -> float:
    """Flat 6-D distance; mm and degrees are mixed unweighted by default."""
    return float(distance_arrays(as_array(a), as_array(b), weights))


# ------------------------------------------------------------------ averaging

def euler_to_quaternions(angles_deg) -> np.ndarray:
    """Unit quaternions ``(w, x, y, z)`` for X-Y-Z fixed-axis Euler angles."""
    h = np.radians(np.asarray(angles_deg, dtype=float)) / 2.0
    ca, cb, cg = np.cos(h[..., 0]), np.cos(h[..., 1]), np.cos(h[..., 2])
    sa, sb, sg = np.sin(h[..., 0]), np.sin(h[..., 1]), np.sin(h[..., 2])
    # q = qz(gamma) * qy(beta) * qx(alpha)
    w = cg * cb * ca + sg * sb * sa
    x = cg * cb * sa - sg * sb * ca
    y = cg * sb * ca + sg * cb * sa
    z = sg * cb * ca - cg * sb * sa
    return np.stack([w, x, y, z], axis=-1)


def quaternions_to_matrices(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def mean_pose_array(poses) -> np.ndarray:
    """Arithmetic translation mean and chordal (quaternion) rotation mean.

    Translation sums use ``math.fsum`` so the result does not depend on the
    order of the inputs.
    """
    arr = as_pose_array(poses)
    n = arr.shape[0]
    if n == 0:
        raise ValueError("no misalignments to average")
    t = np.array([math.fsum(arr[:, k]) / n for k in range(3)])
    q = euler_to_quaternions(arr[:, 3:])
    M = q.T @ q
    _, vecs = np.linalg.eigh(M)
    qm = vecs[:, -1]
    if qm @ q[0] < 0:
        qm = -qm
    angles = matrix_to_euler(quaternions_to_matrices(qm))
    return np.concatenate([t, angles])


def mean_pose(poses: Iterable[PoseLike]) -> Pose6:
    return Pose6.from_array(mean_pose_array(poses))


def rotation_angle_deg(p) -> np.ndarray:
    """Magnitude of the rotation part of each pose, in degrees."""
    q = euler_to_quaternions(np.asarray(p, dtype=float)[..., 3:])
    v = np.linalg.norm(q[..., 1:], axis=-1)
    return np.degrees(2.0 * np.arctan2(v, np.abs(q[..., 0])))
