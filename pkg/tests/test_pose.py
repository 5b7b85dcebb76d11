import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmreg.pose import (IDENTITY, Pose6, RigidTransform, as_array, compose, compose_arrays,
                        euclidean_distance, euler_to_matrix, from_matrices, inverse,
                        invert_arrays, mean_pose, mean_pose_array, to_matrices, wrap_degrees)

coord = st.floats(-500, 500, allow_nan=False)
angle = st.floats(-180, 180, allow_nan=False)
beta = st.floats(-84.9, 84.9, allow_nan=False)
pose6 = st.tuples(coord, coord, coord, angle, beta, angle).map(np.array)


def random_poses(rng, n, beta_max=85.0):
    P = np.empty((n, 6))
    P[:, :3] = rng.uniform(-500, 500, (n, 3))
    P[:, 3] = rng.uniform(-180, 180, n)
    P[:, 4] = rng.uniform(-beta_max, beta_max, n)
    P[:, 5] = rng.uniform(-180, 180, n)
    return P


def matrix_close(a, b, tol):
    return np.max(np.abs(to_matrices(a) - to_matrices(b))) <= tol


# ---------------------------------------------------------------- examples

def test_angles_normalized_to_half_open_interval():
    p = Pose6(0, 0, 0, 180.0, -180.0, 540.0)
    assert p.alpha == 180.0 and p.beta == 180.0 and p.gamma == 180.0
    assert Pose6(0, 0, 0, -190.0, 0, 0).alpha == pytest.approx(170.0)
    assert Pose6(0, 0, 0, 190.0, 0, 0).alpha == pytest.approx(-170.0)


def test_compose_identity():
    p = Pose6(1, 2, 3, 10, 20, 30)
    assert euclidean_distance(compose(IDENTITY, p), p) < 1e-12
    assert euclidean_distance(compose(p, IDENTITY), p) < 1e-12


def test_compose_pure_translation():
    assert np.allclose(as_array(compose([1, 0, 0, 0, 0, 0], [0, 2, 0, 0, 0, 0])),
                       [1, 2, 0, 0, 0, 0], atol=1e-12)


def test_compose_rotation_then_translation():
    # Rz(90) maps the x axis to y
    assert np.allclose(as_array(compose([0, 0, 0, 0, 0, 90], [1, 0, 0, 0, 0, 0])),
                       [0, 1, 0, 0, 0, 90], atol=1e-12)


def test_euler_convention_is_fixed_axis_xyz():
    a, b, g = np.radians([10.0, 20.0, 30.0])
    Rx = np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])
    Ry = np.array([[math.cos(b), 0, math.sin(b)], [0, 1, 0], [-math.sin(b), 0, math.cos(b)]])
    Rz = np.array([[math.cos(g), -math.sin(g), 0], [math.sin(g), math.cos(g), 0], [0, 0, 1]])
    assert np.allclose(euler_to_matrix([10, 20, 30]), Rz @ Ry @ Rx, atol=1e-15)


def test_inverse_examples():
    assert euclidean_distance(inverse(IDENTITY), IDENTITY) == 0.0
    assert np.allclose(as_array(inverse([3, 0, 0, 0, 0, 0])), [-3, 0, 0, 0, 0, 0])
    r = [0, 0, 0, 0, 0, 90]
    assert euclidean_distance(compose(inverse(r), r), IDENTITY) < 1e-12


def test_mean_pose_examples():
    p = Pose6(1, 2, 3, 4, 5, 6)
    assert euclidean_distance(mean_pose([p]), p) < 1e-9
    assert np.allclose(as_array(mean_pose([[2, 0, 0, 0, 0, 0], [4, 0, 0, 0, 0, 0]])),
                       [3, 0, 0, 0, 0, 0])
    assert np.allclose(as_array(mean_pose([[0, 0, 0, 0, 0, 10], [0, 0, 0, 0, 0, -10]])),
                       np.zeros(6), atol=1e-12)


def test_mean_pose_empty_is_an_error():
    with pytest.raises(ValueError, match="no misalignments"):
        mean_pose([])


def test_distance_examples():
    p = Pose6(1, 2, 3, 4, 5, 6)
    assert euclidean_distance(p, p) == 0.0
    assert euclidean_distance([1, 0, 0, 0, 0, 0], IDENTITY) == 1.0
    assert euclidean_distance([0, 0, 0, 0, 0, 179], [0, 0, 0, 0, 0, -179]) == pytest.approx(2.0)


def test_distance_weights_default_to_ones():
    a, b = [1, 2, 3, 4, 5, 6], [0, 0, 0, 0, 0, 0]
    assert euclidean_distance(a, b) == euclidean_distance(a, b, np.ones(6))
    assert euclidean_distance(a, b, [1, 0, 0, 0, 0, 0]) == 1.0


def test_rigid_transform_rejects_non_rotation():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    rt = Pose6(1, 2, 3, 10, 20, 30).transform()
    R = rt.rotation
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-9) and abs(np.linalg.det(R) - 1) < 1e-9


# -------------------------------------------------------------- properties

@settings(max_examples=300, deadline=None)
@given(pose6)
def test_matrix_round_trip(p):
    back = from_matrices(to_matrices(p))
    assert np.max(np.abs(back[:3] - p[:3])) < 1e-9
    d = wrap_degrees(back[3:] - wrap_degrees(p[3:]))
    assert np.max(np.abs(d)) < 1e-9


@settings(max_examples=300, deadline=None)
@given(pose6, pose6, pose6)
def test_associativity(a, b, c):
    left = compose_arrays(compose_arrays(a, b), c)
    right = compose_arrays(a, compose_arrays(b, c))
    assert matrix_close(left, right, 1e-7)
    assert np.max(np.abs(left[:3] - right[:3])) < 1e-7


@settings(max_examples=300, deadline=None)
@given(pose6)
def test_inverse_law(p):
    ident = compose_arrays(invert_arrays(p), p)
    assert np.max(np.abs(ident[:3])) < 1e-9
    assert np.max(np.abs(wrap_degrees(ident[3:]))) < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(coord, coord, coord, st.floats(-20, 20), st.floats(-20, 20),
                          st.floats(-20, 20)), min_size=1, max_size=12), st.randoms())
def test_mean_pose_permutation_invariant(poses, rnd):
    P = np.array(poses, dtype=float)
    perm = list(range(len(P)))
    rnd.shuffle(perm)
    a, b = mean_pose_array(P), mean_pose_array(P[perm])
    assert np.array_equal(a[:3], b[:3])
    assert np.max(np.abs(wrap_degrees(a[3:] - b[3:]))) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50),
                          st.floats(-60, 60)), min_size=1, max_size=8),
       st.sampled_from([3, 4, 5]))
def test_mean_of_inverse_closed_set_is_identity(deltas, axis):
    # pure translations and rotations about a single axis, each with its inverse
    out = []
    for dx, dy, dz, ang in deltas:
        t = np.array([dx, dy, dz, 0, 0, 0], dtype=float)
        r = np.zeros(6)
        r[axis] = ang
        out += [t, invert_arrays(t), r, invert_arrays(r)]
    m = mean_pose_array(np.array(out))
    assert np.max(np.abs(m[:3])) < 1e-7
    assert np.max(np.abs(wrap_degrees(m[3:]))) < 1e-7


@settings(max_examples=300, deadline=None)
@given(pose6, pose6, pose6)
def test_distance_is_a_metric(a, b, c):
    ab = euclidean_distance(a, b)
    assert ab == euclidean_distance(b, a)
    assert ab >= 0
    assert euclidean_distance(a, c) <= ab + euclidean_distance(b, c) + 1e-9


def test_vectorized_algebra_matches_scalar(rng):
    A, B = random_poses(rng, 50), random_poses(rng, 50)
    C = compose_arrays(A, B)
    for a, b, c in itertools.islice(zip(A, B, C), 10):
        assert np.allclose(as_array(compose(a, b)), c, atol=1e-9)
