import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmreg import _backend
from cmreg.contact import (CONTACT_TOL, PEN_TOL, ContactKind, ContactModel, classify,
                           contact_model, contact_query, project_to_contact, reference_gap)
from cmreg.geometry import (BUILTIN_CLEARANCES, Profile, boundary_gap, builtin_pair,
                            builtin_profiles, is_simple, load_profile, make_pair,
                            resolve_geometry, save_profile, signed_area)
from cmreg.pose import compose_arrays

NAMES = ("cross", "gear", "extrusion")


def random_engaged_poses(rng, n, lat=1.5, ang=3.0):
    P = np.zeros((n, 6))
    P[:, :2] = rng.uniform(-lat, lat, (n, 2))
    P[:, 2] = -rng.uniform(1.0, 25.0, n)
    P[:, 3:] = rng.uniform(-ang, ang, (n, 3))
    return P


# ---------------------------------------------------------------- geometry

def test_builtin_clearances():
    assert builtin_pair("cross").clearance == 0.1
    assert builtin_pair("gear").clearance == 0.3
    assert builtin_pair("extrusion").clearance == 1.0
    assert [p.name for p in builtin_profiles()] == list(NAMES)


@pytest.mark.parametrize("name", NAMES)
def test_profiles_simple_ccw_and_fit(name):
    pair = builtin_pair(name)
    for prof in (pair.peg, pair.hole):
        assert len(prof.boundary) >= 3
        assert is_simple(prof.boundary)
        assert signed_area(prof.boundary) > 0
    assert abs(boundary_gap(pair.peg.boundary, pair.hole.boundary) - BUILTIN_CLEARANCES[name]) < 1e-6


def test_gear_has_twelve_trapezoidal_teeth():
    peg = builtin_pair("gear").peg.boundary
    assert len(peg) == 48
    r = np.hypot(peg[:, 0], peg[:, 1])
    assert np.allclose(sorted(set(np.round(r, 9))), [17.0, 21.0])


def test_profile_validation():
    with pytest.raises(ValueError):
        Profile("bad", np.array([[0, 0], [1, 0]]), 10.0)
    bowtie = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float)
    with pytest.raises(ValueError):
        Profile("bowtie", bowtie, 10.0)
    with pytest.raises(ValueError):
        Profile("cw", np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=float), 10.0)


def test_profile_file_round_trip(tmp_path):
    square = np.array([[-10, -10], [10, -10], [10, 10], [-10, 10]], dtype=float)
    prof = Profile("square", square, 25.0)
    path = tmp_path / "square.txt"
    save_profile(prof, path)
    back = load_profile(path)
    assert back == prof
    pair = resolve_geometry(f"@{path}", 0.5)
    assert pair.clearance == 0.5 and pair.hole_depth == 25.0
    (tmp_path / "bad.txt").write_text("x\n10\n1 2\n3\n4 5\n")
    with pytest.raises(ValueError, match="line 4"):
        load_profile(tmp_path / "bad.txt")


# ----------------------------------------------------------- contact query

@pytest.mark.parametrize("name", NAMES)
def test_identity_is_free_at_clearance(name):
    pair = builtin_pair(name)
    for depth in (0.0, 5.0, 30.0):
        s = contact_query(pair, [0, 0, 0, 0, 0, 0], depth)
        assert s.kind is ContactKind.FREE
        assert abs(s.depth - pair.clearance) < 1e-6


def test_above_mouth_is_free_with_infinite_gap():
    s = contact_query(builtin_pair("gear"), [0, 0, 2.0, 0, 0, 0])
    assert s.kind is ContactKind.FREE and math.isinf(s.depth)


def test_lateral_shift_examples_gear():
    pair = builtin_pair("gear")
    c = pair.clearance
    assert contact_query(pair, [c + CONTACT_TOL / 2, 0, 0, 0, 0, 0], 10.0).kind is ContactKind.CONTACT
    assert contact_query(pair, [3 * c, 0, 0, 0, 0, 0], 10.0).kind is ContactKind.PENETRATING


def test_classify_bands():
    assert classify(CONTACT_TOL + 1e-9) is ContactKind.FREE
    assert classify(CONTACT_TOL) is ContactKind.CONTACT
    assert classify(-PEN_TOL) is ContactKind.CONTACT
    assert classify(-PEN_TOL - 1e-9) is ContactKind.PENETRATING


def test_contact_query_preconditions():
    pair = builtin_pair("gear")
    with pytest.raises(ValueError):
        contact_query(pair, [0, 0, 0, 0, 0, 0], -1.0)
    with pytest.raises(ValueError):
        contact_query(pair, [0, 0, -5, 0, 86.0, 0])


@pytest.mark.parametrize("name", NAMES)
def test_gap_matches_dense_oracle(name, rng):
    # the kernel is exact on vertex/edge features, the oracle samples densely;
    # agreement within the oracle's resolution where the gap is non-negative
    pair = builtin_pair(name)
    m = contact_model(pair)
    P = random_engaged_poses(rng, 60, lat=pair.clearance * 2, ang=1.0)
    for p in P:
        g, ref = m.gap(p), reference_gap(pair, p)
        if ref >= 0:
            assert abs(g - ref) < 2e-3, (p, g, ref)
        else:
            # both must see the overlap
            assert g < 1e-3


def test_gear_symmetry_under_thirty_degrees(rng):
    pair = builtin_pair("gear")
    m = contact_model(pair)
    for _ in range(50):
        z = -rng.uniform(1, 25)
        al, be, ga = rng.uniform(-3, 3, 3)
        a = m.gap([0, 0, z, al, be, ga])
        b = m.gap(compose_arrays([0, 0, 0, 0, 0, 30.0], [0, 0, z, al, be, ga]))
        c = m.gap([0, 0, z, al, be, ga + 30.0])
        assert abs(a - c) < 1e-3
        assert abs(a - b) < 1e-3


# ---------------------------------------------------------- segment search

def test_project_to_contact_degenerate_segment():
    pair = builtin_pair("gear")
    assert project_to_contact(pair, [0, 0, -5, 0, 0, 0], [0, 0, -5, 0, 0, 0]) is None


def test_project_to_contact_lateral():
    pair = builtin_pair("gear")
    hit = project_to_contact(pair, [0, 0, -10, 0, 0, 0], [5, 0, -10, 0, 0, 0])
    assert hit is not None
    assert contact_query(pair, hit).kind is ContactKind.CONTACT
    assert abs(hit.x - (pair.clearance - CONTACT_TOL)) < 1e-3


def test_project_to_contact_rotation_cross():
    pair = builtin_pair("cross")
    hit = project_to_contact(pair, [0, 0, -10, 0, 0, 0], [0, 0, -10, 0, 0, 10.0])
    assert hit is not None and 0 < hit.gamma < 10.0
    assert contact_query(pair, hit).kind is ContactKind.CONTACT


def test_project_to_contact_rejects_non_free_start():
    pair = builtin_pair("gear")
    with pytest.raises(ValueError, match="invalid start state"):
        project_to_contact(pair, [2.0, 0, -10, 0, 0, 0], [0, 0, -10, 0, 0, 0])


@pytest.mark.parametrize("name", NAMES)
def test_first_contact_is_first_and_on_boundary(name, rng):
    pair = builtin_pair(name)
    m = contact_model(pair)
    for _ in range(40):
        z = -rng.uniform(1, 25)
        a = np.array([0, 0, z, 0, 0, 0], dtype=float)
        b = a.copy()
        b[:2] = rng.uniform(-3, 3, 2)
        b[3:] = rng.uniform(-6, 6, 3)
        hit = m.first_contact(a, b)
        if hit is None:
            assert m.gaps(a + np.linspace(0, 1, 200)[:, None] * (b - a)).min() > CONTACT_TOL
            continue
        g = m.gap(hit)
        assert -PEN_TOL <= g <= CONTACT_TOL
        lam = np.linalg.norm(hit - a) / np.linalg.norm(b - a)
        before = a + np.linspace(0, lam, 100)[:-1, None] * (b - a)
        assert m.gaps(before).min() > CONTACT_TOL - 1e-3


@pytest.mark.parametrize("name", NAMES)
def test_monotone_segment_classification(name, rng):
    pair = builtin_pair(name)
    m = contact_model(pair)
    bad = 0
    n = 1000
    for _ in range(n):
        z = -rng.uniform(1, 25)
        a = np.array([0, 0, z, 0, 0, 0], dtype=float)
        b = a.copy()
        b[:2] = rng.uniform(-2, 2, 2)
        b[3:] = rng.uniform(-4, 4, 3)
        k = m.kinds(a + np.linspace(0, 1, 25)[:, None] * (b - a))
        bad += bool(np.any(np.diff(k) < 0))
    assert bad == 0


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(NAMES), st.floats(-3, 3), st.floats(-3, 3),
       st.floats(-6, 6), st.floats(-6, 6), st.floats(-6, 6), st.floats(-25, -1))
def test_resolve_output_is_contact_or_free_command(name, x, y, a, b, g, z):
    m = contact_model(builtin_pair(name))
    w = np.array([x, y, z, a, b, g])
    p, hit = m.resolve(w)
    if hit:
        assert m.kinds(p)[0] == 1
    else:
        assert np.array_equal(p, w) or m.gap(p) > CONTACT_TOL


# ------------------------------------------------------- compiled kernels

needs_compiled = pytest.mark.skipif(not _backend.compiled_available(),
                                    reason="compiled kernels not built")


@needs_compiled
@pytest.mark.parametrize("name", NAMES)
def test_compiled_and_fallback_gaps_identical(name, rng):
    pair = builtin_pair(name)
    fast = ContactModel(pair, kernel=_backend.ContactKernel)
    slow = ContactModel(pair, kernel=_backend.FallbackContactKernel)
    P = random_engaged_poses(rng, 300, lat=3.0, ang=6.0)
    assert np.array_equal(fast.gaps(P), slow.gaps(P))


@needs_compiled
@pytest.mark.parametrize("name", NAMES)
def test_compiled_and_fallback_resolve_identical(name, rng):
    pair = builtin_pair(name)
    fast = ContactModel(pair, kernel=_backend.ContactKernel)
    slow = ContactModel(pair, kernel=_backend.FallbackContactKernel)
    W = random_engaged_poses(rng, 60, lat=3.0, ang=6.0)
    a, ha = fast.resolve_many(W)
    b, hb = slow.resolve_many(W)
    assert np.array_equal(ha, hb)
    assert np.array_equal(a, b)


def test_custom_pair_contact():
    square = np.array([[-10, -10], [10, -10], [10, 10], [-10, 10]], dtype=float)
    pair = make_pair(square, "square", 0.5)
    s = contact_query(pair, [0.49, 0, -5, 0, 0, 0])
    assert s.kind is ContactKind.CONTACT and abs(s.depth - 0.01) < 1e-9
