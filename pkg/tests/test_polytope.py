import numpy as np
import pytest
from hypothesis import given, strategies as st

from almpc.errors import DimensionMismatch, EmptySet, NonPositiveScale, Unbounded
from almpc.polytope import (HPolytope, box, chebyshev_center, intersect, is_empty, is_subset,
                            regular_polygon, remove_redundancy, sample_uniform, scale_about,
                            support, symmetric_box, vertices, vertices_csv, volume)

UNIT = symmetric_box(1.0, 2)


def random_polygon(seed, rows=7):
    rng = np.random.default_rng(seed)
    ang = np.sort(rng.uniform(0, 2 * np.pi, rows))
    H = np.column_stack([np.cos(ang), np.sin(ang)])
    P = HPolytope(H, rng.uniform(0.5, 2.0, rows))
    return intersect(P, symmetric_box(3.0, 2))


def grid(lo=-3.5, hi=3.5, n=100):
    g = np.linspace(lo, hi, n)
    X, Y = np.meshgrid(g, g)
    return np.column_stack([X.ravel(), Y.ravel()])


def same_points(P, Q, pts):
    return np.array_equal(P.contains(pts, tol=1e-7), Q.contains(pts, tol=1e-7))


def test_zero_row_rejected():
    with pytest.raises(ValueError):
        HPolytope([[0.0, 0.0]], [1.0])
    with pytest.raises(DimensionMismatch):
        HPolytope([[1.0, 0.0]], [1.0, 2.0])


def test_intersect_boxes():
    P = intersect(box([0, 0], [2, 2]), box([1, 1], [3, 3]))
    lo, hi = np.array([1.0, 1.0]), np.array([2.0, 2.0])
    assert is_subset(P, box(lo, hi)) and is_subset(box(lo, hi), P)


def test_intersect_idempotent_and_dimension():
    P = random_polygon(1)
    Q = intersect(P, P)
    assert is_subset(P, Q) and is_subset(Q, P)
    with pytest.raises(DimensionMismatch):
        intersect(UNIT, symmetric_box(1.0, 3))


@pytest.mark.parametrize("seed", range(3))
def test_intersect_membership_conjunction(seed):
    P, Q = random_polygon(seed), random_polygon(seed + 100)
    pts = grid()
    np.testing.assert_array_equal(intersect(P, Q).contains(pts), P.contains(pts) & Q.contains(pts))


def test_is_empty():
    assert is_empty(HPolytope([[1.0], [-1.0]], [-1.0, -1.0]))
    assert not is_empty(UNIT)


def test_remove_redundancy_examples():
    dup = HPolytope(np.vstack([UNIT.H, UNIT.H]), np.concatenate([UNIT.h, UNIT.h]))
    assert remove_redundancy(dup).n_rows == 4
    R = remove_redundancy(HPolytope([[1.0], [1.0], [-1.0]], [1.0, 2.0, 5.0]))
    assert R.n_rows == 2
    assert support(R, [1.0]) == pytest.approx(1.0)
    with pytest.raises(EmptySet):
        remove_redundancy(HPolytope([[1.0], [-1.0]], [-1.0, -1.0]))


def test_remove_redundancy_random_halfplanes():
    rng = np.random.default_rng(7)
    ang = rng.uniform(0, 2 * np.pi, 50)
    H = np.column_stack([np.cos(ang), np.sin(ang)])
    P = intersect(HPolytope(H, rng.uniform(2.0, 6.0, 50)), UNIT)
    R = remove_redundancy(P)
    assert R.n_rows <= P.n_rows
    assert same_points(P, R, grid(-1.5, 1.5))
    # each remaining row is needed
    for i in range(R.n_rows):
        keep = np.arange(R.n_rows) != i
        Q = HPolytope(R.H[keep], R.h[keep])
        try:
            enlarged = support(Q, R.H[i]) > R.h[i] + 1e-9
        except Unbounded:
            enlarged = True
        assert enlarged


def test_chebyshev_center():
    c, r = chebyshev_center(UNIT)
    np.testing.assert_allclose(c, 0, atol=1e-9)
    assert r == pytest.approx(1.0)
    tri = HPolytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 2])
    assert chebyshev_center(tri)[1] == pytest.approx(2 / (2 + np.sqrt(2)), abs=1e-9)
    assert chebyshev_center(HPolytope([[1.0], [-1.0]], [-1.0, -1.0]))[1] < 0


def test_sampling_moments_and_determinism():
    S = sample_uniform(UNIT, 10_000, np.random.default_rng(0))
    assert S.shape == (10_000, 2)
    assert np.all(UNIT.contains(S))
    assert np.all(np.abs(S.mean(axis=0)) < 0.05)
    assert np.all(np.abs(S.var(axis=0) / (1 / 3) - 1) < 0.10)
    S2 = sample_uniform(UNIT, 10_000, np.random.default_rng(0))
    np.testing.assert_array_equal(S, S2)
    with pytest.raises(EmptySet):
        sample_uniform(HPolytope([[1.0], [-1.0]], [-1.0, -1.0]), 5, np.random.default_rng(0))


def test_volume_examples():
    assert volume(box([0, 0], [1, 1])) == pytest.approx(1.0)
    tri = HPolytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
    assert volume(tri) == pytest.approx(0.5)
    # octagon with circumradius 3: apothem 3 cos(pi/8)
    octa = regular_polygon(3 * np.cos(np.pi / 8), 8)
    assert volume(octa) == pytest.approx(18 * np.sqrt(2), rel=1e-9)
    assert volume(HPolytope([[1.0, 0.0], [-1.0, 0.0]], [-1.0, -1.0])) == 0.0
    assert volume(symmetric_box(1.0, 3)) == pytest.approx(8.0, rel=0.02)


def test_support_examples():
    assert support(UNIT, [1, 1]) == pytest.approx(2.0)
    assert support(UNIT, [-1, 0]) == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(4))
def test_support_matches_vertices(seed):
    P = random_polygon(seed)
    d = np.random.default_rng(seed).standard_normal(2)
    assert support(P, d) == pytest.approx(float(np.max(vertices(P) @ d)), abs=1e-8)


def test_scale_about():
    P = random_polygon(3)
    T = scale_about(P, [1.0, -2.0], 1.0)
    pts = grid()
    np.testing.assert_array_equal(T.contains(pts + [1.0, -2.0]), P.contains(pts))
    S = scale_about(UNIT, [0, 0], 0.5)
    assert is_subset(S, symmetric_box(0.5, 2)) and is_subset(symmetric_box(0.5, 2), S)
    assert volume(scale_about(P, [0.3, 0.1], 0.7)) == pytest.approx(0.49 * volume(P), rel=1e-9)
    with pytest.raises(NonPositiveScale):
        scale_about(UNIT, [0, 0], 0.0)


def test_vertices_csv_closed_loop():
    lines = vertices_csv(UNIT).strip().splitlines()
    assert lines[0] == "x,y"
    assert lines[1] == lines[-1]
    assert len(lines) == 6


def test_serialization_roundtrip():
    P = random_polygon(5)
    assert HPolytope.from_dict(P.to_dict()).same_as(P)


@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_intersection_is_subset_of_both(a, b):
    P, Q = random_polygon(a), random_polygon(b)
    I = intersect(P, Q)
    pts = np.random.default_rng(a).uniform(-3, 3, (1000, 2))
    inside = I.contains(pts)
    assert np.all(P.contains(pts[inside])) and np.all(Q.contains(pts[inside]))
    assert volume(I) <= min(volume(P), volume(Q)) + 1e-9


@given(st.integers(0, 10_000))
def test_redundancy_removal_preserves_membership(seed):
    P = random_polygon(seed, rows=12)
    R = remove_redundancy(P)
    pts = np.random.default_rng(seed).uniform(-3.5, 3.5, (10_000, 2))
    assert same_points(P, R, pts)


@given(st.integers(0, 10_000))
def test_support_is_additive_over_minkowski_sum(seed):
    P, Q = random_polygon(seed), random_polygon(seed + 1)
    d = np.random.default_rng(seed).standard_normal(2)
    VP, VQ = vertices(P), vertices(Q)
    msum = max(float((p + q) @ d) for p in VP for q in VQ)
    assert support(P, d) + support(Q, d) == pytest.approx(msum, abs=1e-8)
