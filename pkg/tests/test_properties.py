"""Hypothesis properties; random objects come from numpy generators seeded by hypothesis."""
import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from pantsbench import footmeasure as fm
from pantsbench import lorentz as lz
from pantsbench.geodesics import (
    ModelClosedGeodesic,
    NormalFiberPoint,
    exp_point,
    hdistance,
    n1_distance,
    normalize_point,
    parallel_transport,
    tau,
)
from pantsbench.matching import (
    FootAtlas,
    AtlasEntry,
    find_matching,
    hopcroft_karp,
    max_flow_matching_size,
    verify_matching,
)
from pantsbench.pants import in_Q, phi

seeds = st.integers(0, 2 ** 32 - 1)
lengths = st.floats(2.0, 30.0)
positions = st.floats(-50.0, 50.0)
fiber_dims = st.integers(2, 4)

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def geodesic(rng, m, L):
    return ModelClosedGeodesic(L, lz.haar_so(m, rng) if m > 1 else np.eye(1))


def point(rng, m, s):
    return NormalFiberPoint(s, lz.random_unit(m, rng))


# ---------------------------------------------------------------------------
# normal bundle

@given(seeds, fiber_dims, lengths, positions, st.floats(-40, 40), st.floats(-40, 40))
def test_transport_composes(seed, m, L, a, b, c):
    rng = np.random.default_rng(seed)
    gamma = geodesic(rng, m, L)
    w = lz.random_unit(m, rng)
    two = parallel_transport(gamma, b, c, parallel_transport(gamma, a, b, w))
    assert np.allclose(parallel_transport(gamma, a, c, w), two, atol=1e-10)


@given(seeds, fiber_dims, lengths, positions)
def test_tau_orders_agree_and_square_is_shift_by_two(seed, m, L, s):
    rng = np.random.default_rng(seed)
    gamma = geodesic(rng, m, L)
    x = normalize_point(gamma, point(rng, m, s))
    y = tau(gamma, x)
    # antipodal first, then transport; vectors are read at normalised positions
    assert abs(y.s - normalize_point(gamma, NormalFiberPoint(x.s + 1.0, x.w)).s) < 1e-9
    assert np.allclose(y.w, parallel_transport(gamma, x.s, x.s + 1.0, -x.w), atol=1e-10)
    yy = tau(gamma, y)
    assert np.allclose(yy.w, parallel_transport(gamma, x.s, x.s + 2.0, x.w), atol=1e-10)
    assert n1_distance(gamma, yy, NormalFiberPoint(x.s + 2.0, x.w)) < 1e-9


@given(seeds, fiber_dims, lengths, positions, positions, positions)
def test_n1_distance_is_a_metric(seed, m, L, s1, s2, s3):
    rng = np.random.default_rng(seed)
    gamma = geodesic(rng, m, L)
    x, y, z = point(rng, m, s1), point(rng, m, s2), point(rng, m, s3)
    dxy = n1_distance(gamma, x, y)
    assert abs(dxy - n1_distance(gamma, y, x)) < 1e-9
    assert n1_distance(gamma, x, x) < 1e-9
    assert n1_distance(gamma, x, z) <= dxy + n1_distance(gamma, y, z) + 1e-9


@given(seeds, fiber_dims, lengths, positions, positions)
def test_tau_is_an_isometry(seed, m, L, s1, s2):
    rng = np.random.default_rng(seed)
    gamma = geodesic(rng, m, L)
    x, y = point(rng, m, s1), point(rng, m, s2)
    assert abs(n1_distance(gamma, tau(gamma, x), tau(gamma, y)) - n1_distance(gamma, x, y)) < 1e-9


@given(seeds, st.integers(2, 5))
def test_hyperbolic_triangle_inequality(seed, n):
    rng = np.random.default_rng(seed)
    o = lz.basepoint(n)
    p, q, r = (exp_point(o, np.r_[0.0, 2.0 * rng.standard_normal(n)]) for _ in range(3))
    assert hdistance(p, r) <= hdistance(p, q) + hdistance(q, r) + 1e-9


# ---------------------------------------------------------------------------
# fibre maps

@given(seeds, st.floats(1.0, 15.0), st.floats(-3.0, 3.0), st.floats(0.0, 1.2))
def test_midpoint_map_is_an_involution(seed, s, ds, spread):
    rng = np.random.default_rng(seed)
    gamma = ModelClosedGeodesic(16.0, lz.haar_so(3, rng))
    x = point(rng, 3, s)
    w = x.w + spread * lz.random_unit(3, rng)
    if np.linalg.norm(w) < 1e-6:
        return
    y = NormalFiberPoint(s + ds, w / np.linalg.norm(w))
    try:
        back = fm.midpoint_extend(gamma, x, fm.midpoint_extend(gamma, x, y))
    except fm.AntipodalOrFar:
        return
    assert n1_distance(gamma, back, y) < 1e-8


@given(seeds, st.integers(2, 5))
def test_sphere_reflection_is_an_isometric_involution(seed, m):
    rng = np.random.default_rng(seed)
    v = lz.random_unit(m, rng)
    Y = np.array([lz.random_unit(m, rng) for _ in range(5)])
    Z = fm.reflect_batch(v, Y)
    assert np.allclose(fm.reflect_batch(v, Z), Y, atol=1e-12)
    assert np.allclose(Z @ Z.T, Y @ Y.T, atol=1e-12)


@given(seeds, st.integers(2, 6))
def test_phi_is_an_involutive_automorphism(seed, k):
    rng = np.random.default_rng(seed)
    A, B = lz.haar_so(k, rng), lz.haar_so(k, rng)
    assert np.allclose(phi(phi(A)), A)
    assert np.allclose(phi(A @ B), phi(A) @ phi(B), atol=1e-12)
    Q = np.eye(k)
    Q[1:, 1:] = lz.haar_so(k - 1, rng) if k > 2 else np.eye(1)
    assert in_Q(Q) and np.allclose(phi(Q), Q)


@given(st.floats(0.0, 0.6), st.floats(0.0, 0.3), st.floats(0.02, 0.3))
def test_circle_overlap_monotone_and_bounded(d, dd, r):
    # on SO(2) the overlap depends only on |angle|, so X and X^T agree
    a = fm.circle_overlap(d, r)
    assert 0.0 <= a <= 2 * r + 1e-15
    assert fm.circle_overlap(d + dd, r) <= a + 1e-15


# ---------------------------------------------------------------------------
# gauge classes

def invariant_point(rng):
    return fm.InvariantPoint(point(rng, 3, rng.uniform(0, 16)), point(rng, 3, rng.uniform(0, 16)),
                             rng.uniform(8, 9), lz.haar_so(3, rng))


@given(seeds)
def test_gauge_classes_form_an_equivalence_relation(seed):
    rng = np.random.default_rng(seed)
    gamma = ModelClosedGeodesic(16.0, lz.haar_so(3, rng))
    p = invariant_point(rng)
    A, B, C, D = (lz.haar_so(2, rng) for _ in range(4))
    q = p.gauge(A, B)
    r = q.gauge(C, D)
    assert fm.same_class(gamma, p, p)
    assert fm.same_class(gamma, p, q) and fm.same_class(gamma, q, p)
    assert fm.same_class(gamma, q, r) and fm.same_class(gamma, p, r)
    # the action composes
    assert fm.same_class(gamma, r, p.gauge(A @ C, B @ D))
    assert np.allclose(r.Lam, p.gauge(A @ C, B @ D).Lam, atol=1e-12)


# ---------------------------------------------------------------------------
# matching

@given(seeds, st.integers(1, 8), st.floats(0.05, 0.8))
def test_hopcroft_karp_size_matches_max_flow(seed, n, p):
    rng = np.random.default_rng(seed)
    adj = [np.flatnonzero(rng.random(n) < p).tolist() for _ in range(n)]
    ml, mr = hopcroft_karp(adj, n)
    assert sum(v != -1 for v in ml) == max_flow_matching_size(adj, n)
    assert all(mr[v] == u for u, v in enumerate(ml) if v != -1)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 30), st.floats(0.2, 3.0), st.floats(1.0, 3.0))
def test_matching_existence_is_monotone_in_xi(seed, N, xi, factor):
    rng = np.random.default_rng(seed)
    gamma = geodesic(rng, 3, 6.0)
    atlas = FootAtlas(gamma, [AtlasEntry(f"P{i}", 1, point(rng, 3, rng.uniform(0, 6.0))) for i in range(N)])
    small = find_matching(atlas, xi)
    big = find_matching(atlas, factor * xi)
    if small.perfect:
        assert big.perfect
    if big.perfect:
        assert verify_matching(atlas, big)
    assert math.isfinite(big.max_displacement) == big.perfect
