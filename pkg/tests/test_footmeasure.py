import math

import numpy as np
import pytest
import scipy.linalg

from pantsbench import footmeasure as fm
from pantsbench import lorentz as lz
from pantsbench.errors import AntipodalOrFar, PreconditionError
from pantsbench.geodesics import ModelClosedGeodesic, NormalFiberPoint, normalize_point, parallel_transport
from pantsbench.pants import frame_with_first, phi
from pantsbench.words import monodromy_angles

import oracles


def rot3(axis, angle):
    return oracles.rodrigues(np.asarray(axis, dtype=float) / np.linalg.norm(axis) * angle)


def small_rotation(rng, k, size):
    S = size * rng.standard_normal((k, k))
    return scipy.linalg.expm(0.5 * (S - S.T))


# ---------------------------------------------------------------------------
# diamonds

@pytest.mark.parametrize("hat", [False, True])
def test_diamond_area_matches_monte_carlo(hat):
    R, eps, l0 = 8.0, 0.05, 16.3
    exact = (fm.hat_diamond_area if hat else fm.diamond_area)(R, eps, l0)
    est, se = oracles.diamond_mc(R, eps, l0, 200_000, seed=1, hat=hat)
    assert abs(est - exact) < 3 * se


def test_diamond_area_raw_exponential_form():
    R, eps, l0 = 8.0, 0.05, 16.0
    assert fm.diamond_area(R, eps, l0) == pytest.approx(
        8 * math.exp(4 * R - l0) * (math.exp(2 * eps) - math.exp(-2 * eps)) ** 2, rel=1e-13)


def test_diamond_small_eps_limit():
    R, l0, eps = 8.0, 16.0, 1e-4
    ratio = fm.diamond_area(R, eps, l0) / eps ** 2
    assert ratio == pytest.approx(128 * math.exp(4 * R - l0), rel=1e-3)
    assert fm.diamond_area(R, 0.0, l0) == 0.0
    with pytest.raises(PreconditionError):
        fm.diamond_area(R, -1.0, l0)


def test_diamond_membership_inside_box():
    R, eps, l0 = 8.0, 0.05, 16.0
    (x0, x1), (y0, y1) = fm.diamond_box(R, eps, l0)
    rng = np.random.default_rng(0)
    x = rng.uniform(x0 - 1, x1 + 1, 10_000)
    y = rng.uniform(y0 - 1, y1 + 1, 10_000)
    inside = fm.in_diamond(x, y, R, eps, l0)
    assert np.all((x[inside] >= x0) & (x[inside] <= x1) & (y[inside] >= y0) & (y[inside] <= y1))


# ---------------------------------------------------------------------------
# compact groups

def test_group_volumes():
    assert fm.so_volume(2) == pytest.approx(2 * math.pi)
    assert fm.so_volume(3) == pytest.approx(8 * math.pi ** 2)
    assert fm.so_dim(4) == 6
    assert fm.fiber_exponent(4) == 5
    assert fm.density_exponent(4) == 7


def test_so3_ball_volume_oracle():
    r = 0.3
    est, se = fm.ball_intersection_volume(np.eye(3), r, samples=100_000)
    assert abs(est - oracles.so3_ball_volume(r)) < 3 * se + 1e-12


@pytest.mark.parametrize("d", [0.0, 0.1, 0.3, 0.45])
def test_circle_overlap(d):
    r = 0.25
    X = np.array([[math.cos(d), -math.sin(d)], [math.sin(d), math.cos(d)]])
    est, se = fm.ball_intersection_volume(X, r, samples=50_000, seed=2)
    exact = oracles.circle_ball_overlap(d, r)
    assert exact == pytest.approx(fm.circle_overlap(d, r))
    assert abs(est - exact) < 3 * se + 1e-12


def test_disjoint_balls():
    assert fm.ball_intersection_volume(rot3([1, 0, 0], 0.5), 0.2) == (0.0, 0.0)


def test_radius_precondition():
    with pytest.raises(PreconditionError):
        fm.ball_intersection_volume(np.eye(3), 1.0)


def test_ball_volume_inverse_symmetry():
    X = rot3([1, 2, 3], 0.25)
    a, sa = fm.ball_intersection_volume(X, 0.2, samples=80_000, seed=3)
    b, sb = fm.ball_intersection_volume(X.T, 0.2, samples=80_000, seed=4)
    assert abs(a - b) < 3 * math.hypot(sa, sb)


def test_ball_and_haar_estimators_agree():
    X = rot3([0, 1, 1], 0.3)
    a, sa = fm.ball_intersection_volume(X, 0.5, samples=50_000, seed=5)
    b, sb = fm.ball_intersection_volume(X, 0.5, samples=400_000, seed=6, method="haar")
    assert abs(a - b) < 3 * math.hypot(sa, sb)


def test_ball_bounds_and_near_tangent():
    r = 0.2
    for d in (0.0, 0.15, 0.3):
        est, _ = fm.ball_intersection_volume(rot3([1, 0, 0], d), r, samples=40_000)
        assert fm.ball_lower_bound(3, r) <= est <= fm.ball_upper_bound(3, r)
    d = 0.37  # kappa = 0.03 < r
    est, _ = fm.ball_intersection_volume(rot3([1, 0, 0], d), r, samples=40_000)
    assert est <= fm.near_tangent_bound(3, d, r)


def test_exp_jacobian_at_origin_and_orthogonality():
    xi = np.zeros((1, 3))
    assert fm.exp_jacobian(xi, 3)[0] == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    Z = fm.exp_skew(rng.standard_normal((5, 6)) * 0.3, 4)
    assert np.allclose(np.einsum("nji,njk->nik", Z, Z), np.eye(4), atol=1e-12)


# ---------------------------------------------------------------------------
# midpoints and monodromy pairs

GAMMA = ModelClosedGeodesic(16.0, rot3([1, 1, 0], 0.04))


def test_midpoint_zero_extension():
    x = NormalFiberPoint(5.0, [0.0, 0.0, 1.0])
    y_w = parallel_transport(GAMMA, 5.0, 3.0, x.w)
    m = fm.midpoint_extend(GAMMA, x, NormalFiberPoint(3.0, y_w))
    assert m.s == pytest.approx(7.0)
    assert np.allclose(m.w, x.w)


def test_midpoint_roundtrip_and_involution():
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = NormalFiberPoint(rng.uniform(0, 16), lz.random_unit(3, rng))
        w = x.w + 0.5 * lz.random_unit(3, rng)
        y = NormalFiberPoint(x.s + rng.uniform(-5, 5), w / np.linalg.norm(w))
        m = fm.midpoint_extend(GAMMA, x, y)
        back = fm.midpoint_extend(GAMMA, x, m)
        yn = normalize_point(GAMMA, y)
        assert back.s == pytest.approx(yn.s, abs=1e-9)
        assert np.allclose(back.w, yn.w, atol=1e-10)
        # the spherical midpoint of y and m_x(y), read in the fibre at x, is x
        _, a = fm._lift_near(GAMMA, y, normalize_point(GAMMA, x).s)
        _, b = fm._lift_near(GAMMA, m, normalize_point(GAMMA, x).s)
        mid = (a + b) / np.linalg.norm(a + b)
        assert np.allclose(mid, normalize_point(GAMMA, x).w, atol=1e-10)


def test_midpoint_rejects_far_points():
    x = NormalFiberPoint(0.0, [1.0, 0.0, 0.0])
    with pytest.raises(AntipodalOrFar):
        fm.midpoint_extend(GAMMA, x, NormalFiberPoint(8.0, [1.0, 0.0, 0.0]))
    with pytest.raises(AntipodalOrFar):
        fm.midpoint_extend(GAMMA, x, NormalFiberPoint(1.0, [-1.0, 0.0, 0.0]))


def test_monodromy_pair_symmetric_case():
    gamma = ModelClosedGeodesic(16.0, np.eye(3))
    a = lz.random_unit(3, np.random.default_rng(0))
    mp = fm.monodromy_pair(gamma, NormalFiberPoint(2.0, a), a, -a)
    assert mp.f < 1e-12


def test_monodromy_pair_gauge_free_and_conjugate_to_holonomy():
    rng = np.random.default_rng(8)
    Lam = small_rotation(rng, 3, 0.3)
    gamma = ModelClosedGeodesic(16.0, Lam)
    a = lz.random_unit(3, rng)
    b = lz.random_unit(3, rng)
    v = NormalFiberPoint(3.0, a)
    base = fm.monodromy_pair(gamma, v, a, b)
    Ea = frame_with_first(a, 1)[:, 1:]
    Fb = frame_with_first(b, -1)[:, 1:]
    for _ in range(20):
        mp = fm.monodromy_pair(gamma, v, a, b, Ea @ lz.haar_so(2, rng), Fb @ lz.haar_so(2, rng))
        assert mp.f == pytest.approx(base.f, abs=1e-10)
    ang = monodromy_angles(base.X2.T @ phi(base.X1))
    assert np.allclose(ang, monodromy_angles(Lam), atol=1e-8)
    # the reflected form used in fibre integrals is conjugate to W
    assert lz.rotation_distance(fm.reflected_monodromy(Lam, a, b)) == pytest.approx(base.f, abs=1e-10)


# ---------------------------------------------------------------------------
# fibre densities

def spec_for(holonomy, R=8.0, eps=0.1):
    return fm.GoodRegionSpec(R, eps, eps, ModelClosedGeodesic(2 * R, holonomy))


def test_density_homogeneous_for_trivial_holonomy():
    spec = spec_for(np.eye(3))
    f1, e1 = fm.fiber_density(spec, NormalFiberPoint(1.0, [1.0, 0.0, 0.0]), samples=20_000, seed=1)
    f2, e2 = fm.fiber_density(spec, NormalFiberPoint(9.0, [0.0, 0.6, 0.8]), samples=20_000, seed=2)
    assert abs(f1 - f2) < 3 * math.hypot(e1, e2)


def test_density_regime_precondition():
    spec = fm.GoodRegionSpec(8.0, 0.1, 0.2, ModelClosedGeodesic(16.0, np.eye(3)))
    with pytest.raises(PreconditionError):
        fm.fiber_density(spec, NormalFiberPoint(0.0, [1.0, 0.0, 0.0]))


def test_fiber_volume_scale_matches_exponent():
    # both Vol ~ eps^5 bounds at n = 4
    for eps in (0.05, 0.1):
        spec = spec_for(rot3([0, 0, 1], eps / 2), eps=eps)
        vol, _ = fm.fiber_volume(spec, np.array([1.0, 0.0, 0.0]), samples=20_000)
        assert 1e-3 < vol / eps ** fm.fiber_exponent(4) < 1e3


def test_sphere_mesh_areas():
    for m, cells in ((2, (8, 1)), (3, (4, 8)), (4, (4, 8))):
        mesh = fm.sphere_mesh(m, cells)
        assert mesh.areas.sum() == pytest.approx(fm.sphere_volume(m - 1))
        assert np.allclose(np.linalg.norm(mesh.centers, axis=1), 1.0)
        assert np.array_equal(mesh.locate(mesh.centers), np.arange(mesh.size))


def test_estimated_measure_small_grid():
    spec = spec_for(rot3([0, 0, 1], 0.05))
    est = fm.estimated_measure(spec, grid=(2, 4), samples=5_000, seed=0)
    assert np.all(est.values > 0)
    assert math.isfinite(est.ratio)
    assert est.tau_residual < 3.0
    assert est.centralizer_residual < 3.0
    assert len(est.to_rows()) == 8


# ---------------------------------------------------------------------------
# invariant points and the good region

def test_invariant_point_gauge_orbit():
    rng = np.random.default_rng(9)
    gamma = GAMMA
    p = fm.InvariantPoint(NormalFiberPoint(1.0, lz.random_unit(3, rng)), NormalFiberPoint(9.0, lz.random_unit(3, rng)),
                          8.5, lz.haar_so(3, rng))
    q = p.gauge(lz.haar_so(2, rng), lz.haar_so(2, rng))
    assert fm.same_class(gamma, p, q)
    assert not fm.same_class(gamma, p, fm.InvariantPoint(p.u, p.v, 8.6, p.Lam))


def test_sampled_points_are_in_the_region():
    spec = fm.GoodRegionSpec(8.0, 0.1, 0.1, ModelClosedGeodesic(16.0, rot3([0, 0, 1], 0.05)))
    res = fm.sample_good_region(spec, 5, seed=3)
    assert len(res.samples) == 5
    assert 0 < res.acceptance_rate < 1
    for s in res.samples:
        assert spec.in_R_delta(s.point)
        assert fm.feet_gap(spec.gamma, s) < 1.5 * spec.eps + spec.cap_radius()


def test_box_sets():
    B = fm.BoxSet(15.0, 17.0, np.array([0.0, 0.0, 1.0]), 0.0, 0.5)
    w = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    assert list(B.contains(np.array([0.5, 0.5]), w, 16.0)) == [True, False]
    g, s = B.grown(0.1), B.shrunk(0.1)
    assert g.r1 == pytest.approx(0.6) and s.r1 == pytest.approx(0.4)
    assert g.s1 - g.s0 == pytest.approx(2.2)
