import math

import numpy as np
import pytest

from pantsbench import lorentz as lz
from pantsbench.geodesics import exp_point, hdistance, tangent_angle
from pantsbench.pants import build_bad_pants, build_perfect_pants, perturb_pants
from pantsbench.steiner import (
    PantsPresentation,
    convexity_probe,
    is_loxodromic_presentation,
    segment_margin,
    steiner_minimize,
    total_length,
    tripods_from_steiner,
)


@pytest.fixture(scope="module")
def perfect8():
    return build_perfect_pants(4, 8.0)


@pytest.mark.parametrize("R", [6.0, 8.0, 10.0])
def test_perfect_pants_steiner_angles(R):
    sg = steiner_minimize(build_perfect_pants(3, R))
    assert not sg.degenerate
    assert sg.max_angle_error() < 1e-6
    assert np.ptp(sg.lengths) < 1e-8


def test_perfect_pants_vertices_sit_at_symmetric_point(perfect8):
    # the construction places both trivalent vertices at the base point
    sg = steiner_minimize(perfect8)
    o = lz.basepoint(4)
    assert hdistance(sg.x, o) < 1e-6
    assert hdistance(sg.y, o) < 1e-6


def test_seeds_agree(perfect8):
    sg = steiner_minimize(perturb_pants(perfect8, 0.01, seed=3), seeds=4)
    assert sg.seed_spread < 1e-7


def test_conjugation_equivariance(perfect8):
    rng = np.random.default_rng(0)
    p = perturb_pants(perfect8, 0.01, seed=1)
    h = lz.flow(0.8, 4) @ lz.k_embed(lz.haar_so(4, rng))
    a = steiner_minimize(p)
    b = steiner_minimize(p.conjugated(h))
    assert hdistance(h @ a.x, b.x) < 1e-8
    assert hdistance(h @ a.y, b.y) < 1e-8
    assert a.total == pytest.approx(b.total, abs=1e-9)


def test_minimum_beats_nearby_points(perfect8):
    rng = np.random.default_rng(1)
    p = perturb_pants(perfect8, 0.01, seed=2)
    sg = steiner_minimize(p)
    for _ in range(20):
        dx = lz.boost_to(sg.x)[:, 1:] @ (0.01 * rng.standard_normal(4))
        dy = lz.boost_to(sg.y)[:, 1:] @ (0.01 * rng.standard_normal(4))
        assert total_length(p, exp_point(sg.x, dx), exp_point(sg.y, dy)) > sg.total


def test_json_roundtrip(perfect8):
    q = PantsPresentation.from_json(perfect8.to_json())
    assert all(np.array_equal(a, b) for a, b in zip(q.connections, perfect8.connections))
    assert is_loxodromic_presentation(q)


def test_three_connections_required():
    with pytest.raises(ValueError):
        PantsPresentation(2, (np.eye(3), np.eye(3)))


# ---------------------------------------------------------------------------
# convexity

def test_convexity_probe_strict(perfect8):
    rep = convexity_probe(perfect8, trials=200)
    assert rep.fraction == 1.0
    assert rep.min_margin > 0


def test_zero_length_segment_has_zero_margin(perfect8):
    o = lz.basepoint(4)
    x = exp_point(o, np.r_[0.0, 0.3, 0.1, 0.0, 0.2])
    assert segment_margin(perfect8, x, o, x, o) == pytest.approx(0.0, abs=1e-12)


def test_convexity_margin_is_quadratic(perfect8):
    o = lz.basepoint(4)
    rng = np.random.default_rng(4)
    u = np.r_[0.0, rng.standard_normal(4)]
    v = np.r_[0.0, rng.standard_normal(4)]
    rs = np.array([0.4, 0.2, 0.1, 0.05, 0.025])
    margins = [segment_margin(perfect8, exp_point(o, r * u), exp_point(o, r * v),
                              exp_point(o, -r * u), exp_point(o, -r * v)) for r in rs]
    slope = np.polyfit(np.log(rs), np.log(margins), 1)[0]
    assert 1.8 <= slope <= 2.2


# ---------------------------------------------------------------------------
# tripods

def test_tripods_perfect_pants(perfect8):
    sg = steiner_minimize(perfect8)
    tri = tripods_from_steiner(sg, np.random.default_rng(0))
    n = 4
    for vs in (tri.vx, tri.wy):
        for i in range(3):
            assert tangent_angle(vs[i], vs[(i + 1) % 3]) == pytest.approx(2 * math.pi / 3, abs=1e-6)
    # the Fuchsian plane is spanned by the first three coordinates
    for v in tri.vx + tri.wy:
        assert np.max(np.abs(v[3:])) < 1e-6
    for i in range(3):
        w = tri.perp(i)
        assert abs(lz.mdot(w, tri.vx[i])) < 1e-12
        assert tangent_angle(w, tri.vx[(i + 1) % 3]) == pytest.approx(math.pi / 6, abs=1e-9)
    for F in (tri.P, tri.Fq):
        assert np.max(np.abs(F.T @ lz.J(n) @ F - lz.J(n))) < 1e-10
        assert np.linalg.det(F) == pytest.approx(1.0)


def test_tripod_frames_orthogonal_to_plane():
    p = perturb_pants(build_bad_pants(5, 8.0), 0.01, seed=5)
    sg = steiner_minimize(p)
    tri = tripods_from_steiner(sg, np.random.default_rng(1))
    E = tri.P[:, 3:]
    for v in tri.vx:
        assert np.max(np.abs(E.T @ lz.J(5) @ v)) < 1e-10
    assert np.max(np.abs(E.T @ lz.J(5) @ E - np.eye(3))) < 1e-10
