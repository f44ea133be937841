import json
import math

import numpy as np
import pytest

from pantsbench import lorentz as lz
from pantsbench.errors import InvolutionClash, NoInput, PreconditionError, UnmatchedBoundary
from pantsbench.geodesics import ModelClosedGeodesic, NormalFiberPoint, normalize_point, tau
from pantsbench.matching import (
    AtlasEntry,
    Bands,
    FiberSet,
    FootAtlas,
    IceCap,
    ProductSet,
    QuasiUniform,
    bottleneck_xi,
    brute_force_max_deficiency,
    bundle_mesh,
    cheeger_bundle_bound,
    cut_ratio,
    double_and_assemble,
    find_matching,
    growth_inequality_check,
    hall_check,
    hopcroft_karp,
    konig_deficiency_set,
    max_flow_matching_size,
    random_corpus,
    self_matched_pants,
    synthesize_atlas,
    tau_graph,
    verify_matching,
    verify_violation,
    well_matched_check,
)

import oracles


def random_bipartite(rng, n, p):
    return [sorted(np.flatnonzero(rng.random(n) < p).tolist()) for _ in range(n)]


# ---------------------------------------------------------------------------
# bipartite matching

@pytest.mark.parametrize("seed", range(40))
def test_hopcroft_karp_against_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    adj = random_bipartite(rng, n, rng.uniform(0.1, 0.6))
    ml, mr = hopcroft_karp(adj, n)
    size = sum(v != -1 for v in ml)
    for u, v in enumerate(ml):
        if v != -1:
            assert v in adj[u] and mr[v] == u
    deficiency, _ = oracles.brute_force_hall(adj, n)
    assert size == n - deficiency
    assert (size == n) == oracles.matching_exists_brute(adj, n)
    assert size == max_flow_matching_size(adj, n)


@pytest.mark.parametrize("seed", range(20))
def test_konig_set_has_maximum_deficiency(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(2, 9))
    adj = random_bipartite(rng, n, 0.25)
    ml, mr = hopcroft_karp(adj, n)
    A, NA = konig_deficiency_set(adj, ml, mr)
    assert set(NA) == set().union(*(adj[u] for u in A)) if A else NA == []
    assert len(A) - len(NA) == brute_force_max_deficiency(adj)[0]


def test_max_flow_empty_graph():
    assert max_flow_matching_size([], 0) == 0
    assert max_flow_matching_size([[], []], 2) == 0


# ---------------------------------------------------------------------------
# atlases and the tau matching

def test_tau_related_pair_is_swapped():
    gamma = ModelClosedGeodesic(2.0, np.eye(3))
    x = NormalFiberPoint(0.4, np.array([0.0, 0.6, 0.8]))
    y = tau(gamma, x)
    atlas = FootAtlas(gamma, [AtlasEntry("A", 1, x), AtlasEntry("B", 1, y)])
    res = find_matching(atlas, 1e-6)
    assert res.sigma == [1, 0]
    assert res.max_displacement < 1e-12
    assert verify_matching(atlas, res)


def test_icecap_violation_is_cap_witness():
    gamma = ModelClosedGeodesic(1.0, np.eye(3))
    atlas = synthesize_atlas(gamma, IceCap((3, 1), 0.1), 4, seed=0)
    res = find_matching(atlas, 1.0)
    assert not res.perfect
    v = res.violation
    assert sorted(v.certificate) == [0, 1, 2] and v.neighbourhood == [3]
    assert verify_violation(atlas, 1.0, v)
    adj, _ = tau_graph(atlas, 1.0)
    assert v.deficiency == oracles.brute_force_hall(adj, 4)[0]


def test_icecap_small_xi_exhaustive():
    gamma = ModelClosedGeodesic(20.0, np.eye(3))
    atlas = synthesize_atlas(gamma, IceCap((3, 1), 0.1), 4, seed=0)
    res = find_matching(atlas, 0.05)
    adj, _ = tau_graph(atlas, 0.05)
    assert not oracles.matching_exists_brute(adj, 4)
    assert res.violation.deficiency == oracles.brute_force_hall(adj, 4)[0]
    assert verify_violation(atlas, 0.05, res.violation)


def test_mode_masses_are_exact():
    gamma = ModelClosedGeodesic(20.0, np.eye(3))
    for mode in (QuasiUniform(), IceCap((3, 1)), IceCap((5, 2)), Bands()):
        assert len(synthesize_atlas(gamma, mode, 37, seed=1)) == 37
    with pytest.raises(NoInput):
        synthesize_atlas(gamma, QuasiUniform(), 0)


def test_icecap_split_counts():
    gamma = ModelClosedGeodesic(20.0, np.eye(3))
    a = synthesize_atlas(gamma, IceCap((3, 1), 0.1), 40, seed=2)
    _, w = a.arrays()
    assert int(np.sum(w[:, -1] > 0)) == 30


def test_synthesis_is_deterministic():
    gamma = ModelClosedGeodesic(20.0, np.eye(3))
    a = synthesize_atlas(gamma, Bands(), 30, seed=5)
    b = synthesize_atlas(gamma, Bands(), 30, seed=5)
    assert a.to_jsonl() == b.to_jsonl()


def test_bands_violation_verified():
    gamma = ModelClosedGeodesic(20.0, np.eye(3))
    atlas = synthesize_atlas(gamma, Bands(), 60, seed=0)
    res = find_matching(atlas, 0.3)
    assert not res.perfect
    assert verify_violation(atlas, 0.3, res.violation)
    rep = hall_check(atlas, 0.3)
    assert rep["exact_violation"] and rep["family_violation"] and rep["agree"]


def test_bands_family_localizes_heavy_band():
    gamma = ModelClosedGeodesic(20.0, np.eye(3))
    atlas = synthesize_atlas(gamma, Bands(), 60, seed=0)
    heavy = FiberSet(np.eye(3)[2], math.acos(0.6), math.acos(0.3), label="heavy")
    light = FiberSet(-np.eye(3)[2], math.acos(0.6), math.acos(0.3), label="light")
    rows = {r["label"]: r for r in hall_check(atlas, 0.3, [heavy, light])["sets"]}
    assert rows["heavy"]["margin"] < 0
    assert rows["light"]["margin"] >= 0


def test_hall_check_full_space_equal_masses():
    gamma = ModelClosedGeodesic(20.0, np.eye(3))
    atlas = synthesize_atlas(gamma, QuasiUniform(), 50, seed=3)
    rep = hall_check(atlas, 0.5, [FiberSet(np.eye(3)[0], 0.0, math.pi + 1, label="all")])
    assert rep["sets"] == [{"label": "all", "nu_A": 50, "nu_N_tauA": 50, "margin": 0}]


def test_matching_monotone_in_xi():
    gamma = ModelClosedGeodesic(20.0, lz.rot2(0.3, 2)[1:, 1:])
    atlas = synthesize_atlas(gamma, QuasiUniform(), 120, seed=4)
    xi0 = bottleneck_xi(atlas)
    assert not find_matching(atlas, xi0).perfect  # the graph uses strict inequality
    for xi in (xi0 * (1 + 1e-9), 1.2 * xi0, 2 * xi0):
        res = find_matching(atlas, xi)
        assert res.perfect and verify_matching(atlas, res)


def test_quasiuniform_matching_verified_exhaustively():
    gamma = ModelClosedGeodesic(20.0, np.eye(3))
    atlas = synthesize_atlas(gamma, QuasiUniform(), 200, seed=0)
    res = find_matching(atlas, 2.0)
    assert res.perfect and verify_matching(atlas, res)
    rep = hall_check(atlas, 2.0)
    assert not rep["exact_violation"] and rep["agree"]


def test_find_matching_empty_atlas():
    with pytest.raises(NoInput):
        find_matching(FootAtlas(ModelClosedGeodesic(2.0, np.eye(3)), []), 0.1)


# ---------------------------------------------------------------------------
# atlas records

def test_atlas_jsonl_roundtrip():
    gamma = ModelClosedGeodesic(20.0, np.eye(3))
    a = synthesize_atlas(gamma, Bands(), 25, seed=6)
    recs = [json.loads(line) for line in a.to_jsonl().splitlines()]
    b = FootAtlas.from_records(gamma, recs)
    assert b.to_jsonl() == a.to_jsonl()
    with pytest.raises(NoInput):
        FootAtlas.from_records(gamma, [])


def test_atlas_orientation_consistency():
    gamma = ModelClosedGeodesic(20.0, np.eye(3))
    x = NormalFiberPoint(0.0, np.eye(3)[0])
    with pytest.raises(PreconditionError):
        FootAtlas(gamma, [AtlasEntry("P", 1, x), AtlasEntry("P", -1, x, cuff=1)])
    with pytest.raises(PreconditionError):
        FootAtlas(gamma, [AtlasEntry("P", 0, x)])


# ---------------------------------------------------------------------------
# Cheeger constants

def test_half_space_cut_closed_form():
    # two fibre copies of area 4pi over half the volume L/2 * 4pi
    gamma = ModelClosedGeodesic(16.0, np.eye(3))
    mesh = bundle_mesh(gamma)
    nf = len(mesh.fiber_areas)
    half = np.zeros(mesh.size, bool)
    half[: (mesh.ns // 2) * nf] = True
    assert cut_ratio(mesh, half) == pytest.approx(4 / 16.0, rel=1e-12)


@pytest.mark.parametrize("m,fiber_ratio", [(2, 2 / math.pi), (3, 1.0)])
def test_cheeger_product_bundle(m, fiber_ratio):
    rep = cheeger_bundle_bound(ModelClosedGeodesic(16.0, np.eye(m)), 10.0)
    assert rep.passes and rep.estimate >= 1 / 40
    assert rep.estimate == pytest.approx(0.25, rel=1e-9)
    assert rep.half_space == pytest.approx(0.25, rel=1e-12)
    # hemisphere (or half-circle) cut: great sphere over half the sphere
    assert rep.fiber_sweep == pytest.approx(fiber_ratio, rel=1e-9)
    assert abs(rep.refined_estimate - rep.estimate) <= 0.1 * rep.estimate


def test_cheeger_twisted_bundle():
    rep = cheeger_bundle_bound(ModelClosedGeodesic(16.0, lz.rot2(0.7, 2)[1:, 1:]), 10.0, fiber_cells=(16,))
    assert rep.passes


def test_cheeger_preconditions():
    with pytest.raises(PreconditionError):
        cheeger_bundle_bound(ModelClosedGeodesic(40.0, np.eye(3)), 10.0)


def test_product_set_neighbourhood_rectangle_formula():
    # on the flat cylinder a rectangle grows by perimeter * eta plus a full disc
    A = ProductSet(3.0, 0.0, 0.4)
    eta = 0.2
    exact = 3.0 * 0.8 + eta * 2 * (3.0 + 0.8) + math.pi * eta ** 2
    assert A.volume(2) == pytest.approx(3.0 * 0.8)
    assert A.neighbourhood_volume(2, eta, 16.0) == pytest.approx(exact, rel=1e-8)


def test_growth_inequality_product_bundle():
    gamma = ModelClosedGeodesic(16.0, np.eye(3))
    rep = growth_inequality_check(gamma, 0.25, eta=0.5, count=100)
    assert rep["failures"] == 0 and rep["worst_ratio"] >= rep["required"]
    with pytest.raises(PreconditionError):
        growth_inequality_check(ModelClosedGeodesic(16.0, lz.rot2(0.3, 3)[1:, 1:]), 0.25)


# ---------------------------------------------------------------------------
# assembly

def test_single_pants_doubling():
    asm = double_and_assemble(*self_matched_pants())
    assert asm.chi == -2 and asm.genus == [2]
    assert set(asm.degrees().values()) == {3}


def test_two_pants_sharing_cuffs():
    corpus = {"A": ["g0", "g1", "g2"], "B": ["g0", "g1", "g2"]}
    matchings = {f"g{i}": ([("A", i), ("B", i)], [1, 0]) for i in range(3)}
    asm = double_and_assemble(matchings, corpus)
    assert asm.chi == -4 == oracles.euler_from_pants(2)
    assert set(asm.degrees().values()) == {3}


@pytest.mark.parametrize("seed", range(5))
def test_random_corpus_assembly(seed):
    matchings, corpus = random_corpus(10, 4, seed)
    asm = double_and_assemble(matchings, corpus)
    assert asm.chi == oracles.euler_from_pants(10)
    assert set(asm.degrees().values()) == {3}
    for k, v in asm.involution.items():
        assert v != k and asm.involution[v] == k
        assert k[1] == -v[1]
    for comp, e, g in zip(asm.components, asm.euler, asm.genus):
        assert e == -len(comp) and e == 2 - 2 * g


def test_assembly_errors():
    matchings, corpus = self_matched_pants()
    del matchings["P0-c2"]
    with pytest.raises(UnmatchedBoundary):
        double_and_assemble(matchings, corpus)
    matchings, corpus = self_matched_pants()
    matchings["P0-c2"] = ([("P0", 2), ("P0", 1)], [0, 1])
    with pytest.raises(InvolutionClash):
        double_and_assemble(matchings, corpus)
    with pytest.raises(InvolutionClash):
        double_and_assemble({"g": ([("P0", 0)], [1])}, {"P0": ["g"]})
    with pytest.raises(NoInput):
        double_and_assemble({}, {})


# ---------------------------------------------------------------------------
# well-matched pairs

def _pair(offset):
    gamma = ModelClosedGeodesic(20.0, np.eye(3))
    f1 = NormalFiberPoint(3.0, np.array([0.0, 0.6, 0.8]))
    t = tau(gamma, f1)
    return gamma, f1, normalize_point(gamma, NormalFiberPoint(t.s + offset, t.w))


def test_well_matched_exact_pair():
    gamma, f1, f2 = _pair(0.0)
    rep = well_matched_check(gamma, f1, 1, f2, -1, 1e-9, 10.0)
    assert rep["well_matched"] and rep["displacement"] < 1e-12
    assert not well_matched_check(gamma, f1, 1, f2, 1, 1e-9, 10.0)["well_matched"]


@pytest.mark.parametrize("factor,expected", [(0.9, True), (1.1, False)])
def test_well_matched_threshold(factor, expected):
    sigma = 10.0 ** -2
    gamma, f1, f2 = _pair(factor * sigma)
    rep = well_matched_check(gamma, f1, 1, f2, -1, sigma, 10.0)
    assert rep["displacement"] == pytest.approx(factor * sigma, rel=1e-9)
    assert rep["well_matched"] is expected


def test_well_attached_from_short_feet():
    R, sigma = 10.0, 1e-2
    gamma, f1, f2 = _pair(0.5 * sigma)
    w2 = f2.w
    short1 = NormalFiberPoint(f1.s + 1e-5, f1.w)
    short2 = NormalFiberPoint(f2.s, w2)
    rep = well_matched_check(gamma, f1, 1, f2, -1, sigma, R, K=1.0, short1=short1, short2=short2)
    assert rep["sigma_prime"] == pytest.approx(sigma + 2 * math.exp(-R))
    assert rep["sigma_prime"] <= R ** -1.5
    assert abs(rep["short_distance"] - 1) <= rep["sigma_prime"]
    assert rep["well_attached"]
