import math

import numpy as np
import pytest
import scipy.linalg

from pantsbench import lorentz as lz
from pantsbench.errors import ConfigError, NoConvergence, NotLoxodromic, NotNearIdentity
from pantsbench.words import (
    FrameFlow,
    Perturb,
    Rewrite,
    Rotation2,
    absorb_perturbation,
    axis_geodesic,
    axis_invariants,
    close_eight_word,
    eight_word_matrix,
    evaluate,
    instruction_from_json,
    inverse_word,
    monodromy_angles,
    monodromy_class_distance,
    translation_length,
)

import oracles


def test_empty_word_is_identity():
    assert np.array_equal(evaluate([], 3), np.eye(4))


def test_flows_add():
    g = evaluate([FrameFlow(1.5), FrameFlow(2.0)], 3)
    assert np.allclose(g, lz.flow(3.5, 3), atol=1e-12)


def test_word_times_inverse_word_is_identity():
    rng = np.random.default_rng(0)
    word = [FrameFlow(2.0), Rotation2(0.7), Rewrite.of(lz.haar_so(3, rng)),
            Perturb.of(lz.random_near_identity(3, 0.01, rng)), FrameFlow(-0.4), Rotation2(1.1, 2, 3)]
    g = evaluate(word, 3) @ evaluate(inverse_word(word), 3)
    assert np.max(np.abs(g - np.eye(4))) < 1e-11


def test_instruction_json_roundtrip():
    rng = np.random.default_rng(1)
    word = [FrameFlow(2.0), Rotation2(0.3, 1, 3), Rewrite.of(lz.haar_so(3, rng))]
    back = [instruction_from_json(ins.to_json()) for ins in word]
    assert np.allclose(evaluate(back, 3), evaluate(word, 3))
    with pytest.raises(ConfigError):
        instruction_from_json({"op": "shear"})


def test_perturb_requires_near_identity():
    with pytest.raises(NotNearIdentity):
        Perturb.of(lz.flow(1.0, 3))


# ---------------------------------------------------------------------------
# invariants

def test_normal_form_invariants():
    rng = np.random.default_rng(2)
    m = lz.haar_so(3, rng)
    inv = axis_invariants(lz.flow(3.0, 4) @ lz.m_embed(m))
    assert inv.t == pytest.approx(3.0, abs=1e-12)
    assert monodromy_class_distance(inv.m_class, m) < 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_invariants_are_conjugation_invariant(seed):
    rng = np.random.default_rng(seed)
    m = lz.haar_so(3, rng)
    g = lz.flow(2.5, 4) @ lz.m_embed(m)
    h = lz.flow(rng.uniform(0, 2), 4) @ lz.k_embed(lz.haar_so(4, rng))
    inv = axis_invariants(h @ g @ lz.lorentz_inverse(h))
    assert inv.t == pytest.approx(2.5, abs=1e-10)
    assert np.allclose(monodromy_angles(inv.m_class), monodromy_angles(m), atol=1e-8)


def test_invariants_match_eigenvalue_oracle():
    rng = np.random.default_rng(3)
    word = [FrameFlow(9.0), Perturb.of(lz.random_near_identity(4, 0.01, rng)), Rewrite.of(lz.haar_so(4, rng)),
            FrameFlow(10.0), Perturb.of(lz.random_near_identity(4, 0.01, rng)), Rewrite.of(lz.haar_so(4, rng))]
    g = evaluate(word, 4)
    t, ang = oracles.loxodromic_spectrum(g)
    inv = axis_invariants(g)
    assert inv.t == pytest.approx(t, abs=1e-10)
    assert np.allclose(monodromy_angles(inv.m_class), np.sort(ang), atol=1e-7)


def test_so2_monodromy_keeps_sign():
    a = np.array([[math.cos(0.4), -math.sin(0.4)], [math.sin(0.4), math.cos(0.4)]])
    assert monodromy_class_distance(a, a.T) == pytest.approx(0.8)


def test_non_loxodromic_rejected():
    with pytest.raises(NotLoxodromic):
        axis_invariants(lz.k_embed(lz.haar_so(3, np.random.default_rng(0))))
    with pytest.raises(NotLoxodromic):
        translation_length(np.eye(4))


def test_axis_geodesic_is_translated():
    g = lz.flow(2.0, 3) @ lz.rot2(0.5, 3, 2, 3)
    ax = axis_geodesic(g)
    assert np.allclose(g @ ax.point(0.0), ax.point(2.0), atol=1e-10)


# ---------------------------------------------------------------------------
# absorption

def test_absorb_identity_perturbation_is_exact():
    rng = np.random.default_rng(4)
    m = lz.haar_so(3, rng)
    inv = absorb_perturbation(10.0, m, np.eye(5))
    assert inv.t == 10.0
    assert np.allclose(inv.m_class, m, atol=1e-14)


def test_absorb_flow_perturbation_adds():
    m = lz.haar_so(3, np.random.default_rng(5))
    inv = absorb_perturbation(10.0, m, lz.flow(0.003, 4))
    assert inv.t == pytest.approx(10.003, abs=1e-12)
    assert monodromy_class_distance(inv.m_class, m) < 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_absorb_matches_spectral_oracle(seed):
    rng = np.random.default_rng(seed)
    t = rng.uniform(8, 15)
    m = lz.haar_so(3, rng)
    u = lz.random_near_identity(4, 0.01, rng)
    got = absorb_perturbation(t, m, u)
    ref_t, ref_ang = oracles.loxodromic_spectrum(lz.flow(t, 4) @ lz.m_embed(m) @ u)
    assert got.t == pytest.approx(ref_t, abs=1e-9)
    assert np.allclose(monodromy_angles(got.m_class), np.sort(ref_ang), atol=1e-7)


def test_absorb_short_flow_does_not_converge():
    rng = np.random.default_rng(6)
    with pytest.raises(NoConvergence):
        absorb_perturbation(0.01, np.eye(3), lz.random_near_identity(4, 0.04, rng))


def test_absorb_trace_residuals_decrease():
    rng = np.random.default_rng(7)
    tr = absorb_perturbation(9.0, lz.haar_so(3, rng), lz.random_near_identity(4, 0.01, rng), trace=True)
    r = tr.residuals
    assert all(b < a for a, b in zip(r, r[1:]))
    assert r[-1] < 1e-13


# ---------------------------------------------------------------------------
# eight-letter words

def test_eight_word_trivial_perturbations():
    rng = np.random.default_rng(8)
    m1, m2 = lz.haar_so(3, rng), lz.haar_so(3, rng)
    I = np.eye(5)
    inv = close_eight_word(9.0, I, m1, I, 11.0, I, m2, I)
    assert inv.t == pytest.approx(20.0, abs=1e-12)
    assert monodromy_class_distance(inv.m_class, m1 @ m2) < 1e-10


def _eight_instance(rng, eps):
    m1, m2 = lz.haar_so(3, rng), lz.haar_so(3, rng)
    us = [lz.random_near_identity(4, eps, rng) for _ in range(4)]
    return 9.0, us[0], m1, us[1], 12.0, us[2], m2, us[3]


@pytest.mark.parametrize("seed", range(5))
def test_eight_word_matches_spectral_oracle(seed):
    args = _eight_instance(np.random.default_rng(seed), 0.01)
    got = close_eight_word(*args)
    t, ang = oracles.loxodromic_spectrum(eight_word_matrix(*args))
    assert got.t == pytest.approx(t, abs=1e-9)
    assert np.allclose(monodromy_angles(got.m_class), np.sort(ang), atol=1e-7)


def test_eight_word_deviation_scales_linearly():
    rng = np.random.default_rng(9)
    base = _eight_instance(rng, 0.01)
    t1, t2 = base[0], base[4]
    logs = [np.real(scipy.linalg.logm(x)) for x in (base[1], base[3], base[5], base[7])]
    lams = np.array([0.05, 0.1, 0.2, 0.4, 0.8])
    dev = []
    for lam in lams:
        u1, v1, u2, v2 = (scipy.linalg.expm(lam * X) for X in logs)
        inv = close_eight_word(t1, u1, base[2], v1, t2, u2, base[6], v2)
        dev.append(abs(inv.t - t1 - t2))
    slope = np.polyfit(np.log(lams), np.log(dev), 1)[0]
    assert slope >= 0.9
