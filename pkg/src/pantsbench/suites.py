"""Randomised lemma suites shared by the command line and the reports."""
from __future__ import annotations

import math

import numpy as np

from . import lorentz as lz
from .config import DEFAULT_POLICY
from .geodesics import FermatKind, fermat_point, hdistance, vertex_angle
from .words import (absorb_perturbation, axis_invariants, close_eight_word, eight_word_matrix,
                    monodromy_class_distance)


def _log_uniform(rng, lo, hi):
    return math.exp(rng.uniform(math.log(lo), math.log(hi)))


def nan_suite(cases: int = 1000, seed: int = 0, n: int = 4, radius: float = 0.05) -> dict:
    """Round trip and uniqueness of the NAN factorization near the identity."""
    rng = np.random.default_rng(seed)
    worst_rt = worst_unique = worst_size = 0.0
    k = lz.nan_parameter_count(n)
    for _ in range(cases):
        d = radius * rng.uniform(0.01, 1.0)
        u = lz.random_near_identity(n, d, rng)
        f = lz.nan_decompose(u)
        worst_rt = max(worst_rt, float(np.max(np.abs(f.product() - u))))
        g = lz.nan_decompose(u, x0=1e-3 * rng.standard_normal(k))
        gap = max(float(np.max(np.abs(a - b))) for a, b in zip(f, g))
        worst_unique = max(worst_unique, gap)
        worst_size = max(worst_size, f.factor_size() / max(lz.group_distance(u, np.eye(n + 1)), 1e-300))
    return {"cases": cases, "max_roundtrip": worst_rt, "max_uniqueness_gap": worst_unique,
            "factor_constant": worst_size,
            "passed": worst_rt < DEFAULT_POLICY.roundtrip_tol and worst_unique < 1e-8}


def absorb_suite(cases: int = 500, seed: int = 0, n: int = 4, t_range=(8.0, 15.0),
                 eps_range=(1e-4, 1e-2)) -> dict:
    """Perturbation absorption against the spectral axis oracle."""
    rng = np.random.default_rng(seed)
    worst_t = worst_m = K = Km = 0.0
    rows = []
    for _ in range(cases):
        t = rng.uniform(*t_range)
        eps = _log_uniform(rng, *eps_range)
        m = lz.haar_so(n - 1, rng)
        u = lz.random_near_identity(n, eps, rng)
        got = absorb_perturbation(t, m, u)
        ref = axis_invariants(lz.flow(t, n) @ lz.m_embed(m) @ u)
        worst_t = max(worst_t, abs(got.t - ref.t))
        worst_m = max(worst_m, monodromy_class_distance(got.m_class, ref.m_class))
        K = max(K, abs(t - got.t) / eps)
        Km = max(Km, monodromy_class_distance(got.m_class, m) / eps)
        rows.append((t, abs(t - got.t) / eps))
    return {"cases": cases, "max_length_gap": worst_t, "max_monodromy_gap": worst_m, "K_length": K,
            "K_monodromy": Km, "passed": worst_t < 1e-9 and worst_m < 1e-7, "_rows": rows}


def eight_word_suite(cases: int = 500, seed: int = 0, n: int = 4, t_range=(8.0, 15.0),
                     eps_range=(1e-4, 1e-2)) -> dict:
    """Closing an eight-letter word against the spectral axis oracle."""
    rng = np.random.default_rng(seed)
    worst_t = worst_m = K = Km = 0.0
    for _ in range(cases):
        t1, t2 = rng.uniform(*t_range, size=2)
        eps = _log_uniform(rng, *eps_range)
        m1, m2 = lz.haar_so(n - 1, rng), lz.haar_so(n - 1, rng)
        u1, v1, u2, v2 = (lz.random_near_identity(n, eps, rng) for _ in range(4))
        got = close_eight_word(t1, u1, m1, v1, t2, u2, m2, v2)
        ref = axis_invariants(eight_word_matrix(t1, u1, m1, v1, t2, u2, m2, v2))
        worst_t = max(worst_t, abs(got.t - ref.t))
        worst_m = max(worst_m, monodromy_class_distance(got.m_class, ref.m_class))
        K = max(K, abs(got.t - t1 - t2) / eps)
        Km = max(Km, monodromy_class_distance(got.m_class, m1 @ m2) / eps)
    return {"cases": cases, "max_length_gap": worst_t, "max_monodromy_gap": worst_m, "K_length": K,
            "K_monodromy": Km, "passed": worst_t < 1e-9 and worst_m < 1e-7}


def random_triangle(rng, n: int = 2, spread: float = 1.5) -> list:
    from .geodesics import exp_point

    return [exp_point(lz.basepoint(n), np.r_[0.0, spread * rng.standard_normal(n)]) for _ in range(3)]


def fermat_suite(cases: int = 200, seed: int = 0, n: int = 2) -> dict:
    """Interior angles at the Fermat point, or the obtuse-vertex case."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    vertex_ok = True
    kinds = {"interior": 0, "vertex": 0}
    for _ in range(cases):
        A, B, C = random_triangle(rng, n)
        r = fermat_point(A, B, C)
        if r.kind is FermatKind.INTERIOR:
            kinds["interior"] += 1
            worst = max(worst, float(np.max(np.abs(np.asarray(r.angles) - 2 * math.pi / 3))))
        else:
            kinds["vertex"] += 1
            i = int(np.argmin([hdistance(r.point, P) for P in (A, B, C)]))
            P, Q1, Q2 = [(A, B, C), (B, C, A), (C, A, B)][i]
            vertex_ok &= vertex_angle(P, Q1, Q2) >= 2 * math.pi / 3 - 1e-9
    return {"cases": cases, "max_angle_error": worst, "vertex_cases_ok": bool(vertex_ok), **kinds,
            "passed": worst < 1e-6 and bool(vertex_ok)}


def horospherical_suite(cases: int = 200, seed: int = 0, n: int = 4) -> dict:
    rng = np.random.default_rng(seed)
    worst = worst_norm = 0.0
    for _ in range(cases):
        t = rng.uniform(0.01, 3.0)
        m = lz.haar_so(n - 1, rng)
        x = rng.standard_normal(n - 1)
        for sign in (1, -1):
            x1 = lz.conjugate_horospherical(t, m, x, sign)
            g = lz.flow(t, n) @ lz.m_embed(m)
            if sign < 0:
                g = np.linalg.inv(g)
            lhs = g @ lz.exp_n(x, sign) @ np.linalg.inv(g)
            worst = max(worst, float(np.max(np.abs(lhs - lz.exp_n(x1, sign)))))
            worst_norm = max(worst_norm, abs(np.linalg.norm(x1) / np.linalg.norm(x) - math.exp(-t)))
    return {"cases": cases, "max_identity_gap": worst, "max_norm_ratio_gap": worst_norm,
            "passed": worst < 1e-10 and worst_norm < 1e-10}


SUITES = {"nan": nan_suite, "absorb": absorb_suite, "eight-word": eight_word_suite,
          "fermat": fermat_suite, "horospherical": horospherical_suite}
