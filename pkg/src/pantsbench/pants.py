"""Synthetic pants, connection monodromies and the good/bad dichotomy."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import lorentz as lz
from .config import DEFAULT_POLICY, NumericPolicy
from .errors import DegenerateTheta, DimensionTooSmall, InconsistentGeometry, PreconditionError
from .steiner import (
    PantsPresentation,
    SteinerGraph,
    Tripods,
    steiner_minimize,
    tripods_from_steiner,
)
from .words import axis_invariants, monodromy_class_distance, translation_length

TWO_THIRDS_PI = 2 * math.pi / 3


# ---------------------------------------------------------------------------
# involutions

def Z_matrix(k: int) -> np.ndarray:
    """diag(-1, 1, ..., 1) in SO(n-1)-coordinates; the restriction of R(pi)."""
    z = np.ones(k)
    z[0] = -1.0
    return np.diag(z)


def phi(X: np.ndarray) -> np.ndarray:
    """Conjugation by Z."""
    X = np.asarray(X, dtype=float)
    Y = X.copy()
    Y[0, 1:] *= -1.0
    Y[1:, 0] *= -1.0
    return Y


def bad_involution(k: int) -> np.ndarray:
    """diag(-1, -1, 1, ..., 1) in SO(k)."""
    u = np.ones(k)
    u[:2] = -1.0
    return np.diag(u)


def in_Q(X: np.ndarray, tol: float = 1e-9) -> bool:
    """Membership in the subgroup of SO(n-1) fixing the first basis vector."""
    X = np.asarray(X)
    return abs(X[0, 0] - 1) < tol and np.max(np.abs(X[1:, 0])) < tol and np.max(np.abs(X[0, 1:])) < tol


@dataclass
class Alignment:
    Q: np.ndarray
    U: np.ndarray
    dist: float
    bad: bool


def align_to_involution(A: np.ndarray) -> Alignment:
    """Find Q fixing e1 with ``d(AQ, U) <= d(A, phi(A)) / 2``.

    U is the identity when ``A e1`` lies in the hemisphere of ``e1`` and
    ``diag(-1, -1, 1, ...)`` otherwise.  With ``r`` the minimal rotation
    taking ``A e1`` to ``U e1``, ``Q = (U r A)^{-1}``.
    """
    from .geodesics import rotation_taking

    A = np.asarray(A, dtype=float)
    k = A.shape[0]
    if k == 1:
        return Alignment(np.eye(1), np.eye(1), 0.0, False)
    a = A[:, 0]
    bad = a[0] < 0
    U = bad_involution(k) if bad else np.eye(k)
    target = U[:, 0]
    r = rotation_taking(a, target)
    Q = (U @ r @ A).T
    # Q fixes e1 up to round-off; clean it
    Q[0, :] = 0.0
    Q[:, 0] = 0.0
    Q[0, 0] = 1.0
    if k > 1:
        u, _, vt = np.linalg.svd(Q[1:, 1:])
        Q[1:, 1:] = u @ vt
    return Alignment(Q, U, lz.rotation_distance(A @ Q, U), bool(bad))


# ---------------------------------------------------------------------------
# synthetic pants

def _connection(i: int, l: float, X: np.ndarray, n: int) -> np.ndarray:
    a = TWO_THIRDS_PI * i
    return lz.rot2(a, n) @ lz.flow(l, n) @ lz.rot2(math.pi, n) @ lz.m_embed(X) @ lz.rot2(a, n)


def pants_from_connections(ls, Xs, n: int, provenance: str = "synthetic") -> PantsPresentation:
    """Pants whose Steiner graph is the standard theta graph at the base point.

    Connection ``i`` leaves the base frame along ``R(2 pi i/3) e1``, flows a
    distance ``ls[i]``, turns around and applies the connection monodromy
    ``Xs[i]`` before rotating into the second tripod.
    """
    return PantsPresentation(n, tuple(_connection(i, ls[i], Xs[i], n) for i in range(3)), provenance,
                             {"ls": [float(v) for v in ls]})


def _half_length_for(R: float, n: int, X: np.ndarray) -> float:
    def f(l):
        p = pants_from_connections([l] * 3, [X] * 3, n)
        return translation_length(p.cuff(0)) - 2 * R

    return brentq(f, 0.5 * R, 2.0 * R + 5.0, xtol=1e-14, rtol=1e-15)


def build_perfect_pants(n: int, R: float) -> PantsPresentation:
    """Fuchsian pants in the (x0, x1, x2) plane with three cuffs of length 2R."""
    if n < 2 or R <= 2:
        raise PreconditionError("need n >= 2 and R > 2")
    X = np.eye(n - 1)
    l = _half_length_for(R, n, X)
    p = pants_from_connections([l] * 3, [X] * 3, n, "synthetic-good")
    p.meta.update({"R": R, "l": l})
    return p


def build_bad_pants(n: int, R: float) -> PantsPresentation:
    """Pants with every connection monodromy equal to diag(-1, -1, 1, ...)."""
    if n < 3:
        raise DimensionTooSmall("bad pants need n >= 3")
    if R <= 2:
        raise PreconditionError("need R > 2")
    X = bad_involution(n - 1)
    l = _half_length_for(R, n, X)
    p = pants_from_connections([l] * 3, [X] * 3, n, "synthetic-bad")
    p.meta.update({"R": R, "l": l})
    return p


def boundary_words(p: PantsPresentation) -> dict:
    """Short words in the connections whose axes are candidate boundary curves."""
    c = p.cuffs()
    inv = lz.lorentz_inverse
    return {
        "c0": c[0], "c1": c[1], "c2": c[2],
        "[c0,c1]": c[0] @ c[1] @ inv(c[0]) @ inv(c[1]),
        "c0 c1^-1": c[0] @ inv(c[1]),
        "c1 c2^-1": c[1] @ inv(c[2]),
        "c2 c0^-1": c[2] @ inv(c[0]),
    }


def perturb_pants(p: PantsPresentation, scale: float, seed=0) -> PantsPresentation:
    """Right-multiply every connection by a random element within ``scale`` of e."""
    rng = np.random.default_rng(seed)
    gs = []
    for g in p.connections:
        if scale == 0:
            gs.append(g.copy())
            continue
        u = lz.random_near_identity(p.n, scale * rng.random(), rng)
        gs.append(g @ u)
    q = PantsPresentation(p.n, tuple(gs), "perturbed", dict(p.meta))
    q.meta["perturbation"] = scale
    return q


# ---------------------------------------------------------------------------
# cuff invariants

@dataclass
class CuffInvariants:
    lengths: np.ndarray
    monodromies: list

    def good(self, R: float, eps: float) -> list:
        k = self.monodromies[0].shape[0]
        return [abs(self.lengths[i] - 2 * R) < 2 * eps and lz.rotation_distance(self.monodromies[i]) < eps
                for i in range(3)]

    def to_json(self) -> dict:
        return {"lengths": self.lengths.tolist(),
                "monodromy_dist": [lz.rotation_distance(m) for m in self.monodromies]}


def cuff_invariants(p: PantsPresentation) -> CuffInvariants:
    invs = [axis_invariants(c) for c in p.cuffs()]
    return CuffInvariants(np.array([v.t for v in invs]), [v.m_class for v in invs])


# ---------------------------------------------------------------------------
# connection monodromies

def connection_monodromies(sg: SteinerGraph, tri: Tripods) -> tuple[list, float]:
    """Monodromies ``X_i`` in SO(n-1) of the three connections.

    ``X_i`` is defined by ``E_i G(l_i) R(pi) X_i = F_i`` where ``E_i`` is
    the frame at x pointing along connection ``i`` and ``F_i`` the frame at
    ``g_i y`` pointing back.  Returns the restrictions and the largest
    deviation of the full matrices from the subgroup M.
    """
    p = sg.presentation
    n = p.n
    Pinv = lz.lorentz_inverse(tri.P)
    Xs = []
    defect = 0.0
    for i, g in enumerate(p.connections):
        a = TWO_THIRDS_PI * i
        full = (lz.rot2(math.pi, n) @ lz.flow(-sg.lengths[i], n) @ lz.rot2(-a, n) @ Pinv @ g @ tri.Fq
                @ lz.rot2(-a, n))
        I = np.eye(n + 1)
        defect = max(defect, float(np.max(np.abs(full[:, :2] - I[:, :2]))), float(np.max(np.abs(full[:2, :] - I[:2, :]))))
        X = full[2:, 2:]
        u, _, vt = np.linalg.svd(X)
        Xs.append(u @ vt)
    return Xs, defect


def predicted_cuff_monodromy(Xs: list, i: int) -> np.ndarray:
    """Estimate of the monodromy of cuff ``c_i``: ``X_{i+2}^{-1} phi(X_{i+1})``."""
    return Xs[(i + 2) % 3].T @ phi(Xs[(i + 1) % 3])


# ---------------------------------------------------------------------------
# classification

class Verdict(enum.Enum):
    GOOD = "good"
    BAD = "bad"
    NOT_CUFF_GOOD = "not-cuff-good"
    UNRESOLVED = "unresolved"


@dataclass
class Classification:
    verdict: Verdict
    certificate: float = math.nan
    threshold: float = math.nan
    slack: float = math.nan
    aligned: list = field(default_factory=list)
    target: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"verdict": self.verdict.value, "certificate": self.certificate, "threshold": self.threshold,
                "slack": self.slack, "aligned": [a.tolist() for a in self.aligned],
                "target": None if self.target is None else self.target.tolist(),
                "diagnostics": self.diagnostics}


def verdict_from_monodromies(Xs: list, eps: float, slack: float) -> Classification:
    al = align_to_involution(Xs[0])
    aligned = [X @ al.Q for X in Xs]
    dists = [lz.rotation_distance(A, al.U) for A in aligned]
    thr = 7 * eps * slack
    cert = max(dists)
    diag = {"distances": dists, "align_dist": al.dist}
    if cert < thr:
        v = Verdict.BAD if al.bad else Verdict.GOOD
    else:
        v = Verdict.UNRESOLVED
    return Classification(v, cert, thr, slack, aligned, al.U, diag)


def classify(p: PantsPresentation, R: float, eps: float, policy: NumericPolicy = DEFAULT_POLICY,
             gauge_rng: Optional[np.random.Generator] = None, sg: Optional[SteinerGraph] = None,
             steiner_seeds: int = 3) -> Classification:
    """Good / bad / not cuff-good verdict for a pants presentation."""
    ci = cuff_invariants(p)
    ok = ci.good(R, eps)
    if not all(ok):
        return Classification(Verdict.NOT_CUFF_GOOD, diagnostics={"cuffs": ci.to_json(), "cuff_good": ok})
    try:
        if sg is None:
            sg = steiner_minimize(p, seeds=steiner_seeds)
        tri = tripods_from_steiner(sg, gauge_rng)
    except DegenerateTheta as exc:
        return Classification(Verdict.UNRESOLVED, diagnostics={"error": str(exc), "cuffs": ci.to_json()})
    Xs, defect = connection_monodromies(sg, tri)
    c = verdict_from_monodromies(Xs, eps, policy.classifier_slack)
    pred = [monodromy_class_distance(predicted_cuff_monodromy(Xs, i), ci.monodromies[i]) for i in range(3)]
    c.diagnostics.update({"cuffs": ci.to_json(), "steiner_lengths": sg.lengths.tolist(),
                          "steiner_angle_error": sg.max_angle_error(), "frame_defect": defect,
                          "cuff_prediction_error": pred})
    return c


def classify_gauges(p: PantsPresentation, R: float, eps: float, gauges: int = 20, seed: int = 0,
                    policy: NumericPolicy = DEFAULT_POLICY) -> list:
    """Classify once per random frame gauge, sharing one Steiner minimisation."""
    ci = cuff_invariants(p)
    if not all(ci.good(R, eps)):
        return [classify(p, R, eps, policy)] * gauges
    sg = steiner_minimize(p)
    rng = np.random.default_rng(seed)
    return [classify(p, R, eps, policy, gauge_rng=rng, sg=sg) for _ in range(gauges)]


# ---------------------------------------------------------------------------
# third connections

def frame_with_first(a: np.ndarray, det: int = 1) -> np.ndarray:
    """Orthogonal matrix with first column ``a`` and determinant ``det``."""
    a = np.asarray(a, dtype=float)
    k = a.shape[0]
    e = np.zeros(k)
    e[0] = 1.0
    v = a - e
    nv = np.linalg.norm(v)
    if nv < 1e-14:
        H, sgn = np.eye(k), 1
    else:
        v /= nv
        H, sgn = np.eye(k) - 2.0 * np.outer(v, v), -1
    if sgn != det:
        if k == 1:
            raise PreconditionError("no orthogonal 1x1 matrix with that first column and determinant")
        H[:, -1] *= -1.0
    return H


def long_feet_monodromies(a: np.ndarray, b: np.ndarray, holonomy: np.ndarray,
                          E: Optional[np.ndarray] = None, F: Optional[np.ndarray] = None):
    """``X1, X2`` with ``(-a, E) X1 = (b, F)`` and ``(a, E) X2 = (-b, F)`` across the seam.

    ``a`` and ``b`` are unit normals expressed in one fibre; the second
    equation picks up the gluing map once because that arc crosses the seam.
    ``(a, E)`` is positively and ``(b, F)`` negatively oriented; the default
    completions are the Householder ones.
    """
    k = len(a)
    Ka = frame_with_first(a, 1) if E is None else np.column_stack([a, E])
    Kb = frame_with_first(b, -1) if F is None else np.column_stack([b, F])
    X1 = (Ka @ Z_matrix(k)).T @ Kb
    Kbm = Kb.copy()
    Kbm[:, 0] *= -1.0
    X2 = Ka.T @ holonomy @ Kbm
    return X1, X2


@dataclass
class ThirdConnectionMonodromies:
    X1: np.ndarray
    X2: np.ndarray
    Y: np.ndarray
    predicted: list  # monodromies of gamma0, gamma1, gamma2
    predicted_lengths: list  # planar right-angle values
    lemma_lengths: list  # arc + connection - 2 ln 2
    arcs: tuple
    d1: float

    def to_json(self) -> dict:
        return {"X1": self.X1.tolist(), "X2": self.X2.tolist(), "Y": self.Y.tolist(),
                "predicted": [m.tolist() for m in self.predicted],
                "predicted_lengths": self.predicted_lengths, "lemma_lengths": self.lemma_lengths,
                "arcs": list(self.arcs), "d1": self.d1}


def _feet_in_cover(gamma, u, v):
    from .geodesics import normalize_point

    u = normalize_point(gamma, u)
    v = normalize_point(gamma, v)
    sB = v.s if v.s > u.s else v.s + gamma.length
    # the vector at cover position s + L that represents (s, w) is holonomy^{-1} w
    b = v.w if sB == v.s else gamma.holonomy_power(-1) @ v.w
    return u.s, u.w, sB, b


def third_connection_analysis(gamma, feet, l: float, Y: np.ndarray, slack: float = 0.0) -> ThirdConnectionMonodromies:
    """Predicted invariants of the two cuffs cut off by a third connection.

    ``feet = (u, v)`` are the outgoing tangent ``eta'(A)`` at the start and
    the incoming tangent ``eta'(B)`` at the end, both as points of the normal
    bundle of ``gamma``; ``Y`` is the monodromy along the connection in the
    gauge of the Householder completions.  The arc ``alpha_1`` runs forward
    from A to B.
    """
    if gamma.fiber_dim < 2:
        raise DimensionTooSmall("third connections need n >= 3")
    if l <= 0:
        raise InconsistentGeometry("connection length must be positive")
    sA, a, sB, b = _feet_in_cover(gamma, *feet)
    x1 = sB - sA
    x2 = gamma.length - x1
    if min(x1, x2) <= slack:
        raise InconsistentGeometry("feet coincide along the geodesic")
    X1, X2 = long_feet_monodromies(a, b, gamma.holonomy)
    Y = np.asarray(Y, dtype=float)
    preds = [X2.T @ phi(X1), X1.T @ phi(Y), Y.T @ phi(X2)]
    lengths = [gamma.length]
    for x in (x1, x2):
        c = math.sinh(0.5 * x) * math.sinh(0.5 * l)
        if c <= 1.0:
            raise InconsistentGeometry("no closed geodesic with two right angles for these lengths")
        lengths.append(2.0 * math.acosh(c))
    lemma = [gamma.length, x1 + l - 2 * math.log(2), x2 + l - 2 * math.log(2)]
    d1 = lz.sphere_distance(a, -b)
    return ThirdConnectionMonodromies(X1, X2, Y, preds, lengths, lemma, (x1, x2), d1)


def _frame_matrix(n: int, tangent: np.ndarray, first: np.ndarray, rest: np.ndarray) -> np.ndarray:
    M = np.zeros((n + 1, n + 1))
    M[0, 0] = 1.0
    M[1:, 1] = tangent
    M[1:, 2] = first
    M[1:, 3:] = rest
    return M


def third_connection_words(gamma, feet, l: float, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Isometries ``(D, h, h D)`` whose axes are the three cuffs.

    ``D`` translates along ``gamma`` (the x1-axis model, translated so that
    A sits at the base point), ``h`` carries the
    frame at B on the axis to the frame at the far end of the connection, so
    its axis is the cuff made of ``alpha_1`` and the connection, and
    ``h D`` is the cuff made of ``alpha_2`` and the connection.
    """
    n = gamma.fiber_dim + 1
    sA, a, sB, b = _feet_in_cover(gamma, *feet)
    k = gamma.fiber_dim
    Ka = frame_with_first(a, 1)
    Kb = frame_with_first(b, -1)
    pad = np.zeros((1, k - 1))
    down = np.r_[-1.0, np.zeros(k)]
    # coordinates centred at A; translation along the axis commutes with D
    E0 = _frame_matrix(n, np.r_[0.0, a], down, np.vstack([pad, Ka[:, 1:]]))
    F0 = lz.flow(sB - sA, n) @ _frame_matrix(n, np.r_[0.0, -b], down, np.vstack([pad, Kb[:, 1:]]))
    far = E0 @ lz.flow(l, n) @ lz.rot2(math.pi, n) @ lz.m_embed(np.asarray(Y, dtype=float))
    h = far @ lz.lorentz_inverse(F0)
    D = gamma.deck_element()
    return D, h, h @ D


# ---------------------------------------------------------------------------
# average feet

def _letters(gens):
    from . import precise as P

    out = []
    for i, g in enumerate(gens):
        out.append(((i, 1), g))
        out.append(((i, -1), P.linv(g)))
    return out


def _short_words(gens, maxlen: int = 2):
    letters = _letters(gens)
    out = []
    frontier = [((), None)]
    for _ in range(maxlen):
        nxt = []
        for key, M in frontier:
            for lk, g in letters:
                if key and key[-1][0] == lk[0] and key[-1][1] == -lk[1]:
                    continue
                W = g if M is None else M @ g
                nxt.append((key + (lk,), W))
        out.extend(nxt)
        frontier = nxt
    return out


@dataclass
class AverageFeet:
    gamma: object  # ModelClosedGeodesic
    cuff: int
    connection_length: float
    connection_word: tuple
    long_feet: tuple  # NormalFiberPoints at A and B, both pointing into the connection
    d1: float
    average: list
    short: list
    drift: list

    def to_json(self) -> dict:
        return {"cuff": self.cuff, "length": self.gamma.length, "connection_length": self.connection_length,
                "connection_word": [list(x) for x in self.connection_word],
                "long_feet": [f.to_json() for f in self.long_feet], "d1": self.d1,
                "average": [a.to_json() for a in self.average], "short": [s.to_json() for s in self.short],
                "drift": self.drift}


def average_feet(p: PantsPresentation, cuff: int = 0, classification: Optional[Classification] = None,
                 word_length: int = 2) -> AverageFeet:
    """Average feet of the shortest third connection of cuff ``cuff`` and the short feet.

    Lifts of the cuff one cuff-length away are resolved in extended
    precision (see ``precise``).  The third connection is the shortest
    orthogeodesic from the cuff axis to a translate by a short word outside
    the cuff's own cyclic group; its two ends come from the word and its
    inverse.  Short feet are the seam ends on the cuff.
    """
    import mpmath

    from . import precise as P
    from .errors import AntipodalFeet, InconsistentGeometry as _IG, PantsBenchError
    from .geodesics import ModelClosedGeodesic, NormalFiberPoint, n1_distance, normalize_point

    if classification is not None and classification.verdict is not Verdict.GOOD:
        raise PreconditionError("average feet are defined for good pants")
    i = cuff
    with mpmath.workdps(P.DPS):
        g = [P.lorentz_project(P.to_mp(x)) for x in p.connections]
        cs = [g[(j + 1) % 3] @ P.linv(g[(j + 2) % 3]) for j in range(3)]
        axes = [P.axis_mp(c) for c in cs]
        ax = axes[i]
        gamma = ModelClosedGeodesic(ax.length, ax.holonomy)
        words = _short_words(cs, word_length)
        cands = {}
        for key, w in words:
            if all(k[0] == i for k in key):
                continue
            lp, lm = ax.endpoints()
            try:
                cands[key] = P.orthogeodesic_mp(ax.endpoints(), (w @ lp, w @ lm))
            except PantsBenchError:
                continue
        key = min(cands, key=lambda k: cands[k].length)
        inv = tuple((k[0], -k[1]) for k in reversed(key))
        if inv not in cands:
            raise _IG("inverse word of the third connection was not resolved")
        oA, oB = cands[key], cands[inv]
        A = NormalFiberPoint(*P.fiber_coords(ax.h, oA.p1, oA.foot1))
        B = NormalFiberPoint(*P.fiber_coords(ax.h, oB.p1, oB.foot1))
        seams = []
        ident = P.eye(cs[0].shape[0])
        for j in range(3):
            if j == i:
                continue
            best = None
            for _, w in [((), ident)] + words:
                lp, lm = axes[j].endpoints()
                try:
                    o = P.orthogeodesic_mp(ax.endpoints(), (w @ lp, w @ lm))
                except PantsBenchError:
                    continue
                if best is None or o.length < best.length:
                    best = o
            seams.append(normalize_point(gamma, NormalFiberPoint(*P.fiber_coords(ax.h, best.p1, best.foot1))))
    A = normalize_point(gamma, A)
    B = normalize_point(gamma, B)
    L = gamma.length
    sB = B.s if B.s > A.s else B.s + L
    wB = B.w if sB == B.s else gamma.holonomy_power(-1) @ B.w
    d1 = lz.sphere_distance(A.w, wB)
    arcs = [(A.s, A.w, sB, wB), (sB, wB, A.s + L, gamma.holonomy_power(-1) @ A.w)]
    average, short, drift = [], [], []
    for s0, w0, s1, w1 in arcs:
        v = w0 + w1
        nv = np.linalg.norm(v)
        if nv < 1e-8:
            raise AntipodalFeet("transported long feet are antipodal")
        a = normalize_point(gamma, NormalFiberPoint(0.5 * (s0 + s1), v / nv))
        inside = [sm for sm in seams if (sm.s - s0) % L < s1 - s0]
        if len(inside) != 1:
            raise _IG("expected exactly one seam foot on each arc")
        average.append(a)
        short.append(inside[0])
        drift.append(n1_distance(gamma, a, inside[0]))
    return AverageFeet(gamma, i, oA.length, key, (A, B), d1, average, short, drift)
