"""Invariants of third connections, good regions and the estimated average foot measure.

Coordinates on the invariant space follow the pants module: a point is a
pair of feet ``u = eta'(A)`` and ``v = eta'(B)`` on the normal bundle of a
closed geodesic, a connection length ``l`` and a monodromy in SO(n-1) taken
against frames ``(u, E)`` (positively oriented) and ``(v, F)`` (negatively
oriented).  The pullback coordinates ``(c, b, l, Y)`` use the average foot
``c`` and the long foot ``b`` at B pointing into the connection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy import integrate, special

from . import lorentz as lz
from .errors import AcceptanceTooLow, AntipodalOrFar, InconsistentGeometry, NotLoxodromic, PreconditionError
from .geodesics import ModelClosedGeodesic, NormalFiberPoint, normalize_point, rotation_taking
from .pants import frame_with_first, long_feet_monodromies, phi, third_connection_analysis, third_connection_words
from .words import axis_invariants, monodromy_angles

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# length diamonds

def diamond_area(R: float, eps: float, l0: float) -> float:
    """Weighted area of ``{|x + y - c| < 2 eps, |l0 - x + y - c| < 2 eps}``, ``c = 2R + 2 ln 2``."""
    if eps < 0:
        raise PreconditionError("eps must be nonnegative")
    return 8.0 * math.exp(4.0 * R - l0) * (2.0 * math.sinh(2.0 * eps)) ** 2


def hat_diamond_area(R: float, delta: float, l0: float) -> float:
    """Same with ``2x`` in place of ``x``."""
    if delta < 0:
        raise PreconditionError("delta must be nonnegative")
    return 4.0 * math.exp(4.0 * R - l0) * (2.0 * math.sinh(2.0 * delta)) ** 2


def in_diamond(x, y, R: float, eps: float, l0: float, hat: bool = False):
    """Vectorised membership; ``hat`` switches to the doubled first coordinate."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    X = 2.0 * x if hat else x
    c = 2.0 * R + 2.0 * LN2
    return (np.abs(X + y - c) < 2 * eps) & (np.abs(l0 - X + y - c) < 2 * eps)


def diamond_box(R: float, eps: float, l0: float, hat: bool = False) -> tuple:
    """Bounding box ``((x_lo, x_hi), (y_lo, y_hi))`` of the diamond."""
    c = 2.0 * R + 2.0 * LN2
    xs = (0.5 * l0 - 2 * eps, 0.5 * l0 + 2 * eps)
    if hat:
        xs = (0.5 * xs[0], 0.5 * xs[1])
    ys = (c - 0.5 * l0 - 2 * eps, c - 0.5 * l0 + 2 * eps)
    return xs, ys


def hat_diamond_l_cdf(t, R: float, delta: float, l0: float):
    """CDF of the connection length under ``e^{2y}`` restricted to the hat diamond."""
    c = 2.0 * R + 2.0 * LN2
    y0 = c - 0.5 * l0
    t = np.asarray(t, dtype=float)

    # width of the X-section at height y is 4 delta - 2|y - y0|
    def mass(u):
        u = np.clip(u, y0 - 2 * delta, y0 + 2 * delta)
        f = lambda y: (4 * delta - 2 * abs(y - y0)) * math.exp(2 * (y - y0))
        return integrate.quad(f, y0 - 2 * delta, u, points=[y0])[0]

    total = mass(y0 + 2 * delta)
    return np.vectorize(lambda u: mass(u) / total)(t)


# ---------------------------------------------------------------------------
# Haar measure on SO(m) in exponential coordinates

def so_dim(m: int) -> int:
    return m * (m - 1) // 2


def unit_ball_volume(k: int) -> float:
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


def sphere_volume(d: int) -> float:
    """Area of the unit sphere ``S^d``."""
    return 2.0 * math.pi ** ((d + 1) / 2) / math.gamma((d + 1) / 2)


def so_volume(m: int) -> float:
    """Volume of SO(m) for the half-trace metric (SO(2) has length 2 pi)."""
    v = 1.0
    for j in range(2, m + 1):
        v *= sphere_volume(j - 1)
    return v


def _sinc(x):
    return np.sinc(np.asarray(x) / math.pi)


def _skew_stack(xi: np.ndarray, m: int) -> np.ndarray:
    S = np.zeros(xi.shape[:-1] + (m, m))
    iu = np.triu_indices(m, 1)
    S[..., iu[0], iu[1]] = xi
    return S - np.swapaxes(S, -1, -2)


def exp_jacobian(xi: np.ndarray, m: int) -> np.ndarray:
    """Haar density of ``exp`` at ``xi`` relative to Lebesgue measure.

    Equals the product over pairs of eigen-angles of ``sinc((mu_p + mu_q)/2)``.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if m == 2:
        return np.ones(xi.shape[0])
    s = np.sum(xi * xi, axis=-1)
    if m == 3:
        return _sinc(0.5 * np.sqrt(s)) ** 2
    if m == 4:
        pf = np.abs(xi[:, 0] * xi[:, 5] - xi[:, 1] * xi[:, 4] + xi[:, 2] * xi[:, 3])
        a = np.sqrt(s + 2 * pf)
        b = np.sqrt(np.maximum(s - 2 * pf, 0.0))
        return (_sinc(0.5 * a) * _sinc(0.5 * b)) ** 2
    mu = np.linalg.eigvals(_skew_stack(xi, m)).imag
    p, q = np.triu_indices(m, 1)
    return np.prod(np.abs(_sinc(0.5 * (mu[:, p] + mu[:, q]))), axis=-1)


def exp_skew(xi: np.ndarray, m: int) -> np.ndarray:
    """Batched exponential of skew matrices given by upper-triangular coordinates."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if m == 2:
        c, s = np.cos(xi[:, 0]), np.sin(xi[:, 0])
        return np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -2)
    S = _skew_stack(xi, m)
    if m == 3:
        th = np.sqrt(np.sum(xi * xi, axis=-1))[:, None, None]
        A = _sinc(th)
        B = 0.5 * _sinc(0.5 * th) ** 2
        return np.eye(3) + A * S + B * (S @ S)
    return scipy.linalg.expm(S)


def unit_ball_points(k: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in the unit ball of R^k."""
    g = rng.standard_normal((N, k))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random(N)[:, None] ** (1.0 / k)


def small_radius_threshold(m: int) -> float:
    """Largest radius for which balls stay inside the injectivity domain of exp."""
    return math.pi / 4


def ball_intersection_volume(X: np.ndarray, r: float, samples: int = 100_000, seed: int = 0,
                             method: str = "ball") -> tuple[float, float]:
    """Monte Carlo volume of ``B_r(e) & B_r(X)`` in SO(m).

    ``method="ball"`` draws uniform exponential coordinates in ``B_r(e)`` and
    weights them by the Haar Jacobian; ``method="haar"`` draws Haar elements
    of the whole group and counts hits, which is unbiased but wasteful for
    small ``r``.
    """
    X = np.asarray(X, dtype=float)
    m = X.shape[0]
    if not 0 < r < small_radius_threshold(m):
        raise PreconditionError("radius outside the small-radius regime")
    if lz.rotation_distance(X) >= 2 * r:
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    k = so_dim(m)
    if method == "ball":
        xi = r * unit_ball_points(k, samples, rng)
        Z = exp_skew(xi, m)
        hit = lz.rotation_distance_batch(np.einsum("ji,njk->nik", X, Z)) < r
        w = exp_jacobian(xi, m) * hit
        scale = unit_ball_volume(k) * r ** k
    elif method == "haar":
        Z = lz.haar_so(m, rng, samples)
        d0 = lz.rotation_distance_batch(Z)
        d1 = lz.rotation_distance_batch(np.einsum("ji,njk->nik", X, Z))
        w = ((d0 < r) & (d1 < r)).astype(float)
        scale = so_volume(m)
    else:
        raise ValueError("method must be 'ball' or 'haar'")
    return float(scale * w.mean()), float(scale * w.std(ddof=1) / math.sqrt(samples))


def ball_lower_bound(m: int, r: float) -> float:
    """Lower bound on ``V(X, r)`` valid whenever ``|X| < 5r/3``.

    The ball of radius ``r/6`` about the midpoint of ``e`` and ``X`` sits in
    both balls, and the Haar Jacobian is at least ``sinc(r/6)`` per pair.
    """
    k = so_dim(m)
    rho = r / 6.0
    return unit_ball_volume(k) * rho ** k * float(_sinc(rho)) ** k


def ball_upper_bound(m: int, r: float) -> float:
    """Volume of the Euclidean ``r``-ball in exponential coordinates; the Jacobian is at most 1."""
    k = so_dim(m)
    return unit_ball_volume(k) * r ** k


def near_tangent_bound(m: int, dist: float, r: float) -> float:
    """``2^k V_{k-1} kappa^{(k+1)/2} r^{(k-1)/2}`` with ``kappa = 2r - |X|``."""
    k = so_dim(m)
    kappa = 2 * r - dist
    if kappa <= 0:
        return 0.0
    return 2.0 ** k * unit_ball_volume(k - 1) * kappa ** ((k + 1) / 2) * r ** ((k - 1) / 2)


def circle_overlap(dist: float, r: float) -> float:
    """Exact ``V`` in SO(2)."""
    return max(0.0, 2 * r - abs(dist))


# ---------------------------------------------------------------------------
# midpoints on the normal bundle

def _lift_near(gamma: ModelClosedGeodesic, p: NormalFiberPoint, s_ref: float) -> tuple[float, np.ndarray]:
    """Cover coordinates of ``p`` with arc position in ``(s_ref - L/2, s_ref + L/2]``."""
    L = gamma.length
    k = math.floor((s_ref + 0.5 * L - p.s) / L)
    if p.s + k * L <= s_ref - 0.5 * L:
        k += 1
    w = gamma.holonomy_power(-k) @ p.w if k else np.asarray(p.w, dtype=float)
    return p.s + k * L, w


def midpoint_extend(gamma: ModelClosedGeodesic, x: NormalFiberPoint, y: NormalFiberPoint) -> NormalFiberPoint:
    """The point ``m_x(y)`` having ``x`` as midpoint of ``y`` and itself."""
    x = normalize_point(gamma, x)
    sy, wy = _lift_near(gamma, y, x.s)
    d = x.s - sy
    if abs(d) >= 0.5 * gamma.length * (1 - 1e-12):
        raise AntipodalOrFar("basepoints are half the geodesic apart")
    wy = wy / np.linalg.norm(wy)
    if lz.sphere_distance(x.w, wy) >= 0.5 * math.pi:
        raise AntipodalOrFar("transported vectors are too far apart on the sphere")
    w = 2.0 * float(x.w @ wy) * x.w - wy
    return normalize_point(gamma, NormalFiberPoint(x.s + d, w / np.linalg.norm(w)))


def reflect_batch(v: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sphere extension ``2 (v.y) v - y`` for rows ``y``."""
    return 2.0 * (y @ v)[:, None] * v[None, :] - y


# ---------------------------------------------------------------------------
# monodromies of long feet

@dataclass
class MonodromyPair:
    X1: np.ndarray
    X2: np.ndarray
    W: np.ndarray
    f: float


def monodromy_pair(gamma: ModelClosedGeodesic, v: NormalFiberPoint, a, b,
                   E: Optional[np.ndarray] = None, F: Optional[np.ndarray] = None) -> MonodromyPair:
    """``X1, X2``, ``W_v(a, b) = X1^{-1} X2`` and ``f_v(a, b) = d(X1, X2)``.

    ``a`` and ``b`` are unit vectors in the fibre at ``v`` (or points that
    are lifted next to ``v`` and read in its fibre).
    """
    def vec(p):
        if isinstance(p, NormalFiberPoint):
            _, w = _lift_near(gamma, p, normalize_point(gamma, v).s)
            return w / np.linalg.norm(w)
        p = np.asarray(p, dtype=float)
        return p / np.linalg.norm(p)

    X1, X2 = long_feet_monodromies(vec(a), vec(b), gamma.holonomy, E, F)
    W = X1.T @ X2
    return MonodromyPair(X1, X2, W, lz.rotation_distance(W))


def reflection(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.eye(a.shape[-1]) - 2.0 * a[..., :, None] * a[..., None, :]


def reflected_monodromy(holonomy: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``R_a holonomy R_b``, which is conjugate in O(m) to ``W_v(a, b)``.

    Ball-intersection volumes only see the conjugacy class, so this cheaper
    form is used for fibre integrals.  ``a`` and ``b`` may be stacks.
    """
    return reflection(a) @ holonomy @ reflection(b)


# ---------------------------------------------------------------------------
# invariant space

@dataclass
class InvariantPoint:
    """A point of the framed invariant space; its class ignores the gauge of ``E`` and ``F``.

    ``E`` completes ``u.w`` to a positively oriented frame and ``F``
    completes ``v.w`` to a negatively oriented one (Householder completions
    when omitted).  ``Lam`` is the connection monodromy in those frames.
    """

    u: NormalFiberPoint
    v: NormalFiberPoint
    l: float
    Lam: np.ndarray
    E: Optional[np.ndarray] = None
    F: Optional[np.ndarray] = None

    def __post_init__(self):
        self.Lam = np.asarray(self.Lam, dtype=float)
        if self.E is None:
            self.E = frame_with_first(self.u.w, 1)[:, 1:]
        if self.F is None:
            self.F = frame_with_first(self.v.w, -1)[:, 1:]

    def gauge(self, A: np.ndarray, B: np.ndarray) -> "InvariantPoint":
        """Act by ``(A, B)`` in SO(n-2) x SO(n-2): frames rotate and ``Lam -> A^{-1} Lam B``."""
        Ae, Be = _embed(A), _embed(B)
        return InvariantPoint(self.u, self.v, self.l, Ae.T @ self.Lam @ Be, self.E @ A, self.F @ B)

    def canonical(self, gamma: ModelClosedGeodesic) -> tuple:
        """Gauge-fixed data: normalised feet, length and monodromy in the analysis frames."""
        u, v, Ae, Be = _analysis_gauge(gamma, self)
        return u, v, self.l, Ae @ self.Lam @ Be.T

    def analysis(self, gamma: ModelClosedGeodesic):
        u, v, l, Yh = self.canonical(gamma)
        return third_connection_analysis(gamma, (u, v), l, Yh)

    def words(self, gamma: ModelClosedGeodesic):
        u, v, l, Yh = self.canonical(gamma)
        return third_connection_words(gamma, (u, v), l, Yh)

    def to_json(self) -> dict:
        return {"u": self.u.to_json(), "v": self.v.to_json(), "l": self.l, "Lam": self.Lam.tolist(),
                "E": self.E.tolist(), "F": self.F.tolist()}


def _embed(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    k = A.shape[0] + 1
    M = np.eye(k)
    M[1:, 1:] = A
    return M


def _normalized_with_frame(gamma, p: NormalFiberPoint, E: np.ndarray):
    k = math.floor(p.s / gamma.length)
    q = normalize_point(gamma, p)
    if q.s != p.s - k * gamma.length:  # round-off pushed it over the seam
        k += 1
    E = gamma.holonomy_power(k) @ E if k else E
    return q, E


def _analysis_gauge(gamma, p: InvariantPoint):
    """Normalised feet and the embedded gauge elements taking stored frames to analysis frames."""
    u, Eu = _normalized_with_frame(gamma, p.u, p.E)
    v, Fv = _normalized_with_frame(gamma, p.v, p.F)
    if v.s > u.s:
        b, Fc = v.w, Fv
    else:
        # B sits one period further along the cover
        b, Fc = gamma.holonomy_power(-1) @ v.w, gamma.holonomy_power(-1) @ Fv
    A = frame_with_first(u.w, 1)[:, 1:].T @ Eu
    B = frame_with_first(b, -1)[:, 1:].T @ Fc
    return u, v, _embed(A), _embed(B)


def same_class(gamma: ModelClosedGeodesic, p: InvariantPoint, q: InvariantPoint, tol: float = 1e-8) -> bool:
    """Gauge-orbit equality up to ``tol``."""
    a, b = p.canonical(gamma), q.canonical(gamma)
    L = gamma.length

    def close_pt(x, y):
        ds = abs(x.s - y.s)
        return min(ds, L - ds) < tol and np.max(np.abs(x.w - y.w)) < tol

    return (close_pt(a[0], b[0]) and close_pt(a[1], b[1]) and abs(a[2] - b[2]) < tol
            and np.max(np.abs(a[3] - b[3])) < tol)


# ---------------------------------------------------------------------------
# good regions

@dataclass
class MembershipReport:
    lengths: list
    monodromy_gaps: tuple  # d(phi(Y), X1), d(phi(Y), X2)
    actual_monodromy: list  # class distance to e of the two new cuffs
    predicted_monodromy: list


@dataclass
class GoodRegionSpec:
    """Good-region predicates for a model closed geodesic.

    ``in_R_delta`` checks that both new cuffs have length within ``2 eps`` of
    ``2R`` and that ``phi(Y)`` is within ``delta`` of both ``X1`` and ``X2``;
    ``in_R`` replaces the second condition by the actual cuff monodromies.
    """

    R: float
    eps: float
    delta: float
    gamma: ModelClosedGeodesic

    def __post_init__(self):
        if self.eps <= 0 or self.delta <= 0 or self.R <= 0:
            raise PreconditionError("R, eps and delta must be positive")

    @property
    def n(self) -> int:
        return self.gamma.fiber_dim + 1

    def with_delta(self, delta: float) -> "GoodRegionSpec":
        return GoodRegionSpec(self.R, self.eps, delta, self.gamma)

    def report(self, p: InvariantPoint) -> MembershipReport:
        u, v, l, Yh = p.canonical(self.gamma)
        tc = third_connection_analysis(self.gamma, (u, v), l, Yh)
        D, h, hD = third_connection_words(self.gamma, (u, v), l, Yh)
        lengths, actual = [], []
        for g in (h, hD):
            inv = axis_invariants(g)
            lengths.append(inv.t)
            actual.append(float(np.linalg.norm(monodromy_angles(inv.m_class))))
        pY = phi(Yh)
        gaps = (lz.rotation_distance(pY, tc.X1), lz.rotation_distance(pY, tc.X2))
        pred = [lz.rotation_distance(m) for m in tc.predicted[1:]]
        return MembershipReport(lengths, gaps, actual, pred)

    def _lengths_ok(self, rep: MembershipReport) -> bool:
        return all(abs(t - 2 * self.R) < 2 * self.eps for t in rep.lengths)

    def in_R_delta(self, p: InvariantPoint, delta: Optional[float] = None) -> bool:
        delta = self.delta if delta is None else delta
        try:
            rep = self.report(p)
        except (InconsistentGeometry, NotLoxodromic):
            return False
        return self._lengths_ok(rep) and max(rep.monodromy_gaps) < delta

    def in_R(self, p: InvariantPoint) -> bool:
        try:
            rep = self.report(p)
        except (InconsistentGeometry, NotLoxodromic):
            return False
        return self._lengths_ok(rep) and max(rep.actual_monodromy) < self.eps

    def rho(self, c: NormalFiberPoint, b: NormalFiberPoint, l: float, Yh: np.ndarray) -> InvariantPoint:
        """Invariant point with average foot ``c`` and long foot ``b`` at B.

        ``Yh`` is the connection monodromy in the analysis frames.
        """
        x = self.pullback_ok(c, b)
        if x is None:
            raise AntipodalOrFar("pair is outside the pullback component")
        u = midpoint_extend(self.gamma, c, b)
        bn = normalize_point(self.gamma, b)
        v = NormalFiberPoint(bn.s, -bn.w)
        p = InvariantPoint(u, v, l, np.eye(self.gamma.fiber_dim))
        _, _, Ae, Be = _analysis_gauge(self.gamma, p)
        p.Lam = Ae.T @ np.asarray(Yh, dtype=float) @ Be
        return p

    def pullback_ok(self, c: NormalFiberPoint, b: NormalFiberPoint) -> Optional[float]:
        """Oriented distance from ``c`` to ``b`` when the pair lies in the chosen component."""
        c = normalize_point(self.gamma, c)
        sb, wb = _lift_near(self.gamma, b, c.s)
        x = sb - c.s
        L = self.gamma.length
        if not (L / 4 - 1 < x < L / 4 + 1):
            return None
        if lz.sphere_distance(c.w, wb / np.linalg.norm(wb)) > math.pi / 8:
            return None
        return x

    def in_S_delta(self, c, b, l, Yh, delta: Optional[float] = None) -> bool:
        if self.pullback_ok(c, b) is None:
            return False
        return self.in_R_delta(self.rho(c, b, l, Yh), delta)

    def in_S(self, c, b, l, Yh) -> bool:
        if self.pullback_ok(c, b) is None:
            return False
        return self.in_R(self.rho(c, b, l, Yh))

    def cap_radius(self, delta: Optional[float] = None) -> float:
        """Angular radius about ``v`` outside which the fibre integrand vanishes.

        ``W`` is conjugate to ``R_y Lam R_m`` whose distance to ``e`` is at
        least ``4 theta - |Lam|``; the balls are disjoint once that exceeds ``2 delta``.
        """
        delta = self.delta if delta is None else delta
        return min(math.pi / 8, (2 * delta + lz.rotation_distance(self.gamma.holonomy)) / 4 * 1.02)


# ---------------------------------------------------------------------------
# fibre densities

@dataclass
class _BaseDraws:
    q: np.ndarray  # cap quantiles
    u: np.ndarray  # directions in the tangent sphere
    xi: np.ndarray  # unit-ball points in the algebra


def _base_draws(m: int, samples: int, seed: int, mesh: Optional[int] = None) -> _BaseDraws:
    rng = np.random.default_rng(seed)
    U = rng.random(samples)
    if mesh:
        U = (np.arange(samples) % mesh + U) / mesh
    d = m - 1
    if d == 1:
        u = np.where(rng.random(samples) < 0.5, -1.0, 1.0)[:, None]
    else:
        u = rng.standard_normal((samples, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
    return _BaseDraws(U, u, unit_ball_points(so_dim(m), samples, rng))


def cap_area(d: int, theta: float) -> float:
    """Area of a geodesic cap of radius ``theta`` on ``S^d``."""
    if d == 1:
        return 2.0 * theta
    return sphere_volume(d - 1) * integrate.quad(lambda t: math.sin(t) ** (d - 1), 0, theta)[0]


def _cap_angles(d: int, theta: float, q: np.ndarray) -> np.ndarray:
    if d == 1:
        return theta * q
    if d == 2:
        return np.arccos(1.0 - q * (1.0 - math.cos(theta)))
    t = np.linspace(0.0, theta, 4097)
    cdf = integrate.cumulative_simpson(np.sin(t) ** (d - 1), x=t, initial=0.0)
    return np.interp(q, cdf / cdf[-1], t)


def _cap_points(v: np.ndarray, theta: float, draws: _BaseDraws) -> np.ndarray:
    d = v.shape[0] - 1
    t = _cap_angles(d, theta, draws.q)
    K = frame_with_first(v, 1)
    dirs = draws.u @ K[:, 1:].T
    return np.cos(t)[:, None] * v[None, :] + np.sin(t)[:, None] * dirs


def fiber_volume(spec: GoodRegionSpec, w: np.ndarray, samples: int = 20_000, seed: int = 0,
                 mesh: Optional[int] = None, draws: Optional[_BaseDraws] = None) -> tuple[float, float]:
    """Monte Carlo ``Vol(S^v_delta) = int_{S^{n-2}} V(W_v(y, m_v(y)), delta) dsigma(y)``.

    ``y`` runs uniformly over the cap where the integrand can be nonzero and
    the inner ball volume uses the same weighted exponential-coordinate
    estimator as ``ball_intersection_volume``, one group sample per sphere sample.
    """
    m = spec.gamma.fiber_dim
    if m < 2:
        raise PreconditionError("fibre integrals need n >= 3")
    delta = spec.delta
    if draws is None:
        draws = _base_draws(m, samples, seed, mesh)
    w = np.asarray(w, dtype=float)
    w = w / np.linalg.norm(w)
    theta = spec.cap_radius()
    y = _cap_points(w, theta, draws)
    mm = reflect_batch(w, y)
    W = reflected_monodromy(spec.gamma.holonomy, y, mm)
    xi = delta * draws.xi
    Z = exp_skew(xi, m)
    hit = lz.rotation_distance_batch(np.einsum("nji,njk->nik", W, Z)) < delta
    k = so_dim(m)
    vals = exp_jacobian(xi, m) * hit * (cap_area(m - 1, theta) * unit_ball_volume(k) * delta ** k)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))


def fiber_density(spec: GoodRegionSpec, v: NormalFiberPoint, mesh: Optional[int] = None, samples: int = 20_000,
                  seed: int = 0, draws: Optional[_BaseDraws] = None) -> tuple[float, float]:
    """Density of the estimated average foot measure at ``v`` against Lebesgue measure.

    The product of the fibre volume and the weighted area of the hat diamond
    at ``delta``; the region containments only move this by ``O(e^{-R})``.
    Raises when ``delta`` is outside ``(8 eps / 9, 7 eps / 6)``.
    """
    if not 8 * spec.eps / 9 < spec.delta < 7 * spec.eps / 6:
        raise PreconditionError("delta outside the bound regime (8 eps/9, 7 eps/6)")
    vol, se = fiber_volume(spec, normalize_point(spec.gamma, v).w, samples, seed, mesh, draws)
    area = hat_diamond_area(spec.R, spec.delta, spec.gamma.length)
    return vol * area, se * area


# ---------------------------------------------------------------------------
# grids on the fibre sphere

@dataclass
class SphereMesh:
    centers: np.ndarray  # unit vectors
    areas: np.ndarray
    kind: str

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    def locate(self, w: np.ndarray) -> np.ndarray:
        """Index of the nearest cell centre for each row of ``w``."""
        w = np.atleast_2d(w)
        return np.argmax(w @ self.centers.T, axis=1)


def sphere_mesh(m: int, cells: tuple, seed: int = 0) -> SphereMesh:
    """Cells on the unit sphere of R^m.

    ``m = 2``: ``cells[0]`` equal arcs.  ``m = 3``: ``cells = (bands, sectors)``
    with equal-area latitude bands.  Larger ``m``: equal-weight Voronoi
    cells of a fixed quasi-random point set of size ``prod(cells)``.
    """
    if m == 2:
        k = int(np.prod(cells))
        th = (np.arange(k) + 0.5) * 2 * math.pi / k
        return SphereMesh(np.stack([np.cos(th), np.sin(th)], 1), np.full(k, 2 * math.pi / k), "arcs")
    if m == 3:
        nb, ns = cells
        z = 1.0 - (np.arange(nb) + 0.5) * 2.0 / nb
        ph = (np.arange(ns) + 0.5) * 2 * math.pi / ns
        Zz, Pp = np.meshgrid(z, ph, indexing="ij")
        r = np.sqrt(1 - Zz ** 2)
        c = np.stack([r * np.cos(Pp), r * np.sin(Pp), Zz], -1).reshape(-1, 3)
        return SphereMesh(c, np.full(nb * ns, 4 * math.pi / (nb * ns)), "latlong")
    k = int(np.prod(cells))
    rng = np.random.default_rng(seed)
    c = lz.random_unit(m, rng, k)
    return SphereMesh(c, np.full(k, sphere_volume(m - 1) / k), "points")


@dataclass
class DensityEstimate:
    s_bins: np.ndarray
    mesh: SphereMesh
    values: np.ndarray  # (s_bins, cells)
    stderr: np.ndarray
    length: float
    tau_residual: float  # max |f(tau v) - f(v)| / combined stderr
    centralizer_residual: float
    meta: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return float(self.values.max() / self.values.min())

    def total_mass(self) -> tuple[float, float]:
        ds = self.length / len(self.s_bins)
        mass = float(np.sum(self.values * self.mesh.areas[None, :]) * ds)
        # common random numbers correlate cells, so errors add linearly
        se = float(np.sum(self.stderr * self.mesh.areas[None, :]) * ds)
        return mass, se

    def lookup(self, s, w) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float)) % self.length
        i = np.minimum((s / self.length * len(self.s_bins)).astype(int), len(self.s_bins) - 1)
        return self.values[i, self.mesh.locate(np.atleast_2d(w))]

    def to_rows(self) -> list:
        rows = []
        for i, s in enumerate(self.s_bins):
            for j, c in enumerate(self.mesh.centers):
                rows.append([float(s), *map(float, c), float(self.values[i, j]), float(self.stderr[i, j])])
        return rows


def _commuting_rotation(holonomy: np.ndarray, angle: float) -> np.ndarray:
    """A rotation commuting with ``holonomy``: a power-like flow inside its maximal torus."""
    L = lz.principal_log(holonomy) if lz.rotation_distance(holonomy) > 1e-12 else None
    m = holonomy.shape[0]
    if L is None:
        S = np.zeros((m, m))
        S[0, 1], S[1, 0] = -angle, angle
        return scipy.linalg.expm(S)
    return scipy.linalg.expm(L * (angle / lz.algebra_norm(L)))


def estimated_measure(spec: GoodRegionSpec, grid: tuple = (4, 8), samples: int = 20_000, seed: int = 0,
                      s_bins: int = 1) -> DensityEstimate:
    """Fibre densities over an ``s``-bins x sphere-mesh grid, with invariance residuals.

    All cells share one set of random draws.  The ``tau`` residual compares
    each cell with its image under ``tau``; the centralizer residual rotates
    the cell centres by an element commuting with the holonomy.
    """
    gamma = spec.gamma
    m = gamma.fiber_dim
    mesh = sphere_mesh(m, grid, seed)
    draws = _base_draws(m, samples, seed)
    L = gamma.length
    sb = (np.arange(s_bins) + 0.5) * L / s_bins
    vals = np.zeros((s_bins, mesh.size))
    errs = np.zeros_like(vals)
    tau_res, cen_res = 0.0, 0.0
    g = _commuting_rotation(gamma.holonomy, 0.7)
    for i, s in enumerate(sb):
        for j, c in enumerate(mesh.centers):
            f, e = fiber_density(spec, NormalFiberPoint(s, c), samples=samples, draws=draws)
            vals[i, j], errs[i, j] = f, e
            tv = normalize_point(gamma, NormalFiberPoint(s + 1.0, -c))
            ft, et = fiber_density(spec, tv, samples=samples, draws=draws)
            tau_res = max(tau_res, abs(ft - f) / math.hypot(e, et))
            fc, ec = fiber_density(spec, NormalFiberPoint(s, g @ c), samples=samples, draws=draws)
            cen_res = max(cen_res, abs(fc - f) / math.hypot(e, ec))
    meta = {"grid": list(grid), "samples": samples, "seed": seed, "R": spec.R, "eps": spec.eps,
            "delta": spec.delta, "L": L}
    return DensityEstimate(sb, mesh, vals, errs, L, tau_res, cen_res, meta)


def refinement_study(spec: GoodRegionSpec, coarse: tuple = (4, 8), fine: tuple = (8, 16), samples: int = 20_000,
                     seed: int = 0) -> dict:
    """Max/min density ratio on a grid and its refinement."""
    a = estimated_measure(spec, coarse, samples, seed)
    b = estimated_measure(spec, fine, samples, seed)
    return {"coarse": a.ratio, "fine": b.ratio, "relative_change": abs(b.ratio - a.ratio) / a.ratio,
            "coarse_estimate": a, "fine_estimate": b}


def density_exponent(n: int) -> float:
    return (n * n - n + 2) / 2


def fiber_exponent(n: int) -> float:
    return (n - 2) * (n + 1) / 2


def epsilon_sweep(R: float, n: int, eps_values: Sequence[float], holonomy_fn: Callable[[float], np.ndarray],
                  directions: Optional[np.ndarray] = None, samples: int = 40_000, seed: int = 0) -> dict:
    """Fit the exponent of the fibre volume and the full density in ``eps``.

    ``delta = eps`` and the holonomy is ``holonomy_fn(eps)``; averaging over
    fixed fibre directions with shared draws keeps the fit smooth.
    """
    m = n - 1
    if directions is None:
        directions = lz.random_unit(m, np.random.default_rng(seed + 1), 4)
    draws = _base_draws(m, samples, seed)
    fv, dens = [], []
    for eps in eps_values:
        gamma = ModelClosedGeodesic(2 * R, holonomy_fn(eps))
        spec = GoodRegionSpec(R, eps, eps, gamma)
        vols = [fiber_volume(spec, d, draws=draws)[0] for d in directions]
        fv.append(float(np.mean(vols)))
        dens.append(fv[-1] * hat_diamond_area(R, eps, gamma.length))
    le = np.log(np.asarray(eps_values))
    s_fv = float(np.polyfit(le, np.log(fv), 1)[0])
    s_d = float(np.polyfit(le, np.log(dens), 1)[0])
    b0 = [d / (math.exp(2 * R) * e ** density_exponent(n)) for d, e in zip(dens, eps_values)]
    return {"eps": list(map(float, eps_values)), "fiber_volume": fv, "density": dens,
            "fiber_slope": s_fv, "density_slope": s_d, "normalized_density": b0}


# ---------------------------------------------------------------------------
# sampling the good region

@dataclass
class RegionSample:
    c: NormalFiberPoint
    b: NormalFiberPoint
    l: float
    Yh: np.ndarray
    point: InvariantPoint


@dataclass
class GoodRegionSampleSet:
    samples: list
    proposals: int
    acceptance_rate: float
    seed: int

    def lengths(self) -> np.ndarray:
        return np.array([s.l for s in self.samples])


def sample_good_region(spec: GoodRegionSpec, N: int, seed: int = 0, batch: int = 4096,
                       max_proposals: int = 5_000_000, margin: float = 0.05) -> GoodRegionSampleSet:
    """Rejection sampler for the product reference measure restricted to ``S_delta``.

    Proposals: ``c`` uniform on the bundle, ``b`` uniform in the cap and arc
    window that contains the region, ``(x, l)`` uniform in a box around the
    hat diamond with ``e^{2l}`` handled by thinning, and ``phi(Y)`` Haar in
    ``B_delta(X1)`` (uniform exponential coordinates thinned by the Jacobian).
    Every accepted point passes the exact membership test.
    """
    gamma = spec.gamma
    m = gamma.fiber_dim
    k = so_dim(m)
    L = gamma.length
    rng = np.random.default_rng(seed)
    theta = spec.cap_radius()
    width = 2 * max(spec.delta, spec.eps) + margin
    (x_lo, x_hi), (l_lo, l_hi) = diamond_box(spec.R, width / 2, L, hat=True)
    out: list = []
    proposals = 0
    while len(out) < N:
        if proposals >= max_proposals:
            break
        nb = batch
        proposals += nb
        sc = rng.uniform(0, L, nb)
        wc = lz.random_unit(m, rng, nb)
        x = rng.uniform(x_lo, x_hi, nb)
        l = rng.uniform(l_lo, l_hi, nb)
        keep = rng.random(nb) < np.exp(2 * (l - l_hi))
        xi = spec.delta * unit_ball_points(k, nb, rng)
        keep &= rng.random(nb) < exp_jacobian(xi, m)
        cap = _base_draws(m, nb, int(rng.integers(2**31)))
        yb = np.stack([_cap_points(wc[i], theta, _BaseDraws(cap.q[i:i + 1], cap.u[i:i + 1], cap.xi[i:i + 1]))[0]
                       for i in range(nb)])
        # necessary conditions first: predicted lengths near the window and d(X1, X2) < 2 delta
        keep &= in_diamond(x, l, spec.R, spec.eps + 0.01, L, hat=True)
        ya = 2.0 * np.sum(wc * yb, axis=1)[:, None] * wc - yb
        f = lz.rotation_distance_batch(reflected_monodromy(gamma.holonomy, ya, yb))
        keep &= f < 2 * spec.delta
        for i in np.flatnonzero(keep):
            c = NormalFiberPoint(float(sc[i]), wc[i])
            b = normalize_point(gamma, NormalFiberPoint(float(sc[i] + x[i]), yb[i]))
            try:
                tc = spec.rho(c, b, float(l[i]), np.eye(m)).analysis(gamma)
            except (AntipodalOrFar, InconsistentGeometry):
                continue
            # phi(Y) = X1 exp(xi) is Haar-uniform in the delta-ball about X1
            pY = tc.X1 @ exp_skew(xi[i:i + 1], m)[0]
            if lz.rotation_distance(pY, tc.X2) >= spec.delta:
                continue
            Yh = phi(pY)
            p = spec.rho(c, b, float(l[i]), Yh)
            if spec.in_R_delta(p):
                out.append(RegionSample(normalize_point(gamma, c), b, float(l[i]), Yh, p))
                if len(out) == N:
                    break
    rate = len(out) / proposals if proposals else 0.0
    if rate < 1e-6:
        raise AcceptanceTooLow(f"acceptance rate {rate:.2e} below 1e-6")
    return GoodRegionSampleSet(out, proposals, rate, seed)


def feet_gap(gamma: ModelClosedGeodesic, s: RegionSample) -> float:
    """Angle between the two long feet pointing into the connection, compared along the shorter arc."""
    u = s.point.u
    _, wb = _lift_near(gamma, s.b, u.s)
    return lz.sphere_distance(u.w, wb / np.linalg.norm(wb))


# ---------------------------------------------------------------------------
# containments and neighbourhood growth

def measure_C0(spec: GoodRegionSpec, samples: Sequence[RegionSample]) -> float:
    """Largest ``|actual - predicted|`` cuff-monodromy gap over samples, in units of ``e^{-R}``."""
    worst = 0.0
    for s in samples:
        rep = spec.report(s.point)
        for a, p in zip(rep.actual_monodromy, rep.predicted_monodromy):
            worst = max(worst, abs(a - p))
    return worst * math.exp(spec.R)


def containment_check(spec: GoodRegionSpec, samples: Sequence[RegionSample], C0: float) -> dict:
    """Count points violating ``R_{eps - C0 e^{-R}} <= R <= R_{eps + C0 e^{-R}}``.

    ``samples`` should straddle the boundary, e.g. drawn with ``delta`` a
    little above ``eps``.
    """
    lo = spec.eps - C0 * math.exp(-spec.R)
    hi = spec.eps + C0 * math.exp(-spec.R)
    inner = outer = 0
    counts = {"in_lo": 0, "in_R": 0, "in_hi": 0}
    for s in samples:
        rep = spec.report(s.point)
        ok_len = spec._lengths_ok(rep)
        a = ok_len and max(rep.monodromy_gaps) < lo
        b = ok_len and max(rep.actual_monodromy) < spec.eps
        c = ok_len and max(rep.monodromy_gaps) < hi
        counts["in_lo"] += a
        counts["in_R"] += b
        counts["in_hi"] += c
        inner += a and not b
        outer += b and not c
    return {"C0": C0, "violations_lower": inner, "violations_upper": outer, "n": len(samples), **counts}


def _perturb(spec: GoodRegionSpec, s: RegionSample, zeta: float, rng) -> InvariantPoint:
    """Move the long-foot direction and the monodromy by at most ``zeta`` in total.

    The frames ride along by minimal rotations, so the move is small in the
    invariant space and not just in one gauge.
    """
    gamma = spec.gamma
    m = gamma.fiber_dim
    t = rng.random()
    a1, a2 = zeta * t, zeta * (1 - t)
    d = lz.random_unit(m, rng)
    d -= (d @ s.b.w) * s.b.w
    d /= np.linalg.norm(d)
    b2 = NormalFiberPoint(s.b.s, math.cos(a1) * s.b.w + math.sin(a1) * d)
    p = s.point
    u2 = midpoint_extend(gamma, s.c, b2)
    _, uw = _lift_near(gamma, u2, p.u.s)
    v2w = -b2.w
    xi = lz.random_unit(so_dim(m), rng) * a2
    E2 = rotation_taking(p.u.w, uw) @ p.E
    F2 = rotation_taking(p.v.w, v2w) @ p.F
    Lam2 = p.Lam @ exp_skew(xi[None], m)[0]
    return InvariantPoint(NormalFiberPoint(p.u.s, uw), NormalFiberPoint(p.v.s, v2w), p.l, Lam2, E2, F2)


def growth_check(spec: GoodRegionSpec, samples: Sequence[RegionSample], zeta: float, C1: Optional[float] = None,
                 trials: int = 4, seed: int = 0) -> dict:
    """Fibrewise ``N_zeta(S) <= S_{eps + C1 zeta}`` on perturbed samples.

    Perturbations keep the average foot and the lengths and move the long
    foot direction and the monodromy.  With ``C1=None`` the smallest
    constant that works is reported instead of checked.
    """
    rng = np.random.default_rng(seed)
    needed = 0.0
    violations = 0
    checked = 0
    for s in samples:
        if not spec.in_S(s.c, s.b, s.l, s.Yh):
            continue
        for _ in range(trials):
            try:
                rep = spec.report(_perturb(spec, s, zeta, rng))
            except (AntipodalOrFar, InconsistentGeometry):
                continue
            checked += 1
            needed = max(needed, (max(rep.monodromy_gaps) - spec.eps) / zeta)
            if C1 is not None and not (spec._lengths_ok(rep) and max(rep.monodromy_gaps) < spec.eps + C1 * zeta):
                violations += 1
    return {"zeta": zeta, "C1": C1, "C1_needed": needed, "checked": checked, "violations": violations}


# ---------------------------------------------------------------------------
# counting inequalities

@dataclass
class BoxSet:
    """``{s in [s0, s1), angle(w, center) in [r0, r1)}``: caps when ``r0 = 0``, bands otherwise."""

    s0: float
    s1: float
    center: np.ndarray
    r0: float
    r1: float

    def grown(self, z: float) -> "BoxSet":
        return BoxSet(self.s0 - z, self.s1 + z, self.center, max(0.0, self.r0 - z) if self.r0 > 0 else 0.0,
                      min(math.pi, self.r1 + z))

    def shrunk(self, z: float) -> "BoxSet":
        r0 = self.r0 + z if self.r0 > 0 else 0.0
        return BoxSet(self.s0 + z, self.s1 - z, self.center, r0, self.r1 - z)

    def contains(self, s, w, L: float) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.s1 - self.s0 >= L:
            ins = np.ones(s.shape, bool)
        else:
            ins = ((s - self.s0) % L) < (self.s1 - self.s0)
        ang = np.arccos(np.clip(np.atleast_2d(w) @ self.center, -1, 1))
        return ins & (ang >= self.r0) & (ang < self.r1)


def measure_of_set(density: DensityEstimate, B: BoxSet, m: int, samples: int = 200_000, seed: int = 0) -> float:
    """``int_B f d lambda`` by uniform sampling of the bundle."""
    if B.s1 <= B.s0 or B.r1 <= B.r0:
        return 0.0
    rng = np.random.default_rng(seed)
    s = rng.uniform(0, density.length, samples)
    w = lz.random_unit(m, rng, samples)
    f = density.lookup(s, w) * B.contains(s, w, density.length)
    return float(f.mean() * density.length * sphere_volume(m - 1))


def counting_check(density: DensityEstimate, points: Sequence[NormalFiberPoint], sets: Sequence[BoxSet],
                   zeta: float, lip: float, eps: float, scale: float = 1.0, seed: int = 0) -> dict:
    """Best constant ``C`` with ``(1 - lip zeta/eps) mu(N_-zeta B) <= C nu(B) scale <= (1 + lip zeta/eps) mu(N_zeta B)``.

    ``nu`` is the point measure of ``points``.  Neighbourhoods are the box
    neighbourhoods of each set, which contain the metric ones.
    """
    m = density.mesh.centers.shape[1]
    s = np.array([p.s for p in points])
    w = np.array([p.w for p in points])
    lows, highs, rows = [], [], []
    for i, B in enumerate(sets):
        nu = float(np.sum(B.contains(s, w, density.length)))
        lo = (1 - lip * zeta / eps) * measure_of_set(density, B.shrunk(zeta), m, seed=seed + i)
        hi = (1 + lip * zeta / eps) * measure_of_set(density, B.grown(zeta), m, seed=seed + i)
        rows.append({"nu": nu, "lower": lo, "upper": hi})
        if nu == 0:
            if lo > 0:
                lows.append(math.inf)
            continue
        lows.append(lo / (nu * scale))
        highs.append(hi / (nu * scale))
    c_lo = max(lows) if lows else 0.0
    c_hi = min(highs) if highs else math.inf
    best = math.sqrt(c_lo * c_hi) if 0 < c_lo <= c_hi < math.inf else None
    return {"C_interval": [c_lo, c_hi], "consistent": c_lo <= c_hi, "C": best, "sets": rows}
