"""Geodesics, orthogeodesics, normal bundles of closed geodesics, Fermat points."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import lorentz as lz
from .errors import (
    AngleTooSharp,
    Asymptotic,
    Degenerate,
    Identical,
    Intersecting,
    NotOrthogonal,
    PreconditionError,
)
from .words import translation_length

# The arc that runs forward (along the orientation) from the first foot to the second.
ARC_ALPHA1 = 1
ARC_ALPHA2 = 2


# ---------------------------------------------------------------------------
# points and geodesics

def hdistance(p: np.ndarray, q: np.ndarray) -> float:
    """Hyperbolic distance; uses ``2 asinh(|p - q|_J / 2)`` for accuracy at short range."""
    d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    s = lz.mdot(d, d)
    return 2.0 * math.asinh(0.5 * math.sqrt(max(s, 0.0)))


def project_to_sheet(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x / math.sqrt(-lz.mdot(x, x))


def unit_tangent_toward(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Unit tangent vector at ``p`` of the geodesic from ``p`` to ``q``."""
    c = -lz.mdot(p, q)
    w = q - c * p
    nw = math.sqrt(max(lz.mdot(w, w), 0.0))
    if nw == 0.0:
        raise Degenerate("points coincide")
    return w / nw


def tangent_angle(v: np.ndarray, w: np.ndarray) -> float:
    """Angle between two unit tangent vectors at the same point of the hyperboloid."""
    a = math.sqrt(max(lz.mdot(v - w, v - w), 0.0))
    if a <= math.sqrt(2.0):
        return 2.0 * math.asin(min(1.0, 0.5 * a))
    b = math.sqrt(max(lz.mdot(v + w, v + w), 0.0))
    return math.pi - 2.0 * math.asin(min(1.0, 0.5 * b))


def exp_point(p: np.ndarray, xi: np.ndarray) -> np.ndarray:
    r = math.sqrt(max(lz.mdot(xi, xi), 0.0))
    if r == 0.0:
        return np.array(p, dtype=float)
    return math.cosh(r) * p + (math.sinh(r) / r) * xi


def transport_along_segment(p: np.ndarray, q: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Parallel transport of a tangent vector from ``p`` to ``q`` along the segment."""
    c = -float(lz.minkowski(p, q))
    return w + float(lz.minkowski(w, q)) / (1.0 + c) * (p + q) if c > -1 else w


@dataclass
class Geodesic:
    """Unit speed geodesic ``s -> cosh(s) base + sinh(s) dir``."""

    base: np.ndarray
    dir: np.ndarray

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float)
        self.dir = np.asarray(self.dir, dtype=float)
        # far from the base point the pairings cancel catastrophically, so the
        # tolerance is relative to the squared coordinate size
        tol = 1e-8 * max(1.0, float(self.base @ self.base))
        if abs(float(lz.minkowski(self.dir, self.base))) > tol or abs(float(lz.minkowski(self.dir, self.dir)) - 1) > tol:
            raise NotOrthogonal("direction must be a unit tangent at the base point")

    def point(self, s: float) -> np.ndarray:
        return math.cosh(s) * self.base + math.sinh(s) * self.dir

    def tangent(self, s: float) -> np.ndarray:
        return math.sinh(s) * self.base + math.cosh(s) * self.dir

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Null vectors (forward, backward) spanning the light rays of the ends."""
        return self.base + self.dir, self.base - self.dir

    def reversed(self) -> "Geodesic":
        return Geodesic(self.base, -self.dir)

    def transformed(self, g: np.ndarray) -> "Geodesic":
        return Geodesic(g @ self.base, g @ self.dir)

    @classmethod
    def from_endpoints(cls, lplus: np.ndarray, lminus: np.ndarray) -> "Geodesic":
        c = -float(lz.minkowski(lplus, lminus))
        if c <= 0:
            raise Identical("endpoints coincide")
        s = math.sqrt(2.0 / c)
        lp, lm = lplus * s, lminus * s
        return cls(0.5 * (lp + lm), 0.5 * (lp - lm))

    @classmethod
    def from_frame(cls, g: np.ndarray) -> "Geodesic":
        return cls(g[:, 0], g[:, 1])


def perpendicular_foot(g: Geodesic, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Arc position of the nearest point of ``g`` to ``x`` and the unit normal there toward ``x``."""
    a = -lz.mdot(x, g.base)
    b = lz.mdot(x, g.dir)
    s = math.atanh(b / a)
    return s, unit_tangent_toward(g.point(s), x)


def normal_coords(g: Geodesic, s: float, w: np.ndarray) -> np.ndarray:
    """Coordinates of a normal vector at ``g(s)`` in a parallel frame along ``g``."""
    from .words import spacelike_complement

    E = spacelike_complement(g.base, g.dir)
    h = np.column_stack([g.base, g.dir, E])
    if np.linalg.det(h) < 0:
        h[:, -1] *= -1.0
    n = g.base.shape[0] - 1
    return (lz.flow(-s, n) @ lz.lorentz_inverse(h) @ w)[2:]


@dataclass
class OrthoConnection:
    src: Geodesic
    s1: float
    dst: Geodesic
    s2: float
    length: float
    foot_src: np.ndarray  # initial tangent of the connection at src
    foot_dst: np.ndarray  # minus the final tangent, at dst

    @property
    def p1(self) -> np.ndarray:
        return self.src.point(self.s1)

    @property
    def p2(self) -> np.ndarray:
        return self.dst.point(self.s2)

    def angle_defects(self) -> tuple[float, float]:
        return (abs(float(lz.minkowski(self.foot_src, self.src.tangent(self.s1)))),
                abs(float(lz.minkowski(self.foot_dst, self.dst.tangent(self.s2)))))


def _null_pairing(a, b) -> float:
    return -float(lz.minkowski(a, b))


def orthogeodesic(g1: Geodesic, g2: Geodesic, polish: bool = True, tol: float = 1e-12) -> OrthoConnection:
    """Common perpendicular of two geodesics at positive distance.

    Writing both geodesics through their light-like endpoint vectors makes
    ``cosh d(g1(s), g2(r))`` a sum of four exponentials whose minimum has a
    closed form; an optional Newton step on ``(s, r)`` removes round-off.
    """
    l1p, l1m = g1.endpoints()
    l2p, l2m = g2.endpoints()
    A = _null_pairing(l1p, l2p)
    B = _null_pairing(l1p, l2m)
    C = _null_pairing(l1m, l2p)
    D = _null_pairing(l1m, l2m)
    scale = max(A, B, C, D, 1.0)
    small = [x < tol * scale for x in (A, B, C, D)]
    if (small[0] and small[3]) or (small[1] and small[2]):
        raise Identical("geodesics share both endpoints")
    if any(small):
        raise Asymptotic("geodesics share an endpoint")
    ch = 0.5 * (math.sqrt(A * D) + math.sqrt(B * C))
    if ch <= 1.0 + tol:
        raise Intersecting("geodesics intersect")
    u = math.sqrt(D / A)
    v = math.sqrt(C / B)
    s = 0.5 * math.log(u * v)
    r = 0.5 * math.log(u / v)
    if polish:
        for _ in range(2):
            e = [A * math.exp(s + r), B * math.exp(s - r), C * math.exp(r - s), D * math.exp(-s - r)]
            gs = 0.25 * (e[0] + e[1] - e[2] - e[3])
            gr = 0.25 * (e[0] - e[1] + e[2] - e[3])
            hss = 0.25 * sum(e)
            hsr = 0.25 * (e[0] - e[1] - e[2] + e[3])
            det = hss * hss - hsr * hsr
            if det <= 0:
                break
            s -= (hss * gs - hsr * gr) / det
            r -= (hss * gr - hsr * gs) / det
    p1, p2 = g1.point(s), g2.point(r)
    d = hdistance(p1, p2)
    f1 = unit_tangent_toward(p1, p2)
    f2 = unit_tangent_toward(p2, p1)
    return OrthoConnection(g1, s, g2, r, d, f1, f2)


# ---------------------------------------------------------------------------
# normal bundle of a closed geodesic

@dataclass
class ModelClosedGeodesic:
    """Closed geodesic of length L whose normal bundle is glued by ``holonomy``.

    The unit normal bundle is the quotient of ``R x S^{n-2}`` by
    ``(s, w) ~ (s - L, holonomy @ w)``.
    """

    length: float
    holonomy: np.ndarray

    def __post_init__(self):
        self.holonomy = np.asarray(self.holonomy, dtype=float)
        k = self.holonomy.shape[0]
        if self.length <= 0:
            raise PreconditionError("length must be positive")
        if np.max(np.abs(self.holonomy.T @ self.holonomy - np.eye(k))) > 1e-10:
            raise NotOrthogonal("holonomy must be orthogonal")

    @property
    def fiber_dim(self) -> int:
        return self.holonomy.shape[0]

    def holonomy_power(self, k: int) -> np.ndarray:
        return np.linalg.matrix_power(self.holonomy, k) if k >= 0 else np.linalg.matrix_power(self.holonomy.T, -k)

    def deck_element(self) -> np.ndarray:
        """Isometry of H^n whose quotient of the x1-axis is this geodesic."""
        n = self.fiber_dim + 1
        return lz.flow(self.length, n) @ lz.m_embed(self.holonomy.T)


@dataclass
class NormalFiberPoint:
    s: float
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)

    def to_json(self) -> dict:
        return {"s": self.s, "w": self.w.tolist()}


def normalize_point(gamma: ModelClosedGeodesic, x: NormalFiberPoint) -> NormalFiberPoint:
    k = math.floor(x.s / gamma.length)
    s = x.s - k * gamma.length
    if s >= gamma.length:  # round-off
        s -= gamma.length
        k += 1
    w = gamma.holonomy_power(k) @ x.w if k else x.w
    return NormalFiberPoint(s, w / np.linalg.norm(w))


def parallel_transport(gamma: ModelClosedGeodesic, start: float, end: float, w: np.ndarray) -> np.ndarray:
    """Transport a normal vector from arc position ``start`` to ``end``.

    Vectors are expressed at the normalised representative in ``[0, L)``;
    each forward crossing of the seam applies the holonomy.
    """
    k = math.floor(end / gamma.length) - math.floor(start / gamma.length)
    w = np.asarray(w, dtype=float)
    return gamma.holonomy_power(k) @ w if k else w.copy()


def fiber_distance_along(gamma: ModelClosedGeodesic, x: NormalFiberPoint, y: NormalFiberPoint,
                         arc: int = ARC_ALPHA1) -> float:
    """Angle between ``x`` and ``y`` after transporting one to the other along an arc.

    ``ARC_ALPHA1`` runs forward from ``x`` to ``y`` and ``ARC_ALPHA2``
    forward from ``y`` to ``x``.  Transport is an isometry of the fibres,
    so comparing at the far endpoint equals comparing at the arc's midpoint.
    """
    x = normalize_point(gamma, x)
    y = normalize_point(gamma, y)
    if arc == ARC_ALPHA1:
        end = y.s if y.s >= x.s else y.s + gamma.length
        wx = parallel_transport(gamma, x.s, end, x.w)
        return lz.sphere_distance(wx, y.w)
    if arc == ARC_ALPHA2:
        end = x.s if x.s > y.s else x.s + gamma.length
        wy = parallel_transport(gamma, y.s, end, y.w)
        return lz.sphere_distance(wy, x.w)
    raise ValueError("arc must be ARC_ALPHA1 or ARC_ALPHA2")


def n1_distance(gamma: ModelClosedGeodesic, x: NormalFiberPoint, y: NormalFiberPoint) -> float:
    """Product-metric distance on the normal bundle (arc length and fibre angle)."""
    x = normalize_point(gamma, x)
    y = normalize_point(gamma, y)
    best = math.inf
    for k in (-1, 0, 1):
        ds = y.s + k * gamma.length - x.s
        wy = gamma.holonomy_power(-k) @ y.w if k else y.w
        best = min(best, math.hypot(ds, lz.sphere_distance(x.w, wy)))
    return best


def tau(gamma: ModelClosedGeodesic, x: NormalFiberPoint) -> NormalFiberPoint:
    """Flow by one unit along the geodesic, then take the antipodal normal."""
    return normalize_point(gamma, NormalFiberPoint(x.s + 1.0, -x.w))


# ---------------------------------------------------------------------------
# Fermat points

class FermatKind(enum.Enum):
    INTERIOR = "interior"
    VERTEX = "vertex"


def _grad_sum(P: np.ndarray, pts) -> tuple[float, np.ndarray]:
    f = 0.0
    g = np.zeros_like(P)
    for Q in pts:
        d = hdistance(P, Q)
        f += d
        if d > 0:
            g -= unit_tangent_toward(P, Q)
    return f, g


def vertex_angle(P: np.ndarray, Q1: np.ndarray, Q2: np.ndarray) -> float:
    return tangent_angle(unit_tangent_toward(P, Q1), unit_tangent_toward(P, Q2))


@dataclass
class FermatResult:
    point: np.ndarray
    kind: FermatKind
    value: float
    grad_norm: float
    angles: tuple


def fermat_point(A: np.ndarray, B: np.ndarray, C: np.ndarray, tol: float = 1e-12,
                 max_iter: int = 500) -> FermatResult:
    """Minimiser of ``|PA| + |PB| + |PC|`` on the hyperboloid.

    Returns the vertex when a triangle angle is at least 2pi/3, otherwise
    runs Riemannian gradient descent with Armijo backtracking from the
    normalised centroid and finishes with Newton steps using the Hessian
    ``sum coth(d_i) (I - u_i u_i^T)`` of the distance functions.
    """
    pts = [np.asarray(X, dtype=float) for X in (A, B, C)]
    n = pts[0].shape[0] - 1
    for i in range(3):
        for j in range(i + 1, 3):
            if hdistance(pts[i], pts[j]) < 1e-9:
                raise Degenerate("triangle has coincident vertices")
    sv = np.linalg.svd(np.column_stack(pts), compute_uv=False)
    if sv[2] < 1e-10 * sv[0]:
        raise Degenerate("vertices are collinear")
    two_thirds = 2 * math.pi / 3
    for i in range(3):
        a = vertex_angle(pts[i], pts[(i + 1) % 3], pts[(i + 2) % 3])
        if a >= two_thirds:
            f, _ = _grad_sum(pts[i], pts)
            return FermatResult(pts[i].copy(), FermatKind.VERTEX, f, math.nan, (a,))
    P = project_to_sheet(sum(pts))
    f, g = _grad_sum(P, pts)
    for _ in range(max_iter):
        gn = math.sqrt(max(float(lz.minkowski(g, g)), 0.0))
        if gn < 1e-6:
            break
        step = 1.0
        while step > 1e-12:
            Pn = exp_point(P, -step * g)
            fn, gnew = _grad_sum(Pn, pts)
            if fn <= f - 1e-4 * step * gn * gn:
                break
            step *= 0.5
        P, f, g = project_to_sheet(Pn), fn, gnew
    # Newton polish in an orthonormal tangent frame
    for _ in range(20):
        frame = lz.boost_to(P)[:, 1:]
        H = np.zeros((n, n))
        gc = frame.T @ lz.J(n) @ g
        for Q in pts:
            d = hdistance(P, Q)
            u = frame.T @ lz.J(n) @ unit_tangent_toward(P, Q)
            H += (1.0 / math.tanh(d)) * (np.eye(n) - np.outer(u, u))
        step = np.linalg.solve(H, -gc)
        P = project_to_sheet(exp_point(P, frame @ step))
        f, g = _grad_sum(P, pts)
        if np.linalg.norm(step) < 1e-15:
            break
    gn = math.sqrt(max(float(lz.minkowski(g, g)), 0.0))
    angs = tuple(vertex_angle(P, pts[i], pts[(i + 1) % 3]) for i in range(3))
    return FermatResult(P, FermatKind.INTERIOR, f, gn, angs)


# ---------------------------------------------------------------------------
# broken geodesics

def rotation_taking(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation of R^m taking unit vector ``a`` to unit vector ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = float(a @ b)
    if c <= -1.0 + 1e-14:
        raise AngleTooSharp("vectors are antipodal")
    K = np.outer(b, a) - np.outer(a, b)
    return np.eye(a.shape[0]) + K + (K @ K) / (1.0 + c)


@dataclass
class BrokenReduction:
    Y1: np.ndarray  # K-elements as (n+1)x(n+1) matrices
    t: float
    Y2: np.ndarray

    def product(self, n: int) -> np.ndarray:
        return self.Y1 @ lz.flow(self.t, n) @ self.Y2


def broken_reduce(t1: float, theta: float, t2: float, n: int = 3, angle_margin: float = 1e-3) -> BrokenReduction:
    """Write ``G(t1) R(theta) G(t2)`` as ``Y1 G(t) Y2`` with ``Y1, Y2`` in K.

    The product lives in the first three coordinates, so ``Y1`` and ``Y2``
    are rotations in the plane of ``R(theta)``.  Their angles are read off
    the first column and first row of the product in closed form, which
    avoids cancelling ``e^t``-sized entries.
    """
    if abs(theta) > math.pi - angle_margin:
        raise AngleTooSharp("turning angle too close to pi")
    ch1, sh1, ch2, sh2 = math.cosh(t1), math.sinh(t1), math.cosh(t2), math.sinh(t2)
    c, s = math.cos(theta), math.sin(theta)
    # spatial part of P e0 and of e0^T P
    x1, x2 = sh1 * ch2 + ch1 * sh2 * c, -sh2 * s
    y1, y2 = ch1 * sh2 + sh1 * ch2 * c, sh1 * s
    t = math.asinh(math.hypot(x1, x2))
    Y1 = lz.rot2(math.atan2(-x2, x1), n)
    Y2 = lz.rot2(math.atan2(y2, y1), n)
    return BrokenReduction(Y1, t, Y2)


def bent_length_law_of_cosines(t1: float, theta: float, t2: float) -> float:
    ch = math.cosh(t1) * math.cosh(t2) + math.sinh(t1) * math.sinh(t2) * math.cos(theta)
    return math.acosh(ch)


@dataclass
class BrokenLengthReport:
    lplus: float
    lminus: float
    length: float
    planar_length: float
    defect: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def closed_broken_word(lplus: float, lminus: float, n: int = 3) -> np.ndarray:
    """Closed broken geodesic with two right-angle turns, as a word."""
    return lz.flow(lplus, n) @ lz.rot2(math.pi / 2, n) @ lz.flow(lminus, n) @ lz.rot2(math.pi / 2, n)


def closed_broken_length(lplus: float, lminus: float, n: int = 3, min_length: float = 2.0) -> BrokenLengthReport:
    """Length of the closed geodesic homotopic to a doubly orthogonal broken one.

    Reports ``|l - l+ - l- + 2 ln 2|`` where ``l`` is read off the spectrum
    of the word; ``planar_length`` is the right-angled trig value
    ``cosh(l/2) = sinh(l+/2) sinh(l-/2)`` for comparison.
    """
    if lplus <= min_length or lminus <= min_length:
        raise PreconditionError(f"segment lengths must exceed {min_length}")
    g = closed_broken_word(lplus, lminus, n)
    l = translation_length(g)
    planar = 2.0 * math.acosh(math.sinh(0.5 * lplus) * math.sinh(0.5 * lminus))
    return BrokenLengthReport(lplus, lminus, l, planar, abs(l - lplus - lminus + 2 * math.log(2)))
