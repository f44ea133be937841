"""Extended-precision hyperboloid helpers for far-away lifts.

Lifts of a cuff that sit a cuff-length away from the base point have
light-cone endpoints about ``e^{-2R}`` apart, and their Minkowski pairings
cancel below double precision.  The few operations needed to locate feet on
such lifts are done here with mpmath numbers held in numpy object arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import mpmath
import numpy as np

from .errors import Asymptotic, Identical, Intersecting, NotLoxodromic

DPS = 60
_mpf = np.vectorize(mpmath.mpf, otypes=[object])


def to_mp(a) -> np.ndarray:
    return _mpf(np.asarray(a, dtype=float))


def to_float(a) -> np.ndarray:
    return np.array(a, dtype=float)


def mink(x: np.ndarray, y: np.ndarray):
    return -x[0] * y[0] + (x[1:] * y[1:]).sum()


def linv(g: np.ndarray) -> np.ndarray:
    gi = g.T.copy()
    gi[0, 1:] = -gi[0, 1:]
    gi[1:, 0] = -gi[1:, 0]
    return gi


def eye(m: int) -> np.ndarray:
    out = np.empty((m, m), dtype=object)
    for i in range(m):
        for j in range(m):
            out[i, j] = mpmath.mpf(1 if i == j else 0)
    return out


def lorentz_project(g: np.ndarray, steps: int = 3) -> np.ndarray:
    """Nearest-ish exact Lorentz matrix via ``g <- g (3I - J g^T J g) / 2``."""
    I = eye(g.shape[0])
    for _ in range(steps):
        S = linv(g) @ g
        g = g @ (mpmath.mpf(3) * I - S) / 2
    return g


def _unit(x: np.ndarray) -> np.ndarray:
    return x / mpmath.sqrt((x * x).sum())


def attracting_endpoint(g: np.ndarray, max_iter: int = 200) -> np.ndarray:
    """Light-like eigenvector of the dominant eigenvalue, by power iteration."""
    m = g.shape[0]
    x = _unit(to_mp(np.linspace(1.0, 0.37, m) + np.r_[m, np.zeros(m - 1)]))
    tol = mpmath.mpf(10) ** (-(DPS - 8))
    for _ in range(max_iter):
        y = _unit(g @ x)
        if y[0] < 0:
            y = -y
        if mpmath.sqrt(((y - x) ** 2).sum()) < tol:
            return y
        x = y
    raise NotLoxodromic("power iteration did not converge")


@dataclass
class AxisMP:
    h: np.ndarray  # columns p, v, spacelike complement
    length: float
    holonomy: np.ndarray  # float, gluing map of the normal bundle

    def endpoints(self):
        return self.h[:, 0] + self.h[:, 1], self.h[:, 0] - self.h[:, 1]


def _complement(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    m = p.shape[0]
    cols = []
    for j in range(m):
        e = to_mp(np.eye(m)[:, j])
        # J-orthogonalise against timelike p and spacelike v, then earlier columns
        x = e + mink(e, p) * p - mink(e, v) * v
        for c in cols:
            x = x - mink(x, c) * c
        nn = mink(x, x)
        if nn > mpmath.mpf("1e-6"):
            cols.append(x / mpmath.sqrt(nn))
        if len(cols) == m - 2:
            break
    return np.column_stack(cols) if cols else np.empty((m, 0), dtype=object)


def axis_mp(g: np.ndarray) -> AxisMP:
    """Axis frame, translation length and normal-bundle gluing map of ``g``."""
    lp = attracting_endpoint(g)
    lm = attracting_endpoint(linv(g))
    c = -mink(lp, lm)
    if c <= 0:
        raise NotLoxodromic("fixed points coincide")
    s = mpmath.sqrt(2 / c)
    lp, lm = lp * s, lm * s
    lam = (g @ lp)[0] / lp[0]
    if lam <= 1:
        raise NotLoxodromic("not loxodromic")
    p = (lp + lm) / 2
    v = (lp - lm) / 2
    E = _complement(p, v)
    h = np.column_stack([p, v, E])
    if mpmath.det(mpmath.matrix(h.tolist())) < 0:
        h[:, -1] = -h[:, -1]
    m = (linv(h) @ g @ h)[2:, 2:]
    mf = to_float(m)
    if mf.size:
        U, _, Vt = np.linalg.svd(mf)
        mf = U @ Vt
    return AxisMP(h, float(mpmath.log(lam)), mf.T)


def normalized_pair(lp: np.ndarray, lm: np.ndarray):
    c = -mink(lp, lm)
    s = mpmath.sqrt(2 / c)
    return lp * s, lm * s


@dataclass
class OrthoMP:
    length: float
    p1: np.ndarray
    foot1: np.ndarray


def orthogeodesic_mp(g1, g2) -> OrthoMP:
    """Common perpendicular from the geodesic with endpoints ``g1`` to ``g2``.

    Each argument is a pair of light-like endpoint vectors; only the start on
    the first geodesic and the unit tangent there are returned.
    """
    l1p, l1m = normalized_pair(*g1)
    l2p, l2m = normalized_pair(*g2)
    A, B, C, D = (-mink(l1p, l2p), -mink(l1p, l2m), -mink(l1m, l2p), -mink(l1m, l2m))
    tiny = mpmath.mpf(10) ** (-(DPS // 2))
    small = [x < tiny for x in (A, B, C, D)]
    if (small[0] and small[3]) or (small[1] and small[2]):
        raise Identical("geodesics share both endpoints")
    if any(small):
        raise Asymptotic("geodesics share an endpoint")
    ch = (mpmath.sqrt(A * D) + mpmath.sqrt(B * C)) / 2
    if ch <= 1:
        raise Intersecting("geodesics intersect")
    u = mpmath.sqrt(D / A)
    v = mpmath.sqrt(C / B)
    s = mpmath.log(u * v) / 2
    r = mpmath.log(u / v) / 2
    p1 = (mpmath.exp(s) * l1p + mpmath.exp(-s) * l1m) / 2
    p2 = (mpmath.exp(r) * l2p + mpmath.exp(-r) * l2m) / 2
    d = mpmath.acosh(ch)
    f1 = (p2 + mink(p1, p2) * p1) / mpmath.sinh(d)
    return OrthoMP(float(d), p1, f1)


def fiber_coords(h: np.ndarray, x: np.ndarray, f: np.ndarray) -> tuple[float, np.ndarray]:
    """Arc position and unit normal coordinates of ``(x, f)`` on the axis of ``h``."""
    hi = linv(h)
    y = hi @ x
    s = mpmath.asinh(y[1])
    w = to_float((hi @ f)[2:])
    return float(s), w / np.linalg.norm(w)
