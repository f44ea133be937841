"""Steiner (theta) graphs of pants presentations.

The total length ``F(x, y) = sum_i d(x, g_i y)`` is strictly convex on
H^n x H^n; its minimiser gives two trivalent vertices joined by three
geodesic segments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import lorentz as lz
from .errors import DegenerateTheta, NotLoxodromic
from .geodesics import (
    Degenerate,
    exp_point,
    fermat_point,
    hdistance,
    project_to_sheet,
    tangent_angle,
    unit_tangent_toward,
)
from .words import axis_invariants, translation_length

TWO_THIRDS_PI = 2 * math.pi / 3


@dataclass
class PantsPresentation:
    """Three connection elements; cuffs are ``c_i = g_{i+1} g_{i+2}^{-1}``."""

    n: int
    connections: tuple
    provenance: str = "external"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.connections = tuple(np.asarray(g, dtype=float) for g in self.connections)
        if len(self.connections) != 3:
            raise ValueError("a pants presentation has three connections")

    def cuff(self, i: int) -> np.ndarray:
        g = self.connections
        return g[(i + 1) % 3] @ lz.lorentz_inverse(g[(i + 2) % 3])

    def cuffs(self) -> list:
        return [self.cuff(i) for i in range(3)]

    def conjugated(self, h: np.ndarray) -> "PantsPresentation":
        hi = lz.lorentz_inverse(h)
        return PantsPresentation(self.n, tuple(h @ g @ hi for g in self.connections), self.provenance, dict(self.meta))

    def to_json(self) -> dict:
        return {"n": self.n, "provenance": self.provenance,
                "connections": [g.tolist() for g in self.connections], "meta": self.meta}

    @classmethod
    def from_json(cls, d: dict) -> "PantsPresentation":
        return cls(int(d["n"]), tuple(np.array(g, dtype=float) for g in d["connections"]),
                   d.get("provenance", "external"), d.get("meta", {}))


def is_loxodromic_presentation(p: PantsPresentation) -> bool:
    try:
        for c in p.cuffs():
            translation_length(c)
    except NotLoxodromic:
        return False
    return True


@dataclass
class SteinerGraph:
    x: np.ndarray
    y: np.ndarray
    presentation: PantsPresentation
    lengths: np.ndarray
    total: float
    grad_norm: float
    angles_x: tuple
    angles_y: tuple
    iterations: int = 0
    seed_spread: float = 0.0

    @property
    def degenerate(self) -> bool:
        return bool(np.min(self.lengths) < 1e-6)

    def endpoints(self) -> list:
        return [g @ self.y for g in self.presentation.connections]

    def max_angle_error(self) -> float:
        return max(abs(a - TWO_THIRDS_PI) for a in self.angles_x + self.angles_y)

    def to_json(self) -> dict:
        return {"x": self.x.tolist(), "y": self.y.tolist(), "lengths": self.lengths.tolist(),
                "total": self.total, "grad_norm": self.grad_norm,
                "angles_x": list(self.angles_x), "angles_y": list(self.angles_y),
                "seed_spread": self.seed_spread}


# ---------------------------------------------------------------------------
# objective

def total_length(p: PantsPresentation, x: np.ndarray, y: np.ndarray) -> float:
    return float(sum(hdistance(x, g @ y) for g in p.connections))


def _gradient(p: PantsPresentation, x: np.ndarray, y: np.ndarray, ginv: Sequence[np.ndarray]):
    """Riemannian gradients in x and y (ambient tangent vectors)."""
    G = _stack(p.connections)
    Gi = _stack(ginv)
    Q = G @ y  # images g_i y, shape (3, n+1)
    Xs = Gi @ x  # preimages g_i^{-1} x
    f, ux = _tangents(x, Q)
    _, uy = _tangents(y, Xs)
    return f, -ux.sum(axis=0), -uy.sum(axis=0)


def _stack(gs) -> np.ndarray:
    return np.stack(gs) if not isinstance(gs, np.ndarray) else gs


def _tangents(p: np.ndarray, Q: np.ndarray):
    """Total distance from p to the rows of Q and the unit tangents toward them."""
    c = Q[:, 0] * p[0] - Q[:, 1:] @ p[1:]  # cosh of the distances
    W = Q - c[:, None] * p[None, :]
    nw2 = np.einsum("ij,ij->i", W[:, 1:], W[:, 1:]) - W[:, 0] ** 2
    nw = np.sqrt(np.maximum(nw2, 0.0))
    D = Q - p[None, :]
    dd = np.einsum("ij,ij->i", D[:, 1:], D[:, 1:]) - D[:, 0] ** 2
    d = 2.0 * np.arcsinh(0.5 * np.sqrt(np.maximum(dd, 0.0)))
    safe = nw > 0
    U = np.zeros_like(W)
    U[safe] = W[safe] / nw[safe, None]
    return float(d.sum()), U


class _Chart:
    """Normal coordinates around a point pair, using boosts for the tangent frames."""

    def __init__(self, x: np.ndarray, y: np.ndarray):
        self.x, self.y = x, y
        self.n = x.shape[0] - 1
        self.Bx = lz.boost_to(x)[:, 1:]
        self.By = lz.boost_to(y)[:, 1:]
        self.Jd = np.diag(lz.J(self.n))

    def point(self, z: np.ndarray):
        n = self.n
        return (project_to_sheet(exp_point(self.x, self.Bx @ z[:n])),
                project_to_sheet(exp_point(self.y, self.By @ z[n:])))

    def coords(self, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
        return np.concatenate([self.Bx.T @ (self.Jd * gx), self.By.T @ (self.Jd * gy)])


def _chart_grad(p, chart: _Chart, z, ginv):
    x, y = chart.point(z)
    f, gx, gy = _gradient(p, x, y, ginv)
    return f, chart.coords(gx, gy)


def fd_hessian(p: PantsPresentation, x: np.ndarray, y: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Hessian of F in normal coordinates by central differences of the gradient."""
    ginv = [lz.lorentz_inverse(g) for g in p.connections]
    chart = _Chart(x, y)
    dim = 2 * chart.n
    H = np.empty((dim, dim))
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = h
        _, gp = _chart_grad(p, chart, e, ginv)
        _, gm = _chart_grad(p, chart, -e, ginv)
        H[:, k] = (gp - gm) / (2 * h)
    return 0.5 * (H + H.T)


def fd_hessian_values(p: PantsPresentation, x: np.ndarray, y: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Hessian from function values with a four point stencil."""
    chart = _Chart(x, y)
    dim = 2 * chart.n

    def F(z):
        return total_length(p, *chart.point(z))

    H = np.empty((dim, dim))
    for a in range(dim):
        for b in range(a, dim):
            ea = np.zeros(dim)
            eb = np.zeros(dim)
            ea[a] = h
            eb[b] = h
            v = (F(ea + eb) - F(ea - eb) - F(-ea + eb) + F(-ea - eb)) / (4 * h * h)
            H[a, b] = H[b, a] = v
    return H


def minimize_from(p: PantsPresentation, x0: np.ndarray, y0: np.ndarray, gtol: float = 1e-11,
                  max_iter: int = 500) -> tuple[np.ndarray, np.ndarray, float, int]:
    """Damped Newton iteration with Armijo backtracking on H^n x H^n.

    Falls back to a gradient step whenever the finite-difference Hessian is
    not positive definite.
    """
    ginv = [lz.lorentz_inverse(g) for g in p.connections]
    x, y = project_to_sheet(x0), project_to_sheet(y0)
    f, gx, gy = _gradient(p, x, y, ginv)
    it = 0
    gnorm = math.inf
    for it in range(1, max_iter + 1):
        chart = _Chart(x, y)
        g = chart.coords(gx, gy)
        gnorm = float(np.linalg.norm(g))
        if gnorm < gtol:
            break
        H = fd_hessian(p, x, y)
        try:
            w = np.linalg.eigvalsh(H)
            if w[0] <= 1e-12:
                raise np.linalg.LinAlgError
            d = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            d = -g
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -float(g @ g)
        step = 1.0
        accepted = False
        while step > 1e-14:
            xn, yn = chart.point(step * d)
            fn, gxn, gyn = _gradient(p, xn, yn, ginv)
            if fn <= f + 1e-4 * step * slope + 1e-13 * max(1.0, abs(f)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        x, y, f, gx, gy = xn, yn, fn, gxn, gyn
    chart = _Chart(x, y)
    gnorm = float(np.linalg.norm(chart.coords(gx, gy)))
    return x, y, gnorm, it


# ---------------------------------------------------------------------------
# seeds

def _seed_fermat(p: PantsPresentation) -> tuple[np.ndarray, np.ndarray]:
    """Alternate Fermat points of the three images, starting from the base point."""
    n = p.n
    y = lz.basepoint(n)
    ginv = [lz.lorentz_inverse(g) for g in p.connections]
    x = y
    for _ in range(3):
        try:
            x = fermat_point(*[g @ y for g in p.connections]).point
            y = fermat_point(*[gi @ x for gi in ginv]).point
        except Degenerate:
            break
    return x, y


def _seed_axes(p: PantsPresentation) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint of the basepoint projections onto the three cuff axes."""
    from .words import axis_frame

    n = p.n
    pts = []
    for c in p.cuffs():
        h, _ = axis_frame(c)
        pts.append(h[:, 0])
    x = project_to_sheet(sum(pts))
    ginv = [lz.lorentz_inverse(g) for g in p.connections]
    y = project_to_sheet(sum(gi @ x for gi in ginv))
    return x, y


def steiner_minimize(p: PantsPresentation, seeds: int = 3, rng: Optional[np.random.Generator] = None,
                     agree_tol: float = 1e-7) -> SteinerGraph:
    """Minimise the total length from several seeds and certify agreement.

    Raises DegenerateTheta when a segment collapses.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    starts = [_seed_fermat(p)]
    if seeds >= 2:
        try:
            starts.append(_seed_axes(p))
        except NotLoxodromic:
            pass
    while len(starts) < seeds:
        x0, y0 = starts[0]
        jx = lz.random_unit(p.n, rng) * 0.5
        jy = lz.random_unit(p.n, rng) * 0.5
        starts.append((exp_point(x0, lz.boost_to(x0)[:, 1:] @ jx), exp_point(y0, lz.boost_to(y0)[:, 1:] @ jy)))
    results = [minimize_from(p, x0, y0) for x0, y0 in starts[:max(seeds, 1)]]
    best = min(results, key=lambda r: (r[2], total_length(p, r[0], r[1])))
    spread = max(max(hdistance(best[0], r[0]), hdistance(best[1], r[1])) for r in results)
    x, y, gnorm, it = best
    return _graph(p, x, y, gnorm, it, spread)


def _graph(p: PantsPresentation, x, y, gnorm, it, spread) -> SteinerGraph:
    ends = [g @ y for g in p.connections]
    lengths = np.array([hdistance(x, q) for q in ends])
    total = float(lengths.sum())
    if np.min(lengths) < 1e-6:
        raise DegenerateTheta(f"segment of length {np.min(lengths):.3g}")
    vx = [unit_tangent_toward(x, q) for q in ends]
    ginv = [lz.lorentz_inverse(g) for g in p.connections]
    wy = [unit_tangent_toward(y, gi @ x) for gi in ginv]
    ax = tuple(tangent_angle(vx[i], vx[(i + 1) % 3]) for i in range(3))
    ay = tuple(tangent_angle(wy[i], wy[(i + 1) % 3]) for i in range(3))
    return SteinerGraph(x, y, p, lengths, total, gnorm, ax, ay, it, spread)


# ---------------------------------------------------------------------------
# convexity

@dataclass
class ConvexityReport:
    trials: int
    strict: int
    min_margin: float
    margins: list

    @property
    def fraction(self) -> float:
        return self.strict / max(self.trials, 1)


def segment_margin(p: PantsPresentation, x0, y0, x1, y1) -> float:
    """Average of the endpoint values minus the value at the geodesic midpoint."""
    mx = project_to_sheet(x0 + x1)
    my = project_to_sheet(y0 + y1)
    return 0.5 * (total_length(p, x0, y0) + total_length(p, x1, y1)) - total_length(p, mx, my)


def convexity_probe(p: PantsPresentation, trials: int = 200, rng: Optional[np.random.Generator] = None,
                    radius: float = 2.0, center: Optional[tuple] = None) -> ConvexityReport:
    rng = np.random.default_rng(0) if rng is None else rng
    n = p.n
    if center is None:
        cx = cy = lz.basepoint(n)
    else:
        cx, cy = center

    def rand_near(c):
        v = lz.boost_to(c)[:, 1:] @ (lz.random_unit(n, rng) * radius * rng.random())
        return project_to_sheet(exp_point(c, v))

    margins = []
    for _ in range(trials):
        x0, y0, x1, y1 = rand_near(cx), rand_near(cy), rand_near(cx), rand_near(cy)
        margins.append(segment_margin(p, x0, y0, x1, y1))
    strict = sum(m > 0 for m in margins)
    return ConvexityReport(trials, strict, float(min(margins)), margins)


# ---------------------------------------------------------------------------
# tripods

@dataclass
class Tripods:
    vx: list  # unit tangents at x toward g_i y
    wy: list  # unit tangents at y toward g_i^{-1} x
    P: np.ndarray  # frame at x: first vector v0, second completes the tripod plane
    Fq: np.ndarray  # frame at y

    def perp(self, i: int) -> np.ndarray:
        """Unit vector in the tripod plane at x, orthogonal to v_i, at angle pi/6 to v_{i+1}."""
        a, b = self.vx[i], self.vx[(i + 1) % 3]
        w = b - float(lz.minkowski(a, b)) * a
        return w / math.sqrt(float(lz.minkowski(w, w)))


def _complete_frame(base: np.ndarray, f1: np.ndarray, f2: np.ndarray, rng: Optional[np.random.Generator]) -> np.ndarray:
    from .words import spacelike_complement

    n = base.shape[0] - 1
    g = np.column_stack([base, f1, f2])
    if n > 2:
        # complement of span(base, f1, f2)
        Jd = np.diag(lz.J(n))
        A = np.vstack([base * Jd, f1 * Jd, f2 * Jd])
        _, _, Vt = np.linalg.svd(A)
        N = Vt[3:].T
        G = N.T @ (Jd[:, None] * N)
        E = N @ np.linalg.inv(np.linalg.cholesky(G)).T
        if rng is not None:
            E = E @ lz.haar_so(n - 2, rng)
        g = np.column_stack([g, E])
        if np.linalg.det(g) < 0:
            g[:, -1] *= -1.0
    elif np.linalg.det(g) < 0:
        raise DegenerateTheta("tripod frame has the wrong orientation")
    return g


def tripods_from_steiner(sg: SteinerGraph, rng: Optional[np.random.Generator] = None) -> Tripods:
    """Tripods at both vertices and positive frames adapted to them.

    ``rng`` selects a random gauge for the frame vectors orthogonal to the
    tripod planes; ``None`` gives a fixed deterministic choice.
    """
    if sg.degenerate:
        raise DegenerateTheta("degenerate Steiner graph")
    p = sg.presentation
    x, y = sg.x, sg.y
    vx = [unit_tangent_toward(x, g @ y) for g in p.connections]
    wy = [unit_tangent_toward(y, lz.lorentz_inverse(g) @ x) for g in p.connections]
    c, s = math.cos(TWO_THIRDS_PI), math.sin(TWO_THIRDS_PI)
    e2 = (c * vx[0] - vx[1]) / s
    e2 = e2 - float(lz.minkowski(e2, vx[0])) * vx[0]
    e2 /= math.sqrt(float(lz.minkowski(e2, e2)))
    f2 = (wy[1] - c * wy[0]) / s
    f2 = f2 - float(lz.minkowski(f2, wy[0])) * wy[0]
    f2 /= math.sqrt(float(lz.minkowski(f2, f2)))
    P = _complete_frame(x, vx[0], e2, rng)
    Fq = _complete_frame(y, wy[0], f2, rng)
    return Tripods(vx, wy, P, Fq)
