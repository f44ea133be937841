"""Hyperboloid model of H^n and the Lorentz group SO+(n,1).

Group elements are (n+1)x(n+1) real matrices ``g`` with ``g.T @ J @ g == J``.
The columns of ``g`` form an oriented frame: ``g[:, 0]`` is a point of the
hyperboloid and ``g[:, 1:]`` an orthonormal tangent basis there.  Instructions
act on frames from the right, so a word ``g @ h1 @ h2`` first applies ``h1``
to the frame ``g`` and then ``h2``.

The Lie algebra so(n,1) splits as a + m + n+ + n-, with ``H = E01 + E10``
generating the geodesic flow, m the rotations fixing the first two basis
vectors, and n+ / n- the horospherical parts with ``[H, X+] = -X+`` and
``[H, X-] = +X-``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
import scipy.linalg

from .config import DEFAULT_POLICY, NumericPolicy
from .errors import (
    DimensionTooSmall,
    LogDivergence,
    NoConvergence,
    NotLorentz,
    NotNearIdentity,
    NotOrthogonal,
)

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# basic linear algebra on R^{n,1}

def J(n: int) -> np.ndarray:
    """Minkowski form diag(-1, 1, ..., 1) of size n+1."""
    d = np.ones(n + 1)
    d[0] = -1.0
    return np.diag(d)


def minkowski(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """<x, y>_J along the last axis."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return -x[..., 0] * y[..., 0] + np.sum(x[..., 1:] * y[..., 1:], axis=-1)


def mdot(x: np.ndarray, y: np.ndarray) -> float:
    """Scalar <x, y>_J for single vectors."""
    return float(x[1:] @ y[1:] - x[0] * y[0])


def lorentz_inverse(g: np.ndarray) -> np.ndarray:
    """Inverse of a Lorentz matrix, ``J g^T J``."""
    h = g.T.copy()
    h[0, 1:] *= -1.0
    h[1:, 0] *= -1.0
    return h


def basepoint(n: int) -> np.ndarray:
    p = np.zeros(n + 1)
    p[0] = 1.0
    return p


def is_lorentz(g: np.ndarray, tol: float = DEFAULT_POLICY.struct_tol) -> bool:
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] < 3:
        return False
    Jn = J(g.shape[0] - 1)
    if np.max(np.abs(g.T @ Jn @ g - Jn)) > tol * max(1.0, np.max(np.abs(g)) ** 2):
        return False
    if g[0, 0] < 1.0 - tol:
        return False
    return abs(np.linalg.det(g) - 1.0) < tol * max(1.0, np.max(np.abs(g)) ** (g.shape[0]))


def lorentz_defect(g: np.ndarray) -> float:
    """max |g^T J g - J|."""
    Jn = J(g.shape[0] - 1)
    return float(np.max(np.abs(g.T @ Jn @ g - Jn)))


def reorthonormalize(g: np.ndarray) -> np.ndarray:
    """Lorentz Gram-Schmidt on the columns of ``g``.

    Restores ``g^T J g = J`` to machine precision while moving ``g`` only by
    the size of its current defect.
    """
    g = np.array(g, dtype=float, copy=True)
    Jd = np.diag(J(g.shape[0] - 1))
    c0 = g[:, 0]
    c0 = c0 / math.sqrt(-float(np.dot(c0 * Jd, c0)))
    if c0[0] < 0:
        c0 = -c0
    g[:, 0] = c0
    for j in range(1, g.shape[1]):
        v = g[:, j].copy()
        # two passes of modified Gram-Schmidt for stability
        for _ in range(2):
            v += np.dot(v * Jd, g[:, 0]) * g[:, 0]
            for i in range(1, j):
                v -= np.dot(v * Jd, g[:, i]) * g[:, i]
        g[:, j] = v / math.sqrt(float(np.dot(v * Jd, v)))
    return g


# ---------------------------------------------------------------------------
# typed carriers

class SubgroupTag(enum.Enum):
    K = "K"
    M = "M"
    A = "A"
    NPLUS = "N+"
    NMINUS = "N-"
    B = "B"


@dataclass(frozen=True)
class GroupElement:
    """Validated wrapper around a Lorentz matrix."""

    mat: np.ndarray
    n: int = field(init=False)
    tags: frozenset = frozenset()

    def __post_init__(self):
        m = np.asarray(self.mat, dtype=float)
        object.__setattr__(self, "mat", m)
        object.__setattr__(self, "n", m.shape[0] - 1)
        if m.shape[0] < 3 or not is_lorentz(m):
            raise NotLorentz(f"matrix is not in SO+({m.shape[0] - 1},1)")

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        o = other.mat if isinstance(other, GroupElement) else other
        return GroupElement(self.mat @ o)

    def inverse(self) -> "GroupElement":
        return GroupElement(lorentz_inverse(self.mat))

    def to_list(self) -> list:
        return self.mat.tolist()


@dataclass(frozen=True)
class HPoint:
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        object.__setattr__(self, "coords", c)
        if c[0] <= 0 or abs(minkowski(c, c) + 1.0) > 1e-9 * max(1.0, c[0] ** 2):
            raise NotLorentz("point is not on the upper hyperboloid sheet")


@dataclass(frozen=True)
class FrameAtPoint:
    base: HPoint
    vectors: np.ndarray  # columns are tangent vectors


def frame_of(g: np.ndarray) -> FrameAtPoint:
    g = np.asarray(g, dtype=float)
    return FrameAtPoint(HPoint(g[:, 0]), g[:, 1:].copy())


def group_of(frame: FrameAtPoint) -> np.ndarray:
    g = np.column_stack([frame.base.coords, frame.vectors])
    if not is_lorentz(g):
        raise NotLorentz("frame is not an oriented orthonormal frame")
    return g


def in_subgroup(g: np.ndarray, tag: SubgroupTag, tol: float = 1e-9) -> bool:
    """Check the algebraic form that characterises each standard subgroup."""
    g = np.asarray(g, dtype=float)
    n = g.shape[0] - 1
    if not is_lorentz(g, tol):
        return False
    I = np.eye(n + 1)
    if tag is SubgroupTag.K:
        return abs(g[0, 0] - 1) < tol and np.max(np.abs(g[1:, 0])) < tol
    if tag is SubgroupTag.M:
        return np.max(np.abs(g[:, :2] - I[:, :2])) < tol and np.max(np.abs(g[:2, :] - I[:2, :])) < tol
    if tag is SubgroupTag.A:
        t = math.asinh(g[1, 0])
        return np.max(np.abs(g - flow(t, n))) < tol
    if tag is SubgroupTag.B:
        t = math.asinh(g[1, 0])
        m = (lorentz_inverse(flow(t, n)) @ g)
        return in_subgroup(m, SubgroupTag.M, tol)
    if tag in (SubgroupTag.NPLUS, SubgroupTag.NMINUS):
        sign = 1 if tag is SubgroupTag.NPLUS else -1
        X = g - I
        if n < 2:
            return False
        x = horospherical_coords(X, sign)
        return np.max(np.abs(g - exp_n(x, sign))) < tol
    raise ValueError(tag)


# ---------------------------------------------------------------------------
# instructions

def flow(t: float, n: int) -> np.ndarray:
    """Frame flow a_t: move the base point a distance t along the first vector."""
    g = np.eye(n + 1)
    c, s = math.cosh(t), math.sinh(t)
    g[0, 0] = g[1, 1] = c
    g[0, 1] = g[1, 0] = s
    return g


def rot2(theta: float, n: int, i: int = 1, j: int = 2) -> np.ndarray:
    """Rotate the frame vectors ``i`` and ``j`` by ``theta``.

    Under the right action the new ``i``-th vector is ``cos(theta) f_i - sin(theta) f_j``.
    """
    g = np.eye(n + 1)
    c, s = math.cos(theta), math.sin(theta)
    g[i, i] = g[j, j] = c
    g[i, j] = s
    g[j, i] = -s
    return g


def rewrite(k: np.ndarray, tol: float = DEFAULT_POLICY.struct_tol) -> np.ndarray:
    """Replace the tangent frame by ``frame @ k`` with k in SO(n)."""
    k = np.asarray(k, dtype=float)
    m = k.shape[0]
    if k.shape != (m, m) or np.max(np.abs(k.T @ k - np.eye(m))) > tol or abs(np.linalg.det(k) - 1) > tol:
        raise NotOrthogonal("rewrite expects an element of SO(n)")
    g = np.eye(m + 1)
    g[1:, 1:] = k
    return g


def m_embed(m: np.ndarray) -> np.ndarray:
    """Embed an element of SO(n-1) into M, acting on frame vectors 2..n."""
    m = np.asarray(m, dtype=float)
    k = m.shape[0]
    g = np.eye(k + 2)
    g[2:, 2:] = m
    return g


def k_embed(k: np.ndarray) -> np.ndarray:
    g = np.eye(k.shape[0] + 1)
    g[1:, 1:] = k
    return g


def horospherical_generator(x: np.ndarray, sign: int) -> np.ndarray:
    """Algebra element X+(x) or X-(x); normalised so that ||X(x)|| = |x|."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0] + 1
    X = np.zeros((n + 1, n + 1))
    y = x / SQRT2
    # boost part E0j + Ej0 and rotation part E1j - Ej1, combined with the
    # sign fixed by [H, X+] = -X+
    X[0, 2:] = y
    X[2:, 0] = y
    r = -y if sign > 0 else y
    X[1, 2:] = r
    X[2:, 1] = -r
    return X


def horospherical_coords(X: np.ndarray, sign: int) -> np.ndarray:
    b = X[0, 2:]
    k = X[1, 2:]
    return (b - k) / SQRT2 if sign > 0 else (b + k) / SQRT2


def exp_n(x: np.ndarray, sign: int) -> np.ndarray:
    """exp(X+(x)) or exp(X-(x)); exact since the generator is nilpotent."""
    X = horospherical_generator(x, sign)
    return np.eye(X.shape[0]) + X + 0.5 * (X @ X)


# ---------------------------------------------------------------------------
# Lie algebra

def skew_from_vec(w: np.ndarray, k: int) -> np.ndarray:
    S = np.zeros((k, k))
    iu = np.triu_indices(k, 1)
    S[iu] = w
    return S - S.T


def vec_from_skew(S: np.ndarray) -> np.ndarray:
    return S[np.triu_indices(S.shape[0], 1)]


@dataclass(frozen=True)
class AlgebraElement:
    """Element of so(n,1) together with its a + m + n+ + n- components."""

    mat: np.ndarray
    a_part: float
    m_part: np.ndarray
    nplus: np.ndarray
    nminus: np.ndarray

    @property
    def n(self) -> int:
        return self.mat.shape[0] - 1

    @classmethod
    def from_matrix(cls, X: np.ndarray, tol: float = DEFAULT_POLICY.struct_tol) -> "AlgebraElement":
        X = np.asarray(X, dtype=float)
        n = X.shape[0] - 1
        Jn = J(n)
        if np.max(np.abs(X.T @ Jn + Jn @ X)) > tol * max(1.0, np.max(np.abs(X))):
            raise NotLorentz("matrix is not in so(n,1)")
        return cls(X, float(X[0, 1]), X[2:, 2:].copy(), horospherical_coords(X, +1), horospherical_coords(X, -1))

    @classmethod
    def from_components(cls, a_part: float, m_part, nplus, nminus) -> "AlgebraElement":
        nplus = np.asarray(nplus, dtype=float)
        nminus = np.asarray(nminus, dtype=float)
        m_part = np.asarray(m_part, dtype=float)
        n = nplus.shape[0] + 1
        X = horospherical_generator(nplus, +1) + horospherical_generator(nminus, -1)
        X[0, 1] += a_part
        X[1, 0] += a_part
        X[2:, 2:] += m_part
        return cls(X, float(a_part), m_part.copy(), nplus.copy(), nminus.copy())

    def components(self) -> list:
        """The four summands as algebra matrices."""
        n = self.n
        A = np.zeros((n + 1, n + 1))
        A[0, 1] = A[1, 0] = self.a_part
        Mm = np.zeros((n + 1, n + 1))
        Mm[2:, 2:] = self.m_part
        return [A, Mm, horospherical_generator(self.nplus, +1), horospherical_generator(self.nminus, -1)]


def flow_generator(n: int) -> np.ndarray:
    H = np.zeros((n + 1, n + 1))
    H[0, 1] = H[1, 0] = 1.0
    return H


def rotation_generator(n: int, i: int = 1, j: int = 2) -> np.ndarray:
    """Infinitesimal rotation of the frame vectors i, j (the generator of rot2)."""
    T = np.zeros((n + 1, n + 1))
    T[i, j] = 1.0
    T[j, i] = -1.0
    return T


def _as_mat(X) -> np.ndarray:
    return X.mat if isinstance(X, AlgebraElement) else np.asarray(X, dtype=float)


def killing_form(X, Y) -> float:
    """Bilinear form B(X, Y) = (n-2) tr(XY).

    This normalisation gives ``B(T, T) = -2(n-2)`` for an infinitesimal
    2-plane rotation T.  ``true_killing_form`` computes the form from the
    adjoint representation, which is proportional to this one.
    """
    X, Y = _as_mat(X), _as_mat(Y)
    n = X.shape[0] - 1
    return float((n - 2) * np.trace(X @ Y))


def _algebra_basis(n: int) -> list:
    basis = []
    for i in range(n + 1):
        for j in range(i + 1, n + 1):
            E = np.zeros((n + 1, n + 1))
            if i == 0:
                E[0, j] = E[j, 0] = 1.0
            else:
                E[i, j] = 1.0
                E[j, i] = -1.0
            basis.append(E)
    return basis


def _coords_in_basis(X: np.ndarray) -> np.ndarray:
    n = X.shape[0] - 1
    iu = np.triu_indices(n + 1, 1)
    return X[iu]


def ad_matrix(X: np.ndarray) -> np.ndarray:
    X = _as_mat(X)
    basis = _algebra_basis(X.shape[0] - 1)
    return np.column_stack([_coords_in_basis(X @ E - E @ X) for E in basis])


def true_killing_form(X, Y) -> float:
    """tr(ad X ad Y), computed from adjoint matrices."""
    return float(np.trace(ad_matrix(_as_mat(X)) @ ad_matrix(_as_mat(Y))))


def cartan_involution(X) -> np.ndarray:
    return -_as_mat(X).T


def inner_product(X, Y, allow_n2: bool = False) -> float:
    """Positive definite inner product ``-B(X, theta Y) / (2n - 4)``.

    Equals ``tr(X Y^T) / 2``.  For n = 2 the normalising constant vanishes;
    pass ``allow_n2=True`` to get the unnormalised ``tr(X Y^T)`` instead.
    """
    Xm, Ym = _as_mat(X), _as_mat(Y)
    n = Xm.shape[0] - 1
    if n == 2:
        if not allow_n2:
            raise DimensionTooSmall("inner product normalisation needs n >= 3")
        return float(np.sum(Xm * Ym))
    return -killing_form(Xm, cartan_involution(Ym)) / (2 * n - 4)


def algebra_norm(X) -> float:
    Xm = _as_mat(X)
    return math.sqrt(0.5 * float(np.sum(Xm * Xm)))


# ---------------------------------------------------------------------------
# distances

def rotation_angles(A: np.ndarray) -> np.ndarray:
    """Rotation angles in [0, pi] of an orthogonal matrix, one per 2-plane."""
    A = np.asarray(A, dtype=float)
    ev = np.linalg.eigvals(A)
    ang = np.abs(np.angle(ev))
    ang = np.sort(ang)[::-1]
    return ang[: A.shape[0] // 2]


def rotation_distance_batch(A: np.ndarray) -> np.ndarray:
    """Distance to the identity for a stack of rotations, shape (N, m, m)."""
    A = np.asarray(A, dtype=float)
    m = A.shape[-1]
    if m == 1:
        return np.zeros(A.shape[:-2])
    if m == 2:
        return np.abs(np.arctan2(A[..., 1, 0], A[..., 0, 0]))
    if m == 3:
        v = 0.5 * np.stack([A[..., 2, 1] - A[..., 1, 2], A[..., 0, 2] - A[..., 2, 0], A[..., 1, 0] - A[..., 0, 1]], -1)
        c = 0.5 * (np.trace(A, axis1=-2, axis2=-1) - 1.0)
        return np.arctan2(np.linalg.norm(v, axis=-1), c)
    ev = np.linalg.eigvals(A)
    return np.sqrt(0.5 * np.sum(np.angle(ev) ** 2, axis=-1))


def rotation_distance(A: np.ndarray, B: Optional[np.ndarray] = None) -> float:
    """d(A, B) = |log(A^T B)| in SO(m), with the half-trace norm."""
    A = np.asarray(A, dtype=float)
    D = A if B is None else A.T @ np.asarray(B, dtype=float)
    return float(rotation_distance_batch(D[None])[0])


def principal_log(A: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Real principal logarithm; raises LogDivergence when none exists."""
    ev = np.linalg.eigvals(A)
    neg = (np.abs(ev.imag) < 1e-7) & (ev.real < 0)
    if np.any(neg):
        raise LogDivergence("element has negative real eigenvalues")
    L = scipy.linalg.logm(A)
    if np.iscomplexobj(L):
        if np.max(np.abs(L.imag)) > tol * max(1.0, np.max(np.abs(L.real))):
            raise LogDivergence("logarithm is not real")
        L = L.real
    if np.max(np.abs(scipy.linalg.expm(L) - A)) > 1e-8 * max(1.0, np.max(np.abs(A))):
        raise LogDivergence("logarithm failed to reproduce the element")
    return L


def group_distance(g: np.ndarray, h: np.ndarray) -> float:
    """|log(g^{-1} h)| in the norm of ``inner_product``.

    Elements of K are handled through their rotation angles, which stays
    well defined for half turns.
    """
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    u = lorentz_inverse(g) @ h
    if abs(u[0, 0] - 1.0) < 1e-12 and np.max(np.abs(u[1:, 0])) < 1e-12:
        return rotation_distance(u[1:, 1:])
    L = principal_log(u)
    return algebra_norm(L)


def sphere_distance(v: np.ndarray, w: np.ndarray) -> float:
    """Great circle distance between unit vectors, in [0, pi]."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    a = np.linalg.norm(v - w)
    if a <= SQRT2:
        return float(2.0 * math.asin(min(1.0, 0.5 * a)))
    b = np.linalg.norm(v + w)
    return float(math.pi - 2.0 * math.asin(min(1.0, 0.5 * b)))


def sphere_distance_batch(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    a = np.linalg.norm(v - w, axis=-1)
    b = np.linalg.norm(v + w, axis=-1)
    d1 = 2.0 * np.arcsin(np.minimum(1.0, 0.5 * a))
    d2 = np.pi - 2.0 * np.arcsin(np.minimum(1.0, 0.5 * b))
    return np.where(a <= SQRT2, d1, d2)


# ---------------------------------------------------------------------------
# sampling

def haar_so(m: int, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Haar-random element(s) of SO(m) via QR with sign correction."""
    shape = (1 if size is None else size, m, m)
    Z = rng.standard_normal(shape)
    Q, R = np.linalg.qr(Z)
    d = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    d[d == 0] = 1.0
    Q = Q * d[..., None, :]
    det = np.linalg.det(Q)
    Q[det < 0, :, 0] *= -1.0
    return Q[0] if size is None else Q


def random_algebra(n: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Random so(n,1) element with norm exactly ``scale``."""
    X = np.zeros((n + 1, n + 1))
    iu = np.triu_indices(n + 1, 1)
    c = rng.standard_normal(len(iu[0]))
    X[iu] = c
    X = X - X.T
    X[0, 1:] *= -1.0  # boost entries are symmetric
    return X * (scale / algebra_norm(X))


def random_near_identity(n: int, d: float, rng: np.random.Generator) -> np.ndarray:
    """exp of a random algebra element with norm ``d``."""
    return scipy.linalg.expm(random_algebra(n, rng, d))


def random_unit(m: int, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    shape = (m,) if size is None else (size, m)
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def boost_to(p: np.ndarray) -> np.ndarray:
    """Pure boost carrying the base point to ``p``."""
    p = np.asarray(p, dtype=float)
    n = p.shape[0] - 1
    L = np.empty((n + 1, n + 1))
    pv = p[1:]
    L[0, 0] = p[0]
    L[0, 1:] = pv
    L[1:, 0] = pv
    L[1:, 1:] = np.eye(n) + np.outer(pv, pv) / (1.0 + p[0])
    return L


# ---------------------------------------------------------------------------
# horospherical conjugation

def conjugate_horospherical(t: float, m: np.ndarray, x: np.ndarray, sign: int) -> np.ndarray:
    """Coordinates of X1 with exp(X1) = (a_t m) exp(X) (a_t m)^{-1}.

    For ``sign=+1`` this contracts: ``|X1| = e^{-t} |X|``.  For ``sign=-1`` the
    mirrored identity ``exp(X1) = (a_t m)^{-1} exp(X) (a_t m)`` is used, which
    contracts by the same factor.
    """
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    if x.shape[0] == 0:
        return x.copy()
    f = math.exp(-t)
    if sign > 0:
        return f * (m @ x)
    return f * (m.T @ x)


# ---------------------------------------------------------------------------
# NAN decomposition

def cayley(S: np.ndarray) -> np.ndarray:
    k = S.shape[0]
    I = np.eye(k)
    return np.linalg.solve(I - S, I + S)


def inverse_cayley(m: np.ndarray) -> np.ndarray:
    k = m.shape[0]
    I = np.eye(k)
    return (m - I) @ np.linalg.inv(m + I)


@dataclass
class NANResult:
    """Factors of ``u = nplus @ b @ nminus`` and the chart coordinates."""

    nplus: np.ndarray
    b: np.ndarray
    nminus: np.ndarray
    xplus: np.ndarray
    t: float
    m: np.ndarray
    xminus: np.ndarray
    iterations: int
    residual: float

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter((self.nplus, self.b, self.nminus))

    def product(self) -> np.ndarray:
        return self.nplus @ self.b @ self.nminus

    def factor_size(self) -> float:
        """Largest distance of a factor from the identity."""
        n = self.nplus.shape[0] - 1
        return max(float(np.linalg.norm(self.xplus)), float(np.linalg.norm(self.xminus)),
                   math.hypot(self.t, rotation_distance(self.m)) if n > 2 else abs(self.t))


def _nan_unpack(p: np.ndarray, n: int):
    k = n - 1
    xp = p[:k]
    t = p[k]
    w = p[k + 1:len(p) - k]
    xm = p[len(p) - k:]
    return xp, t, w, xm


def _nan_eval(p: np.ndarray, n: int, with_jac: bool):
    k = n - 1
    xp, t, w, xm = _nan_unpack(p, n)
    Xp = horospherical_generator(xp, +1)
    Xm = horospherical_generator(xm, -1)
    I = np.eye(n + 1)
    Np = I + Xp + 0.5 * (Xp @ Xp)
    Nm = I + Xm + 0.5 * (Xm @ Xm)
    S = skew_from_vec(w, k)
    Ik = np.eye(k)
    inv = np.linalg.inv(Ik - S)
    mm = inv @ (Ik + S)
    Bm = flow(t, n)
    Bm[2:, 2:] = mm
    BN = Bm @ Nm
    F = Np @ BN
    if not with_jac:
        return F, None
    cols = []
    unit = np.eye(k)
    for j in range(k):
        dX = horospherical_generator(unit[j], +1)
        dN = dX + 0.5 * (Xp @ dX + dX @ Xp)
        cols.append((dN @ BN).ravel())
    H = flow_generator(n)
    NpB = Np @ Bm
    cols.append((NpB @ H @ Nm).ravel())
    iu = np.triu_indices(k, 1)
    for a, b in zip(*iu):
        dS = np.zeros((k, k))
        dS[a, b] = 1.0
        dS[b, a] = -1.0
        dm = inv @ dS @ (mm + Ik)
        dB = np.zeros((n + 1, n + 1))
        dB[2:, 2:] = dm
        cols.append((Np @ dB @ Nm).ravel())
    for j in range(k):
        dX = horospherical_generator(unit[j], -1)
        dN = dX + 0.5 * (Xm @ dX + dX @ Xm)
        cols.append((NpB @ dN).ravel())
    return F, np.column_stack(cols)


def nan_parameter_count(n: int) -> int:
    return 2 * (n - 1) + 1 + (n - 1) * (n - 2) // 2


def nan_decompose(u: np.ndarray, eps0: Optional[float] = None, x0: Optional[np.ndarray] = None,
                  policy: NumericPolicy = DEFAULT_POLICY, check_distance: bool = True) -> NANResult:
    """Factor ``u`` near the identity as ``nplus @ b @ nminus``.

    Newton iteration on the chart ``(x+, t, cayley(m), x-)`` seeded at zero
    (or at ``x0``).  The Jacobian of the chart is computed in closed form.

    Raises
    ------
    NotNearIdentity
        if ``d(u, e) >= eps0``.
    NoConvergence
        if the residual does not reach the round-trip tolerance.
    """
    u = np.asarray(u, dtype=float)
    n = u.shape[0] - 1
    eps0 = policy.nan_eps0 if eps0 is None else eps0
    if check_distance:
        try:
            d = group_distance(np.eye(n + 1), u)
        except LogDivergence as exc:
            raise NotNearIdentity(str(exc)) from exc
        if d >= eps0:
            raise NotNearIdentity(f"d(u, e) = {d:.3g} >= {eps0}")
    npar = nan_parameter_count(n)
    p = np.zeros(npar) if x0 is None else np.array(x0, dtype=float)
    target = u.ravel()
    res = np.inf
    it = 0
    for it in range(1, policy.newton_max_iter + 1):
        F, Jac = _nan_eval(p, n, True)
        r = F.ravel() - target
        res = float(np.max(np.abs(r)))
        if res < 1e-15:
            break
        step = np.linalg.lstsq(Jac, -r, rcond=None)[0]
        p = p + step
        if np.max(np.abs(step)) < 1e-17:
            break
    F, _ = _nan_eval(p, n, False)
    res = float(np.max(np.abs(F - u)))
    if not np.isfinite(res) or res > 0.1 * policy.roundtrip_tol:
        raise NoConvergence(f"NAN solve stalled with residual {res:.3g}")
    xp, t, w, xm = _nan_unpack(p, n)
    mm = cayley(skew_from_vec(w, n - 1))
    b = flow(t, n)
    b[2:, 2:] = mm
    return NANResult(exp_n(xp, +1), b, exp_n(xm, -1), xp.copy(), float(t), mm, xm.copy(), it, res)
