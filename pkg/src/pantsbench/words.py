"""Instruction words over SO+(n,1) and conjugacy invariants of loxodromics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import lorentz as lz
from .config import DEFAULT_POLICY, NumericPolicy
from .errors import ConfigError, NoConvergence, NotLoxodromic, NotNearIdentity


# ---------------------------------------------------------------------------
# instructions

@dataclass(frozen=True)
class FrameFlow:
    t: float

    def matrix(self, n: int) -> np.ndarray:
        return lz.flow(self.t, n)

    def inverse(self) -> "FrameFlow":
        return FrameFlow(-self.t)

    def to_json(self) -> dict:
        return {"op": "flow", "t": self.t}


@dataclass(frozen=True)
class Rotation2:
    theta: float
    i: int = 1
    j: int = 2

    def matrix(self, n: int) -> np.ndarray:
        return lz.rot2(self.theta, n, self.i, self.j)

    def inverse(self) -> "Rotation2":
        return Rotation2(-self.theta, self.i, self.j)

    def to_json(self) -> dict:
        return {"op": "rot2", "theta": self.theta, "i": self.i, "j": self.j}


@dataclass(frozen=True)
class Rewrite:
    k: tuple  # nested tuples so the dataclass stays hashable

    @classmethod
    def of(cls, k: np.ndarray) -> "Rewrite":
        return cls(tuple(map(tuple, np.asarray(k, dtype=float))))

    def matrix(self, n: int) -> np.ndarray:
        return lz.rewrite(np.array(self.k))

    def inverse(self) -> "Rewrite":
        return Rewrite.of(np.array(self.k).T)

    def to_json(self) -> dict:
        return {"op": "rewrite", "k": [list(r) for r in self.k]}


@dataclass(frozen=True)
class Perturb:
    g: tuple

    @classmethod
    def of(cls, g: np.ndarray, eps0: float = DEFAULT_POLICY.nan_eps0) -> "Perturb":
        g = np.asarray(g, dtype=float)
        if lz.group_distance(np.eye(g.shape[0]), g) >= eps0:
            raise NotNearIdentity("perturbation is not within eps0 of the identity")
        return cls(tuple(map(tuple, g)))

    def matrix(self, n: int) -> np.ndarray:
        return np.array(self.g)

    def inverse(self) -> "Perturb":
        return Perturb(tuple(map(tuple, lz.lorentz_inverse(np.array(self.g)))))

    def to_json(self) -> dict:
        return {"op": "perturb", "g": [list(r) for r in self.g]}


Instruction = FrameFlow | Rotation2 | Rewrite | Perturb


def instruction_from_json(d: dict) -> Instruction:
    op = d.get("op")
    if op == "flow":
        return FrameFlow(float(d["t"]))
    if op == "rot2":
        return Rotation2(float(d["theta"]), int(d.get("i", 1)), int(d.get("j", 2)))
    if op == "rewrite":
        return Rewrite.of(np.array(d["k"], dtype=float))
    if op == "perturb":
        return Perturb.of(np.array(d["g"], dtype=float))
    raise ConfigError(f"unknown instruction {op!r}")


def evaluate(word: Sequence[Instruction], n: int) -> np.ndarray:
    """Group element of a word; instructions act on the frame from the right."""
    g = np.eye(n + 1)
    for ins in word:
        g = g @ ins.matrix(n)
    return g


def inverse_word(word: Sequence[Instruction]) -> list:
    return [ins.inverse() for ins in reversed(word)]


# ---------------------------------------------------------------------------
# conjugacy invariants

@dataclass
class LoxodromicInvariants:
    """Translation length and a monodromy representative in SO(n-1)."""

    t: float
    m_class: np.ndarray

    def angles(self) -> np.ndarray:
        return monodromy_angles(self.m_class)

    def to_json(self) -> dict:
        return {"t": self.t, "m_class": np.asarray(self.m_class).tolist(), "angles": self.angles().tolist()}


def monodromy_angles(m: np.ndarray) -> np.ndarray:
    """Conjugacy invariant of a rotation: sorted rotation angles.

    For SO(2) the signed angle is returned, since +theta and -theta are not
    conjugate there.
    """
    m = np.asarray(m, dtype=float)
    k = m.shape[0]
    if k == 0 or k == 1:
        return np.zeros(0)
    if k == 2:
        return np.array([math.atan2(m[1, 0], m[0, 0])])
    return np.sort(lz.rotation_angles(m))


def monodromy_class_distance(m1: np.ndarray, m2: np.ndarray) -> float:
    """Distance between conjugacy classes, via sorted rotation angles."""
    a, b = monodromy_angles(m1), monodromy_angles(m2)
    if a.shape[0] == 1 and np.asarray(m1).shape[0] == 2:
        d = abs((a[0] - b[0] + math.pi) % (2 * math.pi) - math.pi)
        return float(d)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def _dominant_null_eigvec(g: np.ndarray) -> tuple[float, np.ndarray]:
    w, V = np.linalg.eig(g)
    i = int(np.argmax(np.abs(w)))
    lam = w[i]
    v = V[:, i]
    if abs(lam.imag) > 1e-9 * abs(lam):
        raise NotLoxodromic("dominant eigenvalue is not real")
    v = v.real
    if v[0] < 0:
        v = -v
    return float(lam.real), v


def spacelike_complement(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    """J-orthonormal basis (as columns) of the complement of span(p, v)."""
    n = p.shape[0] - 1
    Jd = np.diag(lz.J(n))
    A = np.vstack([p * Jd, v * Jd])
    _, _, Vt = np.linalg.svd(A)
    N = Vt[2:].T  # euclidean basis of the J-complement
    G = N.T @ (Jd[:, None] * N)
    L = np.linalg.cholesky(G)
    return N @ np.linalg.inv(L).T


def axis_frame(g: np.ndarray, tol: float = 1e-9) -> tuple[np.ndarray, float]:
    """Frame ``h`` on the axis of ``g`` with ``h^{-1} g h = a_t m``.

    Returns ``(h, t)``; ``h[:, 0]`` lies on the axis and ``h[:, 1]`` points
    in the translation direction.
    """
    g = np.asarray(g, dtype=float)
    n = g.shape[0] - 1
    lam, lp = _dominant_null_eigvec(g)
    if lam <= 1.0 + tol:
        raise NotLoxodromic(f"spectral radius {lam:.3g} does not exceed 1")
    _, lm = _dominant_null_eigvec(lz.lorentz_inverse(g))
    c = -float(lz.minkowski(lp, lm))
    if c <= 0:
        raise NotLoxodromic("attracting and repelling fixed points coincide")
    s = math.sqrt(2.0 / c)
    lp, lm = lp * s, lm * s
    p = 0.5 * (lp + lm)
    v = 0.5 * (lp - lm)
    E = spacelike_complement(p, v)
    h = np.column_stack([p, v, E])
    if np.linalg.det(h) < 0:
        h[:, -1] *= -1.0
    return h, math.log(lam)


def axis_invariants(g: np.ndarray, tol: float = 1e-9) -> LoxodromicInvariants:
    """Translation length and monodromy of a loxodromic element.

    The axis is found from the dominant eigenvectors of ``g`` and ``g^{-1}``;
    conjugating by a frame on the axis puts ``g`` in the form ``a_t m``.
    """
    h, t = axis_frame(g, tol)
    c = lz.lorentz_inverse(h) @ g @ h
    m = c[2:, 2:]
    # project to SO(n-1) to remove round-off from the conjugation
    if m.shape[0] > 0:
        U, _, Vt = np.linalg.svd(m)
        m = U @ Vt
    return LoxodromicInvariants(t, m)


def translation_length(g: np.ndarray) -> float:
    lam, _ = _dominant_null_eigvec(np.asarray(g, dtype=float))
    if lam <= 1.0:
        raise NotLoxodromic("not loxodromic")
    return math.log(lam)


def axis_geodesic(g: np.ndarray):
    """Oriented axis of ``g`` as a ``geodesics.Geodesic``."""
    from .geodesics import Geodesic

    h, _ = axis_frame(g)
    return Geodesic(h[:, 0], h[:, 1])


# ---------------------------------------------------------------------------
# absorption of perturbations

@dataclass
class AbsorbTrace:
    invariants: LoxodromicInvariants
    residuals: list


def _b_parts(b: np.ndarray) -> tuple[float, np.ndarray]:
    return math.asinh(b[1, 0]), b[2:, 2:]


def absorb_perturbation(t: float, m: np.ndarray, u: np.ndarray, policy: NumericPolicy = DEFAULT_POLICY,
                        eps0: Optional[float] = None, trace: bool = False):
    """Invariants ``(t', m')`` with ``a_t m u`` conjugate to ``a_t' m'``.

    Each step factors the perturbation as ``n+ b n-``, conjugates ``n-`` to
    the front, and pushes half of the flow through both horospherical
    factors, which shrinks them by ``exp(-t/2)``.  The element ``b`` is
    merged into the flow and the rotation.  Stops once the remaining
    perturbation is below ``policy.absorb_tol``.
    """
    m = np.asarray(m, dtype=float)
    u = np.asarray(u, dtype=float)
    n = u.shape[0] - 1
    eps0 = policy.nan_eps0 if eps0 is None else eps0
    I = np.eye(n + 1)
    residuals = [float(np.max(np.abs(u - I)))]
    first = True
    for _ in range(policy.newton_max_iter):
        if residuals[-1] < policy.absorb_tol:
            break
        fac = lz.nan_decompose(u, eps0=eps0, policy=policy, check_distance=first)
        first = False
        s, mb = _b_parts(fac.b)
        half = 0.5 * t
        xm1 = lz.conjugate_horospherical(half, np.eye(n - 1), fac.xminus, -1)
        xp1 = lz.conjugate_horospherical(half, m, fac.xplus, +1)
        m_new = m @ mb
        t = t + s
        m = m_new
        u = lz.exp_n(xm1, -1) @ lz.exp_n(xp1, +1)
        r = float(np.max(np.abs(u - I)))
        if r > 0.9 * residuals[-1] and r > policy.absorb_tol:
            raise NoConvergence("perturbation is not contracting; flow too short or perturbation too large")
        residuals.append(r)
    else:
        if residuals[-1] >= policy.absorb_tol:
            raise NoConvergence("iteration cap reached")
    if m.shape[0] > 0:
        U, _, Vt = np.linalg.svd(m)
        m = U @ Vt
    inv = LoxodromicInvariants(float(t), m)
    return AbsorbTrace(inv, residuals) if trace else inv


def close_eight_word(t1: float, u1: np.ndarray, m1: np.ndarray, v1: np.ndarray,
                     t2: float, u2: np.ndarray, m2: np.ndarray, v2: np.ndarray,
                     policy: NumericPolicy = DEFAULT_POLICY) -> LoxodromicInvariants:
    """Invariants of ``a_t1 u1 m1 v1 a_t2 u2 m2 v2``.

    The rotations are commuted to the right, the middle perturbation is
    split with the NAN factorization and its horospherical parts are pushed
    through the adjacent flows.  What remains is handed to
    ``absorb_perturbation``.
    """
    n = np.asarray(u1).shape[0] - 1
    M1 = lz.m_embed(m1)
    M2 = lz.m_embed(m2)
    iM1 = M1.T
    iM2 = M2.T
    # a1 u1 M1 v1 a2 u2 M2 v2 = a1 M1 (M1^-1 u1 M1 v1) a2 M2 (M2^-1 u2 M2 v2)
    w = iM1 @ u1 @ M1 @ v1
    u3 = iM2 @ u2 @ M2 @ v2
    fac = lz.nan_decompose(w, policy=policy)
    s, mb = _b_parts(fac.b)
    # a1 M1 n+ = n+' a1 M1 ; n- a2 = a2 n-'
    xp1 = lz.conjugate_horospherical(t1, m1, fac.xplus, +1)
    xm1 = lz.conjugate_horospherical(t2, np.eye(n - 1), fac.xminus, -1)
    # n+' a1 M1 b a2 n-' M2 u3  ~  a_{t1+s+t2} (m1 mb m2) (M2^-1 n-' M2) u3 n+'
    mtot = m1 @ mb @ m2
    xm2 = np.asarray(m2).T @ xm1
    u_final = lz.exp_n(xm2, -1) @ u3 @ lz.exp_n(xp1, +1)
    return absorb_perturbation(t1 + s + t2, mtot, u_final, policy=policy)


def eight_word_matrix(t1, u1, m1, v1, t2, u2, m2, v2) -> np.ndarray:
    n = np.asarray(u1).shape[0] - 1
    return (lz.flow(t1, n) @ u1 @ lz.m_embed(m1) @ v1 @ lz.flow(t2, n) @ u2 @ lz.m_embed(m2) @ v2)
