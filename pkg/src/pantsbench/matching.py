"""Foot atlases, the tau matching, Hall checks, Cheeger estimates and surface assembly."""
from __future__ import annotations

import itertools
import math
import sys
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import networkx as nx
import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from scipy import integrate

from . import lorentz as lz
from .errors import (
    DimensionTooSmall,
    InvolutionClash,
    MeshTooCoarse,
    NoInput,
    PreconditionError,
    UnmatchedBoundary,
)
from .footmeasure import DensityEstimate, cap_area, sphere_volume
from .geodesics import ModelClosedGeodesic, NormalFiberPoint, normalize_point, tau


# ---------------------------------------------------------------------------
# atlases

@dataclass
class AtlasEntry:
    pants_id: str
    orientation: int  # +1 or -1
    foot: NormalFiberPoint
    cuff: int = 0

    def to_json(self) -> dict:
        return {"pants_id": self.pants_id, "orientation": self.orientation, "cuff": self.cuff,
                "s": float(self.foot.s), "w": np.asarray(self.foot.w).tolist()}


@dataclass
class FootAtlas:
    gamma: ModelClosedGeodesic
    entries: list

    def __post_init__(self):
        tags: dict = {}
        for e in self.entries:
            if e.orientation not in (1, -1):
                raise PreconditionError("orientation must be +1 or -1")
            if tags.setdefault(e.pants_id, e.orientation) != e.orientation:
                raise PreconditionError(f"pants {e.pants_id} appears with both orientations")

    def __len__(self) -> int:
        return len(self.entries)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        pts = [normalize_point(self.gamma, e.foot) for e in self.entries]
        return np.array([p.s for p in pts]), np.array([p.w for p in pts])

    def to_jsonl(self) -> str:
        import json

        return "".join(json.dumps(e.to_json()) + "\n" for e in self.entries)

    @classmethod
    def from_records(cls, gamma: ModelClosedGeodesic, records: Sequence[dict]) -> "FootAtlas":
        if not records:
            raise NoInput("atlas has no entries")
        es = [AtlasEntry(str(r["pants_id"]), int(r.get("orientation", 1)),
                         NormalFiberPoint(float(r["s"]), np.asarray(r["w"], dtype=float)), int(r.get("cuff", 0)))
              for r in records]
        return cls(gamma, es)


def pairwise_n1_distance(gamma: ModelClosedGeodesic, s1, w1, s2, w2) -> np.ndarray:
    """Product-metric distances between normalised points, rows from the first set."""
    L = gamma.length
    best = np.full((len(s1), len(s2)), np.inf)
    for k in (-1, 0, 1):
        ds = s2[None, :] + k * L - s1[:, None]
        wk = w2 @ gamma.holonomy_power(-k).T if k else w2
        c = np.clip(w1 @ wk.T, -1.0, 1.0)
        ang = np.arccos(c)
        best = np.minimum(best, np.hypot(ds, ang))
    return best


def tau_arrays(gamma: ModelClosedGeodesic, s: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pts = [tau(gamma, NormalFiberPoint(a, b)) for a, b in zip(s, w)]
    return np.array([p.s for p in pts]), np.array([p.w for p in pts])


# ---------------------------------------------------------------------------
# synthetic atlases

@dataclass
class QuasiUniform:
    density: Optional[DensityEstimate] = None  # None means Lebesgue


@dataclass
class IceCap:
    imbalance: tuple = (3, 1)
    radius: float = 0.1
    center: Optional[np.ndarray] = None


@dataclass
class Bands:
    # (z_lo, z_hi, weight) along the last fibre axis
    profile: tuple = ((0.3, 0.6, 2.0), (-0.6, -0.3, 1.0))


def _uniform_cap(c: np.ndarray, r: float, k: int, rng) -> np.ndarray:
    m = c.shape[0]
    out = []
    while len(out) < k:
        w = lz.random_unit(m, rng)
        if lz.sphere_distance(w, c) < r:
            out.append(w)
    return np.array(out).reshape(k, m)


def _split_counts(N: int, weights: Sequence[float]) -> list:
    w = np.asarray(weights, dtype=float)
    raw = N * w / w.sum()
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts))[: N - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def synthesize_atlas(gamma: ModelClosedGeodesic, mode: Union[QuasiUniform, IceCap, Bands], N: int,
                     seed: int = 0) -> FootAtlas:
    """Synthetic feet for one closed geodesic.

    QuasiUniform draws iid feet from a density estimate by rejection
    against its maximum; IceCap puts the two counts of ``imbalance`` in
    antipodal caps; Bands distributes feet over latitude bands by weight.
    Arc positions are uniform in all modes.
    """
    if N <= 0:
        raise NoInput("atlas size must be positive")
    rng = np.random.default_rng(seed)
    m = gamma.fiber_dim
    L = gamma.length
    if isinstance(mode, QuasiUniform):
        s, w = [], []
        fmax = None if mode.density is None else float(mode.density.values.max())
        while len(s) < N:
            s0 = rng.uniform(0, L)
            w0 = lz.random_unit(m, rng)
            if fmax is None or rng.random() * fmax < float(mode.density.lookup(s0, w0)[0]):
                s.append(s0)
                w.append(w0)
        s, w = np.array(s), np.array(w)
    elif isinstance(mode, IceCap):
        if len(mode.imbalance) != 2:
            raise PreconditionError("imbalance needs two counts")
        c = np.eye(m)[-1] if mode.center is None else np.asarray(mode.center, dtype=float)
        n1, n2 = mode.imbalance
        if n1 + n2 != N:
            n1, n2 = _split_counts(N, mode.imbalance)
        w = np.vstack([_uniform_cap(c, mode.radius, n1, rng), _uniform_cap(-c, mode.radius, n2, rng)])
        s = rng.uniform(0, L, N)
    elif isinstance(mode, Bands):
        counts = _split_counts(N, [b[2] for b in mode.profile])
        w = []
        for (zlo, zhi, _), k in zip(mode.profile, counts):
            got = 0
            while got < k:
                x = lz.random_unit(m, rng)
                if zlo <= x[-1] < zhi:
                    w.append(x)
                    got += 1
        w = np.array(w)
        s = rng.uniform(0, L, N)
    else:
        raise PreconditionError("unknown atlas mode")
    entries = [AtlasEntry(f"P{i}", 1, NormalFiberPoint(float(a), b)) for i, (a, b) in enumerate(zip(s, w))]
    return FootAtlas(gamma, entries)


# ---------------------------------------------------------------------------
# bipartite matching

def tau_graph(atlas: FootAtlas, xi: float) -> list:
    """Adjacency lists: ``i -> j`` when ``d(p(j), tau(p(i))) < xi``."""
    s, w = atlas.arrays()
    ts, tw = tau_arrays(atlas.gamma, s, w)
    D = pairwise_n1_distance(atlas.gamma, ts, tw, s, w)
    return [np.flatnonzero(D[i] < xi).tolist() for i in range(len(s))], D


def hopcroft_karp(adj: Sequence[Sequence[int]], n_right: int) -> tuple[list, list]:
    """Maximum bipartite matching by layered augmenting paths.

    Returns ``(match_left, match_right)`` with -1 for unmatched vertices.
    """
    n_left = len(adj)
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 2 * n_left + 100))
    ml = [-1] * n_left
    mr = [-1] * n_right
    INF = math.inf
    while True:
        dist = [INF] * n_left
        q = deque()
        for u in range(n_left):
            if ml[u] == -1:
                dist[u] = 0
                q.append(u)
        found = False
        while q:
            u = q.popleft()
            for v in adj[u]:
                w = mr[v]
                if w == -1:
                    found = True
                elif dist[w] == INF:
                    dist[w] = dist[u] + 1
                    q.append(w)
        if not found:
            break

        def dfs(u: int) -> bool:
            for v in adj[u]:
                w = mr[v]
                if w == -1 or (dist[w] == dist[u] + 1 and dfs(w)):
                    ml[u], mr[v] = v, u
                    return True
            dist[u] = INF
            return False

        for u in range(n_left):
            if ml[u] == -1:
                dfs(u)
    return ml, mr


def konig_deficiency_set(adj: Sequence[Sequence[int]], ml: list, mr: list) -> tuple[list, list]:
    """Left vertices alternating-reachable from unmatched ones, and their neighbourhood.

    For a maximum matching this set has the largest Hall deficiency,
    equal to the number of unmatched left vertices.
    """
    seen_l = set(u for u in range(len(adj)) if ml[u] == -1)
    seen_r: set = set()
    q = deque(seen_l)
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in seen_r:
                seen_r.add(v)
                w = mr[v]
                if w != -1 and w not in seen_l:
                    seen_l.add(w)
                    q.append(w)
    return sorted(seen_l), sorted(seen_r)


@dataclass
class HallViolation:
    certificate: list  # entry indices A
    neighbourhood: list  # indices whose feet lie within xi of tau(A)

    @property
    def deficiency(self) -> int:
        return len(self.certificate) - len(self.neighbourhood)

    def to_json(self) -> dict:
        return {"certificate": self.certificate, "neighbourhood": self.neighbourhood,
                "deficiency": self.deficiency}


@dataclass
class MatchingResult:
    sigma: Optional[list]
    max_displacement: float
    violation: Optional[HallViolation] = None
    xi: float = 0.0

    @property
    def perfect(self) -> bool:
        return self.sigma is not None

    def to_json(self) -> dict:
        return {"perfect": self.perfect, "sigma": self.sigma, "max_displacement": self.max_displacement,
                "xi": self.xi, "violation": None if self.violation is None else self.violation.to_json()}


def find_matching(atlas: FootAtlas, xi: float) -> MatchingResult:
    """Permutation ``sigma`` with ``d(p(sigma(i)), tau(p(i))) < xi`` or a Hall violation."""
    if len(atlas) == 0:
        raise NoInput("atlas is empty")
    adj, D = tau_graph(atlas, xi)
    ml, mr = hopcroft_karp(adj, len(atlas))
    if all(v != -1 for v in ml):
        disp = max(float(D[i, ml[i]]) for i in range(len(ml)))
        return MatchingResult(list(ml), disp, None, xi)
    A, NA = konig_deficiency_set(adj, ml, mr)
    return MatchingResult(None, math.inf, HallViolation(A, NA), xi)


def verify_matching(atlas: FootAtlas, result: MatchingResult) -> bool:
    """Every pair is checked: bijection and displacement below ``xi``."""
    if result.sigma is None:
        return False
    n = len(atlas)
    if sorted(result.sigma) != list(range(n)):
        return False
    s, w = atlas.arrays()
    ts, tw = tau_arrays(atlas.gamma, s, w)
    D = pairwise_n1_distance(atlas.gamma, ts, tw, s, w)
    return all(D[i, result.sigma[i]] < result.xi for i in range(n))


def verify_violation(atlas: FootAtlas, xi: float, v: HallViolation) -> bool:
    """Recount ``|N_xi(tau A)| < |A|`` directly from distances."""
    s, w = atlas.arrays()
    ts, tw = tau_arrays(atlas.gamma, s, w)
    A = v.certificate
    D = pairwise_n1_distance(atlas.gamma, ts[A], tw[A], s, w)
    nbr = np.flatnonzero(np.any(D < xi, axis=0))
    return len(nbr) < len(A)


def max_flow_matching_size(adj: Sequence[Sequence[int]], n_right: int) -> int:
    """Matching number via max-flow, independent of the augmenting-path code."""
    G = nx.DiGraph()
    for u, nb in enumerate(adj):
        G.add_edge("src", ("L", u), capacity=1)
        for v in nb:
            G.add_edge(("L", u), ("R", v), capacity=1)
    for v in range(n_right):
        G.add_edge(("R", v), "snk", capacity=1)
    if "src" not in G:
        return 0
    return int(nx.maximum_flow_value(G, "src", "snk"))


def brute_force_max_deficiency(adj: Sequence[Sequence[int]]) -> tuple[int, list]:
    """Largest ``|A| - |N(A)|`` over all subsets; only for tiny graphs."""
    n = len(adj)
    best, arg = 0, []
    for r in range(1, n + 1):
        for A in itertools.combinations(range(n), r):
            NA = set().union(*(adj[u] for u in A))
            d = len(A) - len(NA)
            if d > best:
                best, arg = d, list(A)
    return best, arg


def bottleneck_xi(atlas: FootAtlas) -> float:
    """Smallest ``xi`` admitting a perfect matching (binary search over pair distances)."""
    s, w = atlas.arrays()
    ts, tw = tau_arrays(atlas.gamma, s, w)
    D = pairwise_n1_distance(atlas.gamma, ts, tw, s, w)
    vals = np.unique(D)
    lo, hi = 0, len(vals) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        adj = [np.flatnonzero(D[i] <= vals[mid]).tolist() for i in range(len(s))]
        ml, _ = hopcroft_karp(adj, len(s))
        if all(v != -1 for v in ml):
            hi = mid
        else:
            lo = mid + 1
    return float(vals[lo])


# ---------------------------------------------------------------------------
# Hall checks over test families

@dataclass
class FiberSet:
    """Points whose fibre vector makes an angle in ``[r0, r1)`` with ``center``; arc range ``[s0, s1)``."""

    center: np.ndarray
    r0: float
    r1: float
    s0: float = 0.0
    s1: float = math.inf
    label: str = ""

    def contains(self, s: np.ndarray, w: np.ndarray, L: float) -> np.ndarray:
        return self.distance(s, w, L) == 0.0

    def distance(self, s: np.ndarray, w: np.ndarray, L: float) -> np.ndarray:
        """Product-metric distance to the set, read in normalised coordinates."""
        ang = np.arccos(np.clip(w @ self.center, -1, 1))
        dang = np.maximum(0.0, np.maximum(self.r0 - ang, ang - self.r1))
        if self.s1 - self.s0 >= L:
            return dang
        width = self.s1 - self.s0
        off = (s - self.s0) % L
        ds = np.where(off < width, 0.0, np.minimum(off - width, L - off))
        return np.hypot(ds, dang)


def default_test_family(gamma: ModelClosedGeodesic, seed: int = 0, count: int = 40) -> list:
    """Caps, latitude bands about each axis, and random unions of cells."""
    m = gamma.fiber_dim
    rng = np.random.default_rng(seed)
    fam = [FiberSet(np.eye(m)[0], 0.0, math.pi + 1, label="all")]
    for ax in range(m):
        c = np.eye(m)[ax]
        for r in (0.2, 0.5, 1.0, 1.5):
            fam.append(FiberSet(c, 0.0, r, label=f"cap{ax}:{r}"))
            fam.append(FiberSet(-c, 0.0, r, label=f"cap-{ax}:{r}"))
        edges = np.arccos(np.linspace(1, -1, 9))
        for a, b in zip(edges[:-1], edges[1:]):
            fam.append(FiberSet(c, float(a), float(b), label=f"band{ax}:{a:.2f}"))
    for i in range(count):
        c = lz.random_unit(m, rng)
        s0 = rng.uniform(0, gamma.length)
        fam.append(FiberSet(c, 0.0, float(rng.uniform(0.1, 1.5)), s0, s0 + rng.uniform(1, gamma.length),
                            label=f"rand{i}"))
    return fam


def hall_check(atlas: FootAtlas, xi: float, family: Optional[Sequence[FiberSet]] = None) -> dict:
    """``nu(N_xi(tau A)) >= nu(A)`` on each test region, plus the exact min-cut verdict.

    ``d(y, tau A) = d(tau^{-1} y, A)`` since ``tau`` is an isometry, so the
    neighbourhood count only needs distances to ``A`` itself.  A violating
    region yields a genuine Hall violator (its feet), so the family can only
    under-report violations.
    """
    adj, _ = tau_graph(atlas, xi)
    n = len(atlas)
    if family is None:
        family = default_test_family(atlas.gamma)
    gamma = atlas.gamma
    L = gamma.length
    s, w = atlas.arrays()
    back = [normalize_point(gamma, NormalFiberPoint(a - 1.0, -b)) for a, b in zip(s, w)]
    bs = np.array([p.s for p in back])
    bw = np.array([p.w for p in back])
    rows = []
    worst = math.inf
    for F in family:
        nu_a = int(np.sum(F.contains(s, w, L)))
        if nu_a == 0:
            continue
        nu_n = int(np.sum(F.distance(bs, bw, L) < xi))
        margin = nu_n - nu_a
        worst = min(worst, margin)
        rows.append({"label": F.label, "nu_A": nu_a, "nu_N_tauA": nu_n, "margin": margin})
    exact = max_flow_matching_size(adj, n)
    family_violation = any(r["margin"] < 0 for r in rows)
    return {"xi": xi, "sets": rows, "worst_margin": worst, "family_violation": family_violation,
            "exact_violation": exact < n, "matching_number": exact,
            "agree": family_violation == (exact < n)}


# ---------------------------------------------------------------------------
# Cheeger constants of sphere bundles over circles

@dataclass
class BundleMesh:
    """Cells = s-bins x fibre cells, with face areas and centre distances."""

    L: float
    ds: float
    fiber_centers: np.ndarray
    fiber_areas: np.ndarray
    fiber_faces: dict  # (i, j) -> (shared boundary measure, centre distance)
    gluing: np.ndarray  # fibre cell of s-bin 0 adjacent to each cell of the last bin
    ns: int

    @property
    def size(self) -> int:
        return self.ns * len(self.fiber_areas)

    def volumes(self) -> np.ndarray:
        return np.tile(self.fiber_areas * self.ds, self.ns)

    def index(self, i_s: int, j: int) -> int:
        return i_s * len(self.fiber_areas) + j

    def edges(self):
        """Yield ``(a, b, face, dist)`` for every adjacent pair of cells."""
        nf = len(self.fiber_areas)
        for i in range(self.ns):
            for (a, b), (face, dist) in self.fiber_faces.items():
                yield self.index(i, a), self.index(i, b), face * self.ds, dist
            for j in range(nf):
                if i + 1 < self.ns:
                    yield self.index(i, j), self.index(i + 1, j), self.fiber_areas[j], self.ds
                else:
                    yield self.index(i, j), self.index(0, int(self.gluing[j])), self.fiber_areas[j], self.ds


def _fiber_grid(m: int, cells: tuple):
    """Fibre cells with shared boundary measures; circles for m = 2, lat-long for m = 3."""
    if m == 2:
        k = int(np.prod(cells))
        th = (np.arange(k) + 0.5) * 2 * math.pi / k
        centers = np.stack([np.cos(th), np.sin(th)], 1)
        faces = {(j, (j + 1) % k): (1.0, 2 * math.pi / k) for j in range(k)}
        return centers, np.full(k, 2 * math.pi / k), faces
    if m == 3:
        nb, ns = cells
        zb = 1.0 - np.arange(nb + 1) * 2.0 / nb  # equal-area band edges
        tb = np.arccos(zb)
        tc = np.arccos(0.5 * (zb[:-1] + zb[1:]))
        ph = (np.arange(ns) + 0.5) * 2 * math.pi / ns
        centers, faces = [], {}
        for i in range(nb):
            for j in range(ns):
                centers.append([math.sin(tc[i]) * math.cos(ph[j]), math.sin(tc[i]) * math.sin(ph[j]), math.cos(tc[i])])
        for i in range(nb):
            for j in range(ns):
                a = i * ns + j
                if ns > 1:
                    b = i * ns + (j + 1) % ns
                    if (b, a) not in faces and a != b:
                        faces[(a, b)] = (float(tb[i + 1] - tb[i]), math.sin(tc[i]) * 2 * math.pi / ns)
                if i + 1 < nb:
                    b = (i + 1) * ns + j
                    faces[(a, b)] = (math.sin(tb[i + 1]) * 2 * math.pi / ns, float(tc[i + 1] - tc[i]))
        return np.array(centers), np.full(nb * ns, 4 * math.pi / (nb * ns)), faces
    raise DimensionTooSmall("Cheeger meshes are implemented for n = 3 and n = 4")


def bundle_mesh(gamma: ModelClosedGeodesic, fiber_cells: tuple = (4, 8), ds: Optional[float] = None) -> BundleMesh:
    L = gamma.length
    if ds is None:
        ds = min(0.1, L / 64)
    ns = max(2, int(round(L / ds)))
    ds = L / ns
    centers, areas, faces = _fiber_grid(gamma.fiber_dim, fiber_cells)
    glued = centers @ gamma.holonomy.T
    gluing = np.argmax(glued @ centers.T, axis=1)
    return BundleMesh(L, ds, centers, areas, faces, gluing, ns)


def cut_ratio(mesh: BundleMesh, inside: np.ndarray) -> float:
    """Boundary measure over volume of a union of cells (the smaller side)."""
    vol = mesh.volumes()
    va = float(vol[inside].sum())
    vb = float(vol.sum()) - va
    if va <= 0 or vb <= 0:
        return math.inf
    cut = sum(face for a, b, face, _ in mesh.edges() if inside[a] != inside[b])
    return cut / min(va, vb)


def _sweep(mesh: BundleMesh, order: np.ndarray, edges) -> tuple[float, int]:
    """Best ratio over prefixes of ``order``, updating the cut incrementally."""
    n = mesh.size
    vol = mesh.volumes()
    total = vol.sum()
    nbrs: list = [[] for _ in range(n)]
    for a, b, face, _ in edges:
        nbrs[a].append((b, face))
        nbrs[b].append((a, face))
    inside = np.zeros(n, bool)
    cut = va = 0.0
    best, arg = math.inf, 0
    for k, c in enumerate(order[:-1]):
        for d, face in nbrs[c]:
            cut += -face if inside[d] else face
        inside[c] = True
        va += vol[c]
        r = cut / min(va, total - va)
        if r < best:
            best, arg = r, k + 1
    return best, arg


def spectral_order(mesh: BundleMesh, edges) -> np.ndarray:
    """Cells ordered by the first nontrivial eigenvector of the volume-weighted Laplacian."""
    n = mesh.size
    rows, cols, vals = [], [], []
    for a, b, face, dist in edges:
        wgt = face / dist
        rows += [a, b, a, b]
        cols += [b, a, a, b]
        vals += [-wgt, -wgt, wgt, wgt]
    Lap = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    Dm = scipy.sparse.diags(1.0 / np.sqrt(mesh.volumes()))
    S = Dm @ Lap @ Dm
    vals_, vecs = scipy.sparse.linalg.eigsh(S, k=2, sigma=-1e-6, which="LM")
    f = Dm @ vecs[:, np.argsort(vals_)[1]]
    return np.argsort(f)


@dataclass
class CheegerReport:
    estimate: float
    fiber_sweep: float
    arc_sweep: float
    spectral_sweep: float
    half_space: float
    refined_estimate: Optional[float]
    bound: float
    passes: bool
    growth: Optional[dict] = None

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def cheeger_estimate(mesh: BundleMesh) -> dict:
    edges = list(mesh.edges())
    nf = len(mesh.fiber_areas)
    # fibre-coordinate sweeps: along the arc, and along each fibre axis
    arc_order = np.arange(mesh.size)
    arc = _sweep(mesh, arc_order, edges)[0]
    fib = math.inf
    for ax in range(mesh.fiber_centers.shape[1]):
        key = np.tile(mesh.fiber_centers[:, ax], mesh.ns)
        fib = min(fib, _sweep(mesh, np.argsort(key, kind="stable"), edges)[0])
    spec = _sweep(mesh, spectral_order(mesh, edges), edges)[0]
    half = np.zeros(mesh.size, bool)
    half[: (mesh.ns // 2) * nf] = True
    return {"arc": arc, "fiber": fib, "spectral": spec, "half_space": cut_ratio(mesh, half),
            "estimate": min(arc, fib, spec)}


def cheeger_bundle_bound(gamma: ModelClosedGeodesic, R: float, fiber_cells: tuple = (4, 8),
                         ds: Optional[float] = None, refine: bool = True, tol: float = 0.10) -> CheegerReport:
    """Sweep-cut estimate of the Cheeger constant of the unit normal bundle, checked against ``1/(4R)``."""
    if gamma.length > 3 * R:
        raise PreconditionError("expects l(gamma) <= 3R")
    mesh = bundle_mesh(gamma, fiber_cells, ds)
    est = cheeger_estimate(mesh)
    refined = None
    if refine:
        fc = tuple(2 * c for c in fiber_cells) if gamma.fiber_dim == 3 else (2 * int(np.prod(fiber_cells)),)
        fine = bundle_mesh(gamma, fc, mesh.ds / 2)
        refined = cheeger_estimate(fine)["estimate"]
        if abs(refined - est["estimate"]) > tol * est["estimate"]:
            raise MeshTooCoarse(f"estimate moved from {est['estimate']:.4g} to {refined:.4g} under refinement")
    bound = 1.0 / (4 * R)
    return CheegerReport(est["estimate"], est["fiber"], est["arc"], est["spectral"], est["half_space"], refined,
                         bound, est["estimate"] >= bound)


# neighbourhood growth on product sets, with exact volumes

@dataclass
class ProductSet:
    """``{s in [s0, s0 + length), angle(w, c) in [r0, r1]}`` in a product bundle."""

    length: float
    r0: float
    r1: float

    def volume(self, m: int) -> float:
        return self.length * _ring_area(m - 1, self.r0, self.r1)

    def neighbourhood_volume(self, m: int, eta: float, L: float) -> float:
        """Exact volume of the metric ``eta``-neighbourhood for the product metric."""
        d = m - 1

        def ring(h):
            return _ring_area(d, max(0.0, self.r0 - h) if self.r0 > 0 else 0.0, min(math.pi, self.r1 + h))

        if self.length + 2 * eta >= L:
            return L * ring(eta)
        side = integrate.quad(lambda t: ring(math.sqrt(max(eta * eta - t * t, 0.0))), 0, eta, limit=200)[0]
        return self.length * ring(eta) + 2 * side


def _ring_area(d: int, r0: float, r1: float) -> float:
    return cap_area(d, r1) - cap_area(d, r0)


def growth_inequality_check(gamma: ModelClosedGeodesic, h: float, eta: float = 0.5, count: int = 100,
                            seed: int = 0) -> dict:
    """``|N_eta(A)| >= (1 + eta h) |A|`` on random caps and bands crossed with arcs, ``|A| <= |M|/2``."""
    if np.max(np.abs(gamma.holonomy - np.eye(gamma.fiber_dim))) > 1e-12:
        raise PreconditionError("exact neighbourhood volumes assume trivial holonomy")
    m = gamma.fiber_dim
    L = gamma.length
    total = L * sphere_volume(m - 1)
    rng = np.random.default_rng(seed)
    worst = math.inf
    fails = 0
    done = 0
    while done < count:
        length = rng.uniform(0.2, L)
        if rng.random() < 0.5:
            A = ProductSet(length, 0.0, rng.uniform(0.05, math.pi))
        else:
            r0 = rng.uniform(0.05, math.pi - 0.1)
            A = ProductSet(length, r0, rng.uniform(r0 + 0.02, math.pi))
        va = A.volume(m)
        if va > total / 2:
            continue
        done += 1
        ratio = A.neighbourhood_volume(m, eta, L) / va
        worst = min(worst, ratio)
        fails += ratio < 1 + eta * h
    return {"eta": eta, "h": h, "sets": count, "failures": fails, "worst_ratio": worst,
            "required": 1 + eta * h}


# ---------------------------------------------------------------------------
# doubling and assembly

@dataclass
class SurfaceAssembly:
    graph: nx.MultiGraph
    involution: dict
    components: list
    euler: list
    genus: list

    @property
    def chi(self) -> int:
        return int(sum(self.euler))

    def degrees(self) -> dict:
        return dict(self.graph.degree())

    def to_json(self) -> dict:
        return {"nodes": self.graph.number_of_nodes(), "edges": self.graph.number_of_edges(),
                "components": [sorted(map(str, c)) for c in self.components], "euler": self.euler,
                "genus": self.genus, "chi": self.chi}


def double_and_assemble(matchings: dict, corpus: dict) -> SurfaceAssembly:
    """Glue two oriented copies of every pants along the per-curve permutations.

    ``matchings`` maps a curve id to ``(entries, sigma)`` where ``entries``
    lists ``(pants_id, cuff)`` boundary labels and ``sigma`` is a
    permutation of their indices.  ``corpus`` maps pants ids to their three
    curve ids.  The involution is ``(a, +) -> (sigma(a), -)`` and
    ``(a, -) -> (sigma^{-1}(a), +)``.
    """
    if not corpus:
        raise NoInput("empty pants corpus")
    owner: dict = {}
    tau_star: dict = {}
    for curve, (entries, sigma) in matchings.items():
        entries = [tuple(e) for e in entries]
        if sorted(sigma) != list(range(len(entries))):
            raise InvolutionClash(f"matching on {curve} is not a permutation")
        for e in entries:
            if e in owner:
                raise InvolutionClash(f"boundary {e} appears in two atlases")
            owner[e] = curve
        for i, j in enumerate(sigma):
            a, b = entries[i], entries[j]
            for key, val in (((a, 1), (b, -1)), ((b, -1), (a, 1))):
                if key in tau_star and tau_star[key] != val:
                    raise InvolutionClash(f"boundary {key} glued twice")
                tau_star[key] = val
    for pid, curves in corpus.items():
        for cuff in range(len(curves)):
            if (pid, cuff) not in owner:
                raise UnmatchedBoundary(f"cuff {cuff} of pants {pid} has no matching")
    for key, val in tau_star.items():
        if val == key or tau_star.get(val) != key:
            raise InvolutionClash(f"tau* is not a fixed-point-free involution at {key}")
    G = nx.MultiGraph()
    for pid in corpus:
        G.add_node((pid, 1))
        G.add_node((pid, -1))
    for (lab, sgn), (lab2, sgn2) in tau_star.items():
        if sgn == 1:
            G.add_edge((lab[0], 1), (lab2[0], -1), cuffs=(lab[1], lab2[1]))
    comps = [set(c) for c in nx.connected_components(G)]
    # pants have Euler characteristic -1 and circles 0
    euler = [-len(c) for c in comps]
    genus = [1 - e // 2 for e in euler]
    return SurfaceAssembly(G, tau_star, comps, euler, genus)


def self_matched_pants(pid: str = "P0") -> tuple[dict, dict]:
    """One pants whose three cuffs each carry a singleton atlas matched to itself."""
    corpus = {pid: [f"{pid}-c{i}" for i in range(3)]}
    matchings = {f"{pid}-c{i}": ([(pid, i)], [0]) for i in range(3)}
    return matchings, corpus


def random_corpus(n_pants: int, n_curves: int, seed: int = 0) -> tuple[dict, dict]:
    """Pants whose cuffs land on shared curves, with random permutations on each curve."""
    rng = np.random.default_rng(seed)
    corpus = {f"P{i}": [f"g{int(rng.integers(n_curves))}" for _ in range(3)] for i in range(n_pants)}
    by_curve: dict = {}
    for pid, curves in corpus.items():
        for cuff, c in enumerate(curves):
            by_curve.setdefault(c, []).append((pid, cuff))
    matchings = {c: (es, rng.permutation(len(es)).tolist()) for c, es in by_curve.items()}
    return matchings, corpus


# ---------------------------------------------------------------------------
# well-matched pairs

def well_matched_check(gamma: ModelClosedGeodesic, foot1: NormalFiberPoint, orient1: int,
                       foot2: NormalFiberPoint, orient2: int, sigma_bound: float, R: float,
                       K: float = 0.0, short1: Optional[NormalFiberPoint] = None,
                       short2: Optional[NormalFiberPoint] = None) -> dict:
    """Definition-level check that two pants are ``sigma_bound``-well-matched along ``gamma``.

    Also checks the well-attached conditions with ``sigma' = sigma_bound +
    2 K e^{-R}``, where ``K`` bounds the drift between average and short
    feet.  With short feet given, the oriented distance and the fibre angle
    between them are measured directly.
    """
    from .geodesics import n1_distance

    opposite = orient1 == -orient2
    disp = n1_distance(gamma, foot2, tau(gamma, foot1))
    matched = opposite and disp < sigma_bound
    sp = sigma_bound + 2 * K * math.exp(-R)
    out = {"opposite": opposite, "displacement": disp, "well_matched": matched, "sigma_prime": sp,
           "well_attached_bound": R ** -1.5, "well_attached": matched and sp <= R ** -1.5}
    if short1 is not None and short2 is not None:
        a = normalize_point(gamma, short1)
        b = normalize_point(gamma, short2)
        sb = b.s if b.s >= a.s else b.s + gamma.length
        wb = b.w if sb == b.s else gamma.holonomy_power(-1) @ b.w
        dist = sb - a.s
        ang = lz.sphere_distance(a.w, -wb)
        out.update({"short_distance": dist, "short_angle": ang,
                    "well_attached": opposite and abs(dist - 1) <= sp and ang <= sp})
    return out
