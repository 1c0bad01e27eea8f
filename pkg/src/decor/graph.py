"""Communication topologies, gossip weights and their spectral quantities."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    InvalidCollusionLevel,
    InvalidGraph,
    InvalidMixingMatrix,
    InvalidGrid,
    InvalidSize,
    ParseError,
    TooManySubsets,
    UndefinedHeterogeneity,
    UnknownTopology,
)

TOPOLOGIES = ("ring", "grid2d_torus", "complete", "star")
_ALIASES = {"grid": "grid2d_torus", "torus": "grid2d_torus", "full": "complete"}

DEFAULT_SUBSET_CAP = 10**6


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on vertices ``0..n-1``.

    Edges are stored canonically as ``(i, j)`` with ``i < j``.
    """

    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise InvalidSize(f"graph needs at least one vertex, got n={self.n}")
        canon = set()
        for e in self.edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise InvalidGraph(f"self-loop at vertex {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise InvalidGraph(f"edge {(i, j)} has an endpoint outside 0..{self.n - 1}")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(canon))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Graph":
        edges = list(edges)
        keys = [(min(i, j), max(i, j)) for i, j in edges]
        if len(set(keys)) != len(keys):
            raise InvalidGraph("duplicate edges")
        return cls(n, frozenset(keys))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_list(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self, i: int) -> list[int]:
        return sorted({j for e in self.edges if i in e for j in e if j != i})

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def incidence(self) -> np.ndarray:
        """Oriented incidence matrix, ``+1`` at the lower endpoint of each edge."""
        k = np.zeros((self.n, self.num_edges))
        for col, (i, j) in enumerate(self.edge_list()):
            k[i, col] = 1.0
            k[j, col] = -1.0
        return k

    def remove_vertices(self, removed: Iterable[int]) -> "Graph":
        """Induced subgraph on the remaining vertices, relabelled in order."""
        removed = set(removed)
        keep = [v for v in range(self.n) if v not in removed]
        relabel = {v: k for k, v in enumerate(keep)}
        edges = frozenset(
            (relabel[i], relabel[j]) for i, j in self.edges if i in relabel and j in relabel
        )
        return Graph(len(keep), edges)

    def components(self) -> list[tuple[int, ...]]:
        """Connected components as sorted vertex tuples, ordered by smallest vertex."""
        adj: dict[int, list[int]] = {v: [] for v in range(self.n)}
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen: set[int] = set()
        out = []
        for root in range(self.n):
            if root in seen:
                continue
            comp, stack = {root}, [root]
            while stack:
                for u in adj[stack.pop()]:
                    if u not in comp:
                        comp.add(u)
                        stack.append(u)
            seen |= comp
            out.append(tuple(sorted(comp)))
        return out

    def is_connected(self) -> bool:
        seen = {0}
        stack = [0]
        adj: dict[int, list[int]] = {v: [] for v in range(self.n)}
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        while stack:
            v = stack.pop()
            for u in adj[v]:
                if u not in seen:
                    seen.add(u)
                    stack.append(u)
        return len(seen) == self.n


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric doubly stochastic gossip weights."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InvalidMixingMatrix("mixing matrix must be square")
        if not np.array_equal(w, w.T):
            raise InvalidMixingMatrix("mixing matrix must be symmetric")
        if np.any(w < 0) or np.any(w > 1):
            raise InvalidMixingMatrix("mixing weights must lie in [0, 1]")
        if np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-12:
            raise InvalidMixingMatrix("mixing matrix rows must sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def check_support(self, g: Graph) -> None:
        if self.n != g.n:
            raise InvalidMixingMatrix(f"mixing matrix is {self.n}x{self.n} but graph has {g.n} vertices")
        allowed = g.adjacency() + np.eye(g.n)
        if np.any((self.w != 0) & (allowed == 0)):
            raise InvalidMixingMatrix("mixing matrix has weight on a non-edge")


@dataclass(frozen=True)
class SpectralSummary:
    algebraic_connectivity: float
    spectral_gap_p: float
    heterogeneity_hg: float
    laplacian_eigenvalues: tuple


def _most_square_factors(n: int) -> tuple[int, int]:
    for r in range(math.isqrt(n), 1, -1):
        if n % r == 0 and n // r >= 2:
            return r, n // r
    raise InvalidGrid(f"n={n} has no factorization r*c with r, c >= 2")


def build_topology(kind: str, n: int) -> Graph:
    """Build one of the named topologies on ``n`` vertices."""
    kind = _ALIASES.get(kind, kind)
    if kind not in TOPOLOGIES:
        raise UnknownTopology(f"unknown topology {kind!r}; expected one of {TOPOLOGIES}")
    if n < 1:
        raise InvalidSize(f"topology needs n >= 1, got {n}")
    edges: set[tuple[int, int]] = set()
    if kind == "ring":
        if n >= 2:
            for i in range(n):
                j = (i + 1) % n
                edges.add((min(i, j), max(i, j)))
    elif kind == "complete":
        edges = set(itertools.combinations(range(n), 2))
    elif kind == "star":
        edges = {(0, j) for j in range(1, n)}
    else:
        r, c = _most_square_factors(n)
        for a in range(r):
            for b in range(c):
                v = a * c + b
                for u in (((a + 1) % r) * c + b, a * c + (b + 1) % c):
                    if u != v:
                        edges.add((min(u, v), max(u, v)))
    return Graph(n, frozenset(edges))


def parse_topology(spec: str, n: int | None = None) -> Graph:
    """Resolve a topology string such as ``"ring:16"`` or an edge-list path.

    ``n`` fills in the size when the string carries none (``"ring"``).
    """
    if ":" in spec:
        kind, _, size = spec.partition(":")
        if kind in ("file", "edges"):
            return load_edge_list(size, n)
        try:
            size_n = int(size)
        except ValueError:
            raise InvalidSize(f"bad topology size in {spec!r}") from None
        if n is not None and n != size_n:
            raise InvalidSize(f"topology {spec!r} conflicts with n={n}")
        return build_topology(kind, size_n)
    if _ALIASES.get(spec, spec) in TOPOLOGIES:
        if n is None:
            raise InvalidSize(f"topology {spec!r} needs a size")
        return build_topology(spec, n)
    return load_edge_list(spec, n)


def load_edge_list(path: str | Path, n: int | None = None) -> Graph:
    """Read an ``i j`` per line edge list (0-indexed, ``#`` comments allowed)."""
    edges = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected two vertex ids, got {raw!r}", lineno)
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"non-integer vertex id in {raw!r}", lineno) from None
        if i < 0 or j < 0:
            raise ParseError("negative vertex id", lineno)
        edges.append((i, j))
    size = max((max(e) for e in edges), default=-1) + 1
    if n is not None:
        if n < size:
            raise InvalidSize(f"edge list references vertex {size - 1} but n={n}")
        size = n
    return Graph.from_edges(size, edges)


def laplacian(g: Graph) -> np.ndarray:
    """``D - A``, assembled with integer arithmetic so row sums are exactly zero."""
    lap = np.zeros((g.n, g.n), dtype=np.int64)
    for i, j in g.edges:
        lap[i, j] -= 1
        lap[j, i] -= 1
        lap[i, i] += 1
        lap[j, j] += 1
    return lap.astype(float)


def laplacian_eigenvalues(g: Graph) -> np.ndarray:
    return np.linalg.eigvalsh(laplacian(g))


def algebraic_connectivity(g: Graph) -> float:
    """Second-smallest Laplacian eigenvalue, clamped at zero."""
    if g.n < 2:
        raise InvalidSize("algebraic connectivity needs at least two vertices")
    lam = laplacian_eigenvalues(g)
    # eigensolver round-off around the zero eigenvalue
    tol = 1e-12 * g.n * max(1.0, float(lam[-1]))
    return float(lam[1]) if lam[1] > tol else 0.0


def deletion_subsets(n: int, q: int, cap: int = DEFAULT_SUBSET_CAP) -> Iterator[tuple[int, ...]]:
    """All size-``q`` vertex subsets, refusing to enumerate more than ``cap``."""
    if q < 0 or q >= n - 1:
        raise InvalidCollusionLevel(f"collusion level q={q} must satisfy 0 <= q <= n-2 = {n - 2}")
    count = math.comb(n, q)
    if count > cap:
        raise TooManySubsets(f"C({n},{q}) = {count} subsets exceeds the cap of {cap}")
    return itertools.combinations(range(n), q)


def min_connectivity_after_deletion(g: Graph, q: int, cap: int = DEFAULT_SUBSET_CAP) -> float:
    """Minimum algebraic connectivity over all induced subgraphs missing ``q`` vertices."""
    subsets = deletion_subsets(g.n, q, cap)
    if q == 0:
        return algebraic_connectivity(g)
    best = math.inf
    for removed in subsets:
        a = algebraic_connectivity(g.remove_vertices(removed))
        if a < best:
            best = a
            if best == 0.0:
                break
    return best


def metropolis_weights(g: Graph) -> MixingMatrix:
    """Metropolis-Hastings weights.

    On regular graphs every neighbour and the vertex itself get ``1/(deg+1)``.
    Otherwise off-diagonal weights are ``1/(1+max(deg_i, deg_j))`` and the
    diagonal takes the residual mass.
    """
    deg = g.degrees()
    n = g.n
    w = np.zeros((n, n))
    if n == 1 or np.all(deg == deg[0]):
        share = 1.0 / (deg[0] + 1)
        for i, j in g.edges:
            w[i, j] = w[j, i] = share
        np.fill_diagonal(w, share)
        return MixingMatrix(w)
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    for i in range(n):
        w[i, i] = 1.0 - (w[i].sum() - w[i, i])
    return MixingMatrix(w)


def uniform_weights(n: int) -> MixingMatrix:
    return MixingMatrix(np.full((n, n), 1.0 / n))


def spectral_gap(w: MixingMatrix) -> float:
    """``1 - lambda_2(W W^T)`` with ``lambda_2`` the second-largest eigenvalue."""
    m = np.asarray(w.w)
    if m.shape[0] == 1:
        return 1.0
    lam = np.linalg.eigvalsh(m @ m.T)
    return float(min(1.0, max(0.0, 1.0 - lam[-2])))


def weight_heterogeneity(g: Graph, w: MixingMatrix) -> float:
    """Edge-averaged squared distance between adjacent columns of ``W``.

    This is the fraction of correlated-noise energy that survives one gossip
    round.
    """
    if g.num_edges == 0:
        raise UndefinedHeterogeneity("heterogeneity is undefined on a graph with no edges")
    m = np.asarray(w.w)
    total = 0.0
    for i, j in g.edges:
        diff = m[:, i] - m[:, j]
        total += float(diff @ diff)
    # each unordered edge appears twice in the ordered double sum, numerator and denominator alike
    return total / (2.0 * g.num_edges)


def spectral_summary(g: Graph, w: MixingMatrix | None = None) -> SpectralSummary:
    w = metropolis_weights(g) if w is None else w
    lam = laplacian_eigenvalues(g)
    return SpectralSummary(
        algebraic_connectivity=algebraic_connectivity(g) if g.n >= 2 else 0.0,
        spectral_gap_p=spectral_gap(w),
        heterogeneity_hg=weight_heterogeneity(g, w) if g.num_edges else 0.0,
        laplacian_eigenvalues=tuple(float(x) for x in lam),
    )
