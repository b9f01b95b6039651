"""Graphs, incidence matrices, Laplacians and demand sampling.

Edges are oriented tail -> head in list order; the incidence column of edge j
carries -1/sqrt(r_j) at the tail and +1/sqrt(r_j) at the head.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PRNG_NAME = "numpy.random.PCG64"

RESISTANCE_LOG_RANGE = (-2.0, 2.0)
CSL_SKIPS = (2, 4, 6, 8)


class GraphError(ValueError):
    """Raised when a graph violates one of its invariants."""


@dataclass(frozen=True)
class Graph:
    n: int
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(t), int(h), float(r)) for t, h, r in self.edges))
        validate_graph(self)

    @property
    def d(self) -> int:
        return len(self.edges)

    def permuted(self, perm) -> "Graph":
        """Graph whose j-th edge is edge ``perm[j]`` of this one."""
        return Graph(self.n, tuple(self.edges[p] for p in perm))

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [[t, h, r] for t, h, r in self.edges]}

    @classmethod
    def from_dict(cls, data: dict) -> "Graph":
        if "n" not in data or "edges" not in data:
            raise GraphError("graph JSON needs keys 'n' and 'edges'")
        edges = []
        for j, e in enumerate(data["edges"]):
            if len(e) != 3:
                raise GraphError(f"edge {j}: expected [tail, head, resistance], got {e!r}")
            edges.append((e[0], e[1], e[2]))
        return cls(int(data["n"]), tuple(edges))


def validate_graph(g: Graph) -> None:
    if g.n < 1:
        raise GraphError(f"vertex count must be positive, got {g.n}")
    for j, (t, h, r) in enumerate(g.edges):
        if not (0 <= t < g.n and 0 <= h < g.n):
            raise GraphError(f"edge {j}: endpoint out of range [0, {g.n})")
        if t == h:
            raise GraphError(f"edge {j}: self-loop at vertex {t}")
        if not (r > 0 and np.isfinite(r)):
            raise GraphError(f"edge {j}: resistance must be positive and finite, got {r}")


def is_connected(g: Graph) -> bool:
    adj = [[] for _ in range(g.n)]
    for t, h, _ in g.edges:
        adj[t].append(h)
        adj[h].append(t)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == g.n


def require_connected(g: Graph) -> None:
    if not is_connected(g):
        raise GraphError("graph is not connected")


def load_graph(path) -> Graph:
    with open(path) as fh:
        return Graph.from_dict(json.load(fh))


def save_graph(g: Graph, path) -> None:
    Path(path).write_text(json.dumps(g.to_dict()) + "\n")


def build_incidence(g: Graph) -> np.ndarray:
    """Resistance-scaled incidence matrix B of shape (n, d)."""
    B = np.zeros((g.n, g.d))
    for j, (t, h, r) in enumerate(g.edges):
        w = 1.0 / np.sqrt(r)
        B[t, j] = -w
        B[h, j] = w
    return B


def laplacian(B: np.ndarray) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.ndim != 2:
        raise ValueError(f"incidence matrix must be 2-D, got shape {B.shape}")
    return B @ B.T


def centering(n: int) -> np.ndarray:
    """I - 11^T/n, the projector onto the complement of the constant vector."""
    return np.eye(n) - np.full((n, n), 1.0 / n)


def _resistances(rng: np.random.Generator, d: int) -> np.ndarray:
    lo, hi = RESISTANCE_LOG_RANGE
    return np.exp(rng.uniform(lo, hi, size=d))


def generate_fc(n: int, seed: int) -> Graph:
    """Complete graph with resistances exp(U[-2, 2])."""
    if n < 2:
        raise GraphError(f"fully connected graph needs n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    r = _resistances(rng, len(pairs))
    return Graph(n, tuple((i, j, float(rj)) for (i, j), rj in zip(pairs, r)))


def generate_csl(n: int, skip: int, seed: int) -> Graph:
    """Cycle plus chords (i, i + skip mod n); repeated vertex pairs are dropped."""
    if n < 5:
        raise GraphError(f"CSL graph needs n >= 5, got {n}")
    if not 1 <= skip < n:
        raise GraphError(f"skip must satisfy 1 <= skip < n, got skip={skip}, n={n}")
    pairs, seen = [], set()
    for step in (1, skip):
        for i in range(n):
            j = (i + step) % n
            key = frozenset((i, j))
            if i != j and key not in seen:
                seen.add(key)
                pairs.append((i, j))
    rng = np.random.default_rng(seed)
    r = _resistances(rng, len(pairs))
    return Graph(n, tuple((i, j, float(rj)) for (i, j), rj in zip(pairs, r)))


def random_csl(n: int, seed: int) -> Graph:
    """CSL graph with skip drawn uniformly from {2, 4, 6, 8} (restricted to skip < n)."""
    skips = [s for s in CSL_SKIPS if s < n]
    rng = np.random.default_rng([seed, 1])
    return generate_csl(n, int(rng.choice(skips)), seed)


@dataclass(frozen=True)
class DemandSet:
    psi: np.ndarray
    projected: bool = field(default=False)

    @property
    def k(self) -> int:
        return self.psi.shape[1]

    def column_norms(self) -> np.ndarray:
        return np.linalg.norm(self.psi, axis=0)


def sample_demands(n: int, k: int, project: bool, seed: int, max_retries: int = 100) -> DemandSet:
    """k demands drawn uniformly from the unit sphere in R^n.

    With ``project`` each column is projected onto the complement of the
    constant vector and renormalised.
    """
    if k < 1:
        raise ValueError(f"need at least one demand, got k={k}")
    rng = np.random.default_rng(seed)
    cols = []
    for _ in range(k):
        for _attempt in range(max_retries):
            v = rng.standard_normal(n)
            if project:
                v = v - v.mean()
            norm = np.linalg.norm(v)
            if norm >= 1e-12:
                cols.append(v / norm)
                break
        else:
            raise RuntimeError(f"degenerate demand draw after {max_retries} retries")
    return DemandSet(np.column_stack(cols), projected=project)


def identity_demands(n: int) -> DemandSet:
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    return DemandSet(centering(n), projected=True)
