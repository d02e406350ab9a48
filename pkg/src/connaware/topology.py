"""Time-varying directed cluster graphs.

Each round, every cluster gets a fresh digraph: a ``k``-regular circulant under
a seeded vertex relabeling, followed by random link failures. Only per-cluster
blocks of the network's equal-neighbor matrix are ever built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .rng import Domain, stream


class ConfigError(ValueError):
    """Invalid topology or experiment configuration."""


class GraphInvariantError(ValueError):
    """A digraph violates a structural requirement (self-loop, foreign endpoint, sink)."""


class EdgeListFormatError(ValueError):
    pass


# sub-stream counters under (seed, TOPOLOGY, round, cluster)
_K_DRAW, _RELABEL, _DELETE = 0, 1, 2


@dataclass(frozen=True)
class ClusterDigraph:
    cluster_id: int
    round: int
    vertices: tuple[int, ...]
    edges: frozenset[tuple[int, int]]
    # edges requested for deletion that could not be removed without breaking a guard
    deletion_shortfall: int = field(default=0, compare=False)

    def __post_init__(self):
        vs = set(self.vertices)
        if len(vs) != len(self.vertices):
            raise GraphInvariantError("duplicate vertex ids")
        for i, j in self.edges:
            if i == j:
                raise GraphInvariantError(f"self-loop at vertex {i}")
            if i not in vs or j not in vs:
                raise GraphInvariantError(f"edge {i}->{j} leaves cluster {self.cluster_id}")

    @property
    def n(self) -> int:
        return len(self.vertices)

    @cached_property
    def local_index(self) -> dict[int, int]:
        return {v: idx for idx, v in enumerate(self.vertices)}

    @cached_property
    def local_edges(self) -> np.ndarray:
        """``(|E|, 2)`` array of (source, target) local indices, sorted."""
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        li = self.local_index
        return np.array(sorted((li[i], li[j]) for i, j in self.edges), dtype=np.int64)

    @cached_property
    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.local_edges[:, 0], minlength=self.n)

    @cached_property
    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.local_edges[:, 1], minlength=self.n)

    @property
    def is_balanced(self) -> bool:
        return bool(np.array_equal(self.out_degrees, self.in_degrees))

    def is_strongly_connected(self) -> bool:
        e = self.local_edges
        adj = csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(self.n, self.n))
        ncomp, _ = connected_components(adj, directed=True, connection="strong")
        return ncomp == 1

    def validate(self) -> None:
        """Raise unless every vertex has at least one out-neighbor."""
        sinks = np.flatnonzero(self.out_degrees == 0)
        if sinks.size:
            bad = [self.vertices[s] for s in sinks]
            raise GraphInvariantError(f"vertices with out-degree 0: {bad}")


@dataclass(frozen=True)
class DegreeSummary:
    n_l: int
    d_out_min: int
    d_out_max: int
    d_in_max: int
    alpha: float
    eps: float
    varphi: float
    alpha_minus: float
    eps_net: float
    balanced: bool


@dataclass(frozen=True)
class TopologyConfig:
    n: int = 70
    c: int = 7
    cluster_sizes: tuple[int, ...] = (10,) * 7
    k_range: tuple[int, int] = (6, 9)
    p_fail: float = 0.1
    seed: int = 0
    balanced_mode: bool = False

    def __post_init__(self):
        object.__setattr__(self, "cluster_sizes", tuple(int(s) for s in self.cluster_sizes))
        object.__setattr__(self, "k_range", tuple(int(k) for k in self.k_range))
        if len(self.cluster_sizes) != self.c:
            raise ConfigError(f"expected {self.c} cluster sizes, got {len(self.cluster_sizes)}")
        if sum(self.cluster_sizes) != self.n:
            raise ConfigError(f"cluster sizes sum to {sum(self.cluster_sizes)}, not n={self.n}")
        lo, hi = self.k_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad k_range {self.k_range}")
        if hi >= min(self.cluster_sizes):
            raise ConfigError(
                f"k_range upper bound {hi} must be below the smallest cluster size "
                f"{min(self.cluster_sizes)}"
            )
        if not 0.0 <= self.p_fail < 1.0:
            raise ConfigError(f"p_fail must lie in [0, 1), got {self.p_fail}")

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for s in self.cluster_sizes:
            out.append(acc)
            acc += s
        return tuple(out)

    def cluster_vertices(self, cluster_id: int) -> tuple[int, ...]:
        off = self.offsets[cluster_id]
        return tuple(range(off, off + self.cluster_sizes[cluster_id]))


def generate_regular_cluster(cfg: TopologyConfig, cluster_id: int, round: int, k: int) -> ClusterDigraph:
    """Relabeled circulant digraph ``i -> i+1, ..., i+k (mod n_l)``."""
    verts = cfg.cluster_vertices(cluster_id)
    n_l = len(verts)
    if not 1 <= k <= n_l - 1:
        raise ConfigError(f"k={k} outside [1, {n_l - 1}] for cluster {cluster_id}")
    perm = stream(cfg.seed, Domain.TOPOLOGY, round, cluster_id, _RELABEL).permutation(n_l)
    label = [verts[p] for p in perm]
    edges = frozenset(
        (label[i], label[(i + s) % n_l]) for i in range(n_l) for s in range(1, k + 1)
    )
    return ClusterDigraph(cluster_id, round, verts, edges)


def deletion_count(p_fail: float, n_edges: int) -> int:
    # tolerance guards against 0.29*100 -> 28.999...
    return int(math.floor(p_fail * n_edges + 1e-9))


def delete_edges(
    g: ClusterDigraph,
    p_fail: float,
    rng: np.random.Generator,
    balanced: bool = False,
) -> ClusterDigraph:
    """Remove ``floor(p_fail * |E|)`` edges uniformly without replacement.

    No removal may leave a vertex without out-neighbors; blocked edges are
    skipped and the remaining count is drawn from the still-eligible edges.
    With ``balanced=True`` edges are removed as whole simple directed cycles so
    every vertex keeps in-degree equal to out-degree. Any edges that cannot be
    removed are recorded in ``deletion_shortfall`` rather than raised.
    """
    if not 0.0 <= p_fail < 1.0:
        raise ConfigError(f"p_fail must lie in [0, 1), got {p_fail}")
    target = deletion_count(p_fail, len(g.edges))
    if target == 0:
        return g
    if balanced:
        removed = _delete_cycles(g, target, rng)
    else:
        removed = _delete_uniform(g, target, rng)
    return ClusterDigraph(
        g.cluster_id,
        g.round,
        g.vertices,
        g.edges - removed,
        deletion_shortfall=target - len(removed),
    )


def _delete_uniform(g: ClusterDigraph, target: int, rng: np.random.Generator) -> set:
    ordered = sorted(g.edges)
    outdeg = {v: 0 for v in g.vertices}
    for i, _ in ordered:
        outdeg[i] += 1
    removed = set()
    # out-degrees only shrink, so an edge blocked once stays blocked: walking a
    # random permutation and skipping is the same as redrawing among eligible edges
    for idx in rng.permutation(len(ordered)):
        if len(removed) == target:
            break
        i, j = ordered[idx]
        if outdeg[i] > 1:
            outdeg[i] -= 1
            removed.add((i, j))
    return removed


def _delete_cycles(g: ClusterDigraph, target: int, rng: np.random.Generator) -> set:
    succ: dict[int, set[int]] = {v: set() for v in g.vertices}
    for i, j in g.edges:
        succ[i].add(j)
    removed: set = set()
    while len(removed) < target:
        remaining = target - len(removed)
        # a leftover of exactly one edge can never be met (no self-loops)
        lengths = [L for L in range(2, min(remaining, g.n) + 1) if remaining - L != 1]
        if not lengths:
            break
        cycle = None
        for L in rng.permutation(lengths):
            cycle = _find_cycle(succ, int(L), rng)
            if cycle is not None:
                break
        if cycle is None:
            break
        for a, b in zip(cycle, cycle[1:] + cycle[:1]):
            succ[a].discard(b)
            removed.add((a, b))
    return removed


def _find_cycle(succ: dict[int, set[int]], length: int, rng, budget: int = 20000):
    """Random simple cycle of exactly ``length`` through vertices of out-degree >= 2."""
    eligible = sorted(v for v, s in succ.items() if len(s) >= 2)
    if len(eligible) < length:
        return None
    ok = set(eligible)
    steps = 0
    for start in rng.permutation(eligible):
        start = int(start)
        path = [start]
        on_path = {start}
        stack = [iter(_shuffled(succ[start] & ok, rng))]
        while stack:
            steps += 1
            if steps > budget:
                return None
            nxt = next(stack[-1], None)
            if nxt is None:
                stack.pop()
                on_path.discard(path.pop())
                continue
            if len(path) == length:
                if nxt == start:
                    return path[:]
                continue
            if nxt in on_path:
                continue
            path.append(nxt)
            on_path.add(nxt)
            stack.append(iter(_shuffled(succ[nxt] & ok, rng)))
    return None


def _shuffled(items: set[int], rng) -> list[int]:
    ordered = sorted(items)
    return [ordered[i] for i in rng.permutation(len(ordered))]


def degree_summary(g: ClusterDigraph) -> DegreeSummary:
    dout, din = g.out_degrees, g.in_degrees
    d_min, d_max, din_max = int(dout.min()), int(dout.max()), int(din.max())
    if d_min < 1:
        raise GraphInvariantError("degree summary needs every out-degree >= 1")
    alpha = d_min / g.n
    eps = (d_max - d_min) / d_min
    varphi = (din_max - d_min) / d_min
    return DegreeSummary(
        n_l=g.n,
        d_out_min=d_min,
        d_out_max=d_max,
        d_in_max=din_max,
        alpha=alpha,
        eps=eps,
        varphi=varphi,
        alpha_minus=1.0 / alpha - 1.0,
        eps_net=varphi + eps / alpha,
        balanced=g.is_balanced,
    )


def equal_neighbor_matrix(g: ClusterDigraph) -> np.ndarray:
    """Column-stochastic ``A`` with ``A[i, j] = 1/d_j^+`` iff edge ``j -> i``."""
    g.validate()
    e = g.local_edges
    A = np.zeros((g.n, g.n))
    A[e[:, 1], e[:, 0]] = 1.0 / g.out_degrees[e[:, 0]]
    return A


@dataclass(frozen=True)
class Network:
    round: int
    clusters: tuple[ClusterDigraph, ...]

    def blocks(self) -> list[np.ndarray]:
        return [equal_neighbor_matrix(g) for g in self.clusters]

    @property
    def n_edges(self) -> int:
        return sum(len(g.edges) for g in self.clusters)

    @property
    def shortfall(self) -> int:
        return sum(g.deletion_shortfall for g in self.clusters)


def assemble_network(cfg: TopologyConfig, round: int) -> Network:
    lo, hi = cfg.k_range
    clusters = []
    for ell in range(cfg.c):
        k = int(stream(cfg.seed, Domain.TOPOLOGY, round, ell, _K_DRAW).integers(lo, hi + 1))
        g = generate_regular_cluster(cfg, ell, round, k)
        rng = stream(cfg.seed, Domain.TOPOLOGY, round, ell, _DELETE)
        clusters.append(delete_edges(g, cfg.p_fail, rng, balanced=cfg.balanced_mode))
    return Network(round, tuple(clusters))


def write_edge_list(g: ClusterDigraph, fh: IO[str]) -> None:
    """Header ``cluster <id> round <t> n <n_l>`` then one local ``i j`` pair per line."""
    fh.write(f"cluster {g.cluster_id} round {g.round} n {g.n}\n")
    for i, j in g.local_edges:
        fh.write(f"{i} {j}\n")


def read_edge_list(lines: Iterable[str], vertex_offset: int = 0) -> ClusterDigraph:
    it = iter(lines)
    header = next(it, "").split()
    if len(header) != 6 or header[0::2] != ["cluster", "round", "n"]:
        raise EdgeListFormatError(f"line 1: bad header {' '.join(header)!r}")
    try:
        cid, rnd, n = (int(x) for x in header[1::2])
    except ValueError as exc:
        raise EdgeListFormatError(f"line 1: {exc}") from None
    edges = set()
    for lineno, line in enumerate(it, start=2):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise EdgeListFormatError(f"line {lineno}: expected 'i j', got {line.strip()!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise EdgeListFormatError(f"line {lineno}: non-integer vertex") from None
        if not (0 <= i < n and 0 <= j < n):
            raise EdgeListFormatError(f"line {lineno}: vertex out of range [0, {n})")
        if (i, j) in edges:
            raise EdgeListFormatError(f"line {lineno}: duplicate edge {i} {j}")
        edges.add((i, j))
    verts = tuple(range(vertex_offset, vertex_offset + n))
    try:
        return ClusterDigraph(cid, rnd, verts, frozenset((i + vertex_offset, j + vertex_offset) for i, j in edges))
    except GraphInvariantError as exc:
        raise EdgeListFormatError(str(exc)) from None


def from_edges(n: int, edges: Sequence[tuple[int, int]], cluster_id: int = 0, round: int = 0) -> ClusterDigraph:
    """Convenience constructor on local vertex ids ``0..n-1``."""
    return ClusterDigraph(cluster_id, round, tuple(range(n)), frozenset(map(tuple, edges)))
