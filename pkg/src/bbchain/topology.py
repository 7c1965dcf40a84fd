"""Overlay topologies with a malicious node set and honest-subgraph diameter."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


class TopologyError(RuntimeError):
    pass


def bfs_distances(adj: dict[int, Iterable[int]], src: int, allowed: set[int] | None = None) -> dict[int, int]:
    dist = {src: 0}
    q = deque([src])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in dist and (allowed is None or v in allowed):
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def honest_diameter(adj: dict[int, Iterable[int]], honest: set[int]) -> int | None:
    """Diameter of the subgraph induced by ``honest``; None if disconnected.

    ``adj`` may be directed (adjacency lists of out-neighbors).
    """
    diam = 0
    for u in honest:
        dist = bfs_distances(adj, u, honest)
        if len(dist) != len(honest):
            return None
        diam = max(diam, max(dist.values()))
    return diam


@dataclass
class Topology:
    n: int
    adjacency: dict[int, frozenset[int]]
    malicious: frozenset[int]
    d: int
    bad_edges: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    @property
    def honest(self) -> list[int]:
        return [v for v in range(self.n) if v not in self.malicious]

    def is_honest(self, v: int) -> bool:
        return v not in self.malicious

    @property
    def w(self) -> int:
        """Largest degree of an honest node."""
        return max((len(self.adjacency[v]) for v in self.honest), default=0)

    @property
    def max_degree(self) -> int:
        return max(len(a) for a in self.adjacency.values())

    def edges(self) -> list[tuple[int, int]]:
        return sorted((u, v) for u in self.adjacency for v in self.adjacency[u] if u < v)

    def honest_distances(self, sources: Iterable[int]) -> dict[int, int]:
        """Multi-source BFS distance over good honest edges."""
        honest = set(self.honest)
        good = self.good_adjacency()
        dist = {s: 0 for s in sources if s in honest}
        q = deque(dist)
        while q:
            u = q.popleft()
            for v in good[u]:
                if v in honest and v not in dist:
                    dist[v] = dist[u] + 1
                    q.append(v)
        return dist

    def good_adjacency(self, bad: frozenset | None = None) -> dict[int, list[int]]:
        bad = self.bad_edges if bad is None else bad
        return {u: [v for v in sorted(self.adjacency[u]) if (u, v) not in bad] for u in self.adjacency}

    def with_malicious(self, malicious: Iterable[int]) -> "Topology":
        mal = frozenset(malicious)
        honest = set(range(self.n)) - mal
        d = honest_diameter(self.adjacency, honest)
        if d is None:
            raise TopologyError("honest subgraph is disconnected")
        return Topology(self.n, self.adjacency, mal, max(d, 1))


def from_edges(n: int, edges: Iterable[tuple[int, int]], malicious: Iterable[int] = ()) -> Topology:
    adj: dict[int, set[int]] = {v: set() for v in range(n)}
    for u, v in edges:
        if u == v:
            raise ValueError("self loops are not allowed")
        adj[u].add(v)
        adj[v].add(u)
    mal = frozenset(malicious)
    honest = set(range(n)) - mal
    d = honest_diameter(adj, honest)
    if d is None:
        raise TopologyError("honest subgraph is disconnected")
    return Topology(n, {v: frozenset(a) for v, a in adj.items()}, mal, max(d, 1))


def clique(n: int, malicious: Iterable[int] = ()) -> Topology:
    return from_edges(n, [(u, v) for u in range(n) for v in range(u + 1, n)], malicious)


def line(n: int, malicious: Iterable[int] = ()) -> Topology:
    return from_edges(n, [(u, u + 1) for u in range(n - 1)], malicious)


def build_topology(n: int, target_degree: int, max_degree: int, f: float, seed: int,
                   max_attempts: int = 200) -> Topology:
    """Random overlay in the style of the deployment experiments.

    Every node keeps opening edges to random peers until it has
    ``target_degree`` neighbors; a peer refuses once it has ``max_degree``.
    ``floor(f * n)`` uniformly chosen nodes are malicious. The wiring is
    redrawn until the honest subgraph is connected.
    """
    if not 0 <= f <= 0.99:
        raise ValueError(f"f must lie in [0, 0.99], got {f}")
    if not 0 < target_degree < max_degree < n:
        raise ValueError("need 0 < target_degree < max_degree < n")
    rng = np.random.default_rng(seed)
    malicious = frozenset(int(v) for v in rng.choice(n, int(np.floor(f * n)), replace=False))
    honest = set(range(n)) - malicious
    if not honest:
        raise TopologyError("no honest nodes")
    for _ in range(max_attempts):
        adj: dict[int, set[int]] = {v: set() for v in range(n)}
        for u in rng.permutation(n):
            u = int(u)
            tries = 0
            while len(adj[u]) < target_degree and tries < 20 * n:
                tries += 1
                v = int(rng.integers(n))
                if v == u or v in adj[u] or len(adj[v]) >= max_degree:
                    continue
                adj[u].add(v)
                adj[v].add(u)
        d = honest_diameter(adj, honest)
        if d is not None:
            return Topology(n, {v: frozenset(a) for v, a in adj.items()}, malicious, max(d, 1))
    raise TopologyError(f"honest subgraph disconnected after {max_attempts} attempts; try another seed")


def sample_bad_edges(topo: Topology, p_bad: float, d_limit: int, rng: np.random.Generator,
                     tries: int = 20) -> frozenset[tuple[int, int]]:
    """Mark honest-to-honest directed edges bad with probability ``p_bad``.

    Draws are rejected unless the good honest subgraph stays strongly connected
    with diameter at most ``d_limit``; after ``tries`` rejections every edge is good.
    """
    if p_bad <= 0:
        return frozenset()
    honest = set(topo.honest)
    directed = [(u, v) for u in sorted(honest) for v in sorted(topo.adjacency[u]) if v in honest]
    for _ in range(tries):
        draws = rng.random(len(directed))
        bad = frozenset(e for e, x in zip(directed, draws) if x < p_bad)
        diam = honest_diameter(topo.good_adjacency(bad), honest)
        if diam is not None and diam <= d_limit:
            return bad
    return frozenset()
