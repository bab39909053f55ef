"""Agent interconnection graphs for the simulator."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache

import networkx as nx
import numpy as np

from ciota.errors import InvalidParameter

logger = logging.getLogger(__name__)

MAX_CONNECT_RETRIES = 100


@dataclass(frozen=True)
class Topology:
    """Undirected simple graph over agents ``0..n-1``."""

    n: int
    adjacency: tuple[frozenset[int], ...]
    generator: str = "custom"
    seed: int | None = None

    def __post_init__(self) -> None:
        if len(self.adjacency) != self.n:
            raise InvalidParameter(f"adjacency has {len(self.adjacency)} rows for n={self.n}")
        for i, nbrs in enumerate(self.adjacency):
            if i in nbrs:
                raise InvalidParameter(f"self-loop at agent {i}")
            for j in nbrs:
                if not 0 <= j < self.n or i not in self.adjacency[j]:
                    raise InvalidParameter(f"asymmetric or out-of-range edge {i}-{j}")

    @classmethod
    def from_graph(cls, g: nx.Graph, generator: str = "custom", seed: int | None = None) -> "Topology":
        n = g.number_of_nodes()
        if sorted(g.nodes) != list(range(n)):
            g = nx.convert_node_labels_to_integers(g, ordering="sorted")
        adj = tuple(frozenset(g.adj[i]) for i in range(n))
        return cls(n, adj, generator, seed)

    def degrees(self) -> np.ndarray:
        return np.fromiter((len(a) for a in self.adjacency), dtype=np.int64, count=self.n)

    @property
    def max_degree(self) -> int:
        return int(self.degrees().max()) if self.n else 0

    def edge_count(self) -> int:
        return int(self.degrees().sum()) // 2

    def is_connected(self) -> bool:
        return self._connected

    @cached_property
    def _connected(self) -> bool:
        if self.n == 0:
            return False
        seen = {0}
        stack = [0]
        while stack:
            for j in self.adjacency[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.n

    def require_connected(self) -> None:
        if not self.is_connected():
            raise InvalidParameter(f"{self.generator} topology with n={self.n} is not connected")

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) with each neighbor list sorted ascending."""
        deg = self.degrees()
        indptr = np.zeros(self.n + 1, dtype=np.int32)
        np.cumsum(deg, out=indptr[1:])
        indices = np.fromiter(
            (j for nbrs in self.adjacency for j in sorted(nbrs)), dtype=np.int32, count=int(indptr[-1])
        )
        return indptr, indices

    def degree_stats(self) -> dict[str, float]:
        d = self.degrees()
        return {
            "min": int(d.min()),
            "max": int(d.max()),
            "median": float(np.median(d)),
            "mean": float(d.mean()),
            "std": float(d.std()),
        }


@lru_cache(maxsize=4)
def gen_complete(n: int) -> Topology:
    # deterministic and immutable, so repeated trials share one instance
    if n < 2:
        raise InvalidParameter(f"complete topology needs n >= 2, got {n}")
    everyone = frozenset(range(n))
    return Topology(n, tuple(everyone - {i} for i in range(n)), "complete")


def gen_watts_strogatz(n: int, neighbors: int, p: float, seed: int, method: str = "shortcut") -> Topology:
    """Small-world graph on a ring lattice of ``neighbors`` nearest neighbors.

    An odd ``neighbors`` is rounded up to the next even number so the lattice
    is symmetric.  ``method="shortcut"`` adds a random shortcut per lattice
    edge with probability ``p`` (Newman-Watts); ``method="rewire"`` moves the
    far endpoint instead (classic Watts-Strogatz) and regenerates with
    ``seed + 1`` until the graph is connected.
    """
    if not 0.0 <= p <= 1.0:
        raise InvalidParameter(f"rewiring probability must lie in [0, 1], got {p}")
    if neighbors < 1:
        raise InvalidParameter("neighbors must be positive")
    k = neighbors + (neighbors % 2)
    if k >= n:
        raise InvalidParameter(f"neighbors={neighbors} needs n > {k}, got n={n}")
    if method == "shortcut":
        g = nx.newman_watts_strogatz_graph(n, k, p, seed=seed)
        return Topology.from_graph(g, "watts_strogatz", seed)
    if method != "rewire":
        raise InvalidParameter(f"unknown Watts-Strogatz method {method!r}")
    for attempt in range(MAX_CONNECT_RETRIES):
        g = nx.watts_strogatz_graph(n, k, p, seed=seed + attempt)
        if nx.is_connected(g):
            if attempt:
                logger.info("watts-strogatz seed %d disconnected; used seed %d", seed, seed + attempt)
            return Topology.from_graph(g, "watts_strogatz", seed + attempt)
    raise InvalidParameter(f"no connected Watts-Strogatz graph after {MAX_CONNECT_RETRIES} seeds")


def gen_barabasi_albert(n: int, attachment: int, seed: int) -> Topology:
    if attachment < 1 or n <= attachment:
        raise InvalidParameter(f"Barabasi-Albert needs 1 <= attachment < n, got m={attachment}, n={n}")
    g = nx.barabasi_albert_graph(n, attachment, seed=seed)
    return Topology.from_graph(g, "barabasi_albert", seed)


GENERATORS = ("complete", "watts_strogatz", "barabasi_albert")


def make_topology(
    generator: str,
    n: int,
    seed: int = 0,
    *,
    neighbors: int = 5,
    p: float = 0.1,
    attachment: int = 1,
    ws_method: str = "shortcut",
) -> Topology:
    if generator == "complete":
        return gen_complete(n)
    if generator in ("watts_strogatz", "ws"):
        return gen_watts_strogatz(n, neighbors, p, seed, ws_method)
    if generator in ("barabasi_albert", "ba"):
        return gen_barabasi_albert(n, attachment, seed)
    raise InvalidParameter(f"unknown topology generator {generator!r}")
