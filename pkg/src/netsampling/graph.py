"""Directed weighted networks: generation, validation and JSON persistence.

``adjacency[n, m]`` is the weight of the edge *from* node ``m`` *into*
node ``n``, so row ``n`` collects everything node ``n`` receives.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError

__all__ = ["Network", "generate_network", "load_network", "save_network"]


@dataclass(frozen=True, eq=False)
class Network:
    n: int
    adjacency: np.ndarray
    directed: bool = True

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=float)
        if self.n < 1:
            raise ParameterError(f"node count must be positive, got {self.n}")
        if adj.shape != (self.n, self.n):
            raise ParameterError(
                f"adjacency shape {adj.shape} does not match n={self.n}")
        if not np.all(np.isfinite(adj)):
            raise ParameterError("adjacency contains non-finite weights")
        if np.any(np.diag(adj) != 0):
            bad = int(np.flatnonzero(np.diag(adj))[0])
            raise ParameterError(f"self-loop on node {bad}")
        if not self.directed and not np.array_equal(adj, adj.T):
            raise ParameterError("undirected network needs a symmetric adjacency")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def edge_count(self) -> int:
        return int(np.count_nonzero(self.adjacency))

    def edges(self) -> list[tuple[int, int, float]]:
        """Edges as ``(from, to, weight)`` sorted by ``(from, to)``."""
        to_idx, from_idx = np.nonzero(self.adjacency)
        order = np.lexsort((to_idx, from_idx))
        return [(int(from_idx[i]), int(to_idx[i]),
                 float(self.adjacency[to_idx[i], from_idx[i]])) for i in order]

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (self.n == other.n and self.directed == other.directed
                and np.array_equal(self.adjacency, other.adjacency))

    __hash__ = None


def generate_network(n: int, edge_probability: float, seed: int,
                     directed: bool = True) -> Network:
    """Erdős–Rényi random network with independent edge coin flips.

    A draw without any edge is discarded and redrawn with ``seed + 1``.
    """
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise ParameterError(f"n must be an integer >= 2, got {n!r}")
    p = float(edge_probability)
    if not (0.0 < p <= 1.0):
        raise ParameterError(f"edge_probability must lie in (0, 1], got {p}")
    n = int(n)
    while True:
        rng = np.random.default_rng(seed)
        coins = rng.random((n, n)) < p
        if not directed:
            coins = np.triu(coins, 1)
            coins = coins | coins.T
        np.fill_diagonal(coins, False)
        if coins.any():
            return Network(n, coins.astype(float), directed)
        seed += 1


def save_network(net: Network, path) -> None:
    if net.edge_count == 0:
        raise ParameterError("refusing to save a network without edges")
    doc = {"n": net.n, "directed": net.directed,
           "edges": [[a, b, w] for a, b, w in net.edges()]}
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n",
                          encoding="utf-8")


def load_network(path) -> Network:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: cannot parse network file: {exc}") from exc
    if not isinstance(doc, dict) or not {"n", "edges"} <= doc.keys():
        raise FormatError(f"{path}: expected an object with 'n' and 'edges'")
    n = doc["n"]
    directed = doc.get("directed", True)
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise FormatError(f"{path}: 'n' must be a positive integer")
    if not isinstance(directed, bool):
        raise FormatError(f"{path}: 'directed' must be a boolean")
    edges = doc["edges"]
    if not isinstance(edges, list) or not edges:
        raise FormatError(f"{path}: 'edges' must be a non-empty list")

    adj = np.zeros((n, n))
    seen = set()
    for i, rec in enumerate(edges):
        if (not isinstance(rec, list) or len(rec) != 3
                or not all(isinstance(v, int) and not isinstance(v, bool)
                           for v in rec[:2])
                or not isinstance(rec[2], (int, float))
                or isinstance(rec[2], bool)):
            raise FormatError(f"{path}: edge #{i} {rec!r} is not [from, to, weight]")
        a, b, w = rec
        if not (0 <= a < n and 0 <= b < n):
            raise FormatError(f"{path}: edge #{i} {rec!r} has an index outside 0..{n - 1}")
        if a == b:
            raise FormatError(f"{path}: edge #{i} {rec!r} is a self-loop")
        if not math.isfinite(w) or w == 0:
            raise FormatError(f"{path}: edge #{i} {rec!r} has a zero or non-finite weight")
        if (a, b) in seen:
            raise FormatError(f"{path}: edge #{i} {rec!r} is a duplicate")
        seen.add((a, b))
        adj[b, a] = float(w)
    try:
        return Network(n, adj, directed)
    except ParameterError as exc:
        raise FormatError(f"{path}: {exc}") from exc
