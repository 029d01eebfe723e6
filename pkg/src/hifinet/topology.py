"""Cluster topology: node positions, radio links and the cluster head.

Text format::

    # comment
    node_id x y
    0 0.0 0.0
    1 30.0 0.0
    edges
    0 1
    cluster_head 0
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from hifinet.errors import ConfigError, DataError, RoutingError


@dataclass(eq=False)
class Topology:
    node_ids: list[int]
    coords: np.ndarray
    adjacency: np.ndarray
    cluster_head: int

    def __post_init__(self):
        self.node_ids = [int(n) for n in self.node_ids]
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(len(self.node_ids), 2)
        adj = np.asarray(self.adjacency, dtype=bool)
        n = len(self.node_ids)
        if adj.shape != (n, n):
            raise ConfigError(f"adjacency must be {n}x{n}, got {adj.shape}")
        if not np.array_equal(adj, adj.T):
            raise ConfigError("adjacency must be symmetric")
        if len(set(self.node_ids)) != n:
            raise ConfigError("duplicate node ids in topology")
        if self.cluster_head not in self.node_ids:
            raise ConfigError(f"cluster head {self.cluster_head} is not a topology node")
        self.adjacency = adj
        if not self.is_connected():
            raise RoutingError("topology is not connected; some node cannot reach the cluster head")

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def index(self, node_id: int) -> int:
        try:
            return self.node_ids.index(int(node_id))
        except ValueError:
            raise RoutingError(f"node {node_id} not in topology") from None

    def distance(self, a: int, b: int) -> float:
        return float(np.linalg.norm(self.coords[self.index(a)] - self.coords[self.index(b)]))

    def neighbors(self, node_id: int) -> list[int]:
        i = self.index(node_id)
        return [self.node_ids[j] for j in np.flatnonzero(self.adjacency[i]) if j != i]

    def attention_mask(self, self_loops: bool = True) -> np.ndarray:
        mask = self.adjacency.copy()
        if self_loops:
            np.fill_diagonal(mask, True)
        return mask

    def is_connected(self) -> bool:
        n = self.n_nodes
        seen = {0}
        todo = deque([0])
        while todo:
            i = todo.popleft()
            for j in np.flatnonzero(self.adjacency[i]):
                if j not in seen:
                    seen.add(int(j))
                    todo.append(int(j))
        return len(seen) == n

    def permuted(self, order: Sequence[int]) -> "Topology":
        order = list(order)
        return Topology([self.node_ids[i] for i in order], self.coords[order],
                        self.adjacency[np.ix_(order, order)], self.cluster_head)


def topology_from_coords(node_ids: Sequence[int], coords, radio_range: float,
                         cluster_head: int | None = None) -> Topology:
    coords = np.asarray(coords, dtype=np.float64)
    d = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    adj = d <= radio_range
    np.fill_diagonal(adj, False)
    if cluster_head is None:
        # most central node, lowest id on ties
        totals = d.sum(axis=1)
        best = min(range(len(node_ids)), key=lambda i: (round(totals[i], 9), node_ids[i]))
        cluster_head = int(node_ids[best])
    return Topology(list(node_ids), coords, adj, cluster_head)


def default_topology(node_ids: Sequence[int], spacing: float = 30.0, radio_range: float = 45.0) -> Topology:
    """Nodes on a near-square grid, linked to every node within ``radio_range``."""
    n = len(node_ids)
    cols = max(1, math.ceil(math.sqrt(n)))
    coords = [((i % cols) * spacing, (i // cols) * spacing) for i in range(n)]
    return topology_from_coords(node_ids, coords, radio_range)


def read_topology(path) -> Topology:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read topology {path}: {exc}") from exc
    ids, coords, edges, head = [], [], [], None
    section = "nodes"
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "node_id":
                section = "nodes"
            elif parts[0] == "edges":
                section = "edges"
            elif parts[0] == "cluster_head":
                head = int(parts[1])
            elif section == "nodes":
                ids.append(int(parts[0]))
                coords.append((float(parts[1]), float(parts[2])))
            else:
                edges.append((int(parts[0]), int(parts[1])))
        except (IndexError, ValueError):
            raise ConfigError(f"{path}:{lineno}: cannot parse {raw!r}") from None
    if not ids:
        raise ConfigError(f"{path}: no nodes")
    if head is None:
        raise ConfigError(f"{path}: missing cluster_head line")
    pos = {n: i for i, n in enumerate(ids)}
    adj = np.zeros((len(ids), len(ids)), dtype=bool)
    for a, b in edges:
        if a not in pos or b not in pos:
            raise ConfigError(f"{path}: edge ({a}, {b}) names an unknown node")
        adj[pos[a], pos[b]] = adj[pos[b], pos[a]] = True
    return Topology(ids, np.array(coords), adj, head)


def write_topology(topo: Topology, path) -> None:
    out = ["node_id x y"]
    for n, (x, y) in zip(topo.node_ids, topo.coords):
        out.append(f"{n} {float(x)!r} {float(y)!r}")
    out.append("edges")
    n = topo.n_nodes
    for i in range(n):
        for j in range(i, n):
            if topo.adjacency[i, j]:
                out.append(f"{topo.node_ids[i]} {topo.node_ids[j]}")
    out.append(f"cluster_head {topo.cluster_head}")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
