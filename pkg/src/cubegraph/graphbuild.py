"""Build sketch graphs from polylines by merging nearby endpoints."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .vectorize import Polyline


@dataclass(frozen=True)
class MergeConfig:
    """delta: endpoints within this distance merge into one node (single
    linkage, applied transitively)."""

    delta: float = 10.0

    def __post_init__(self) -> None:
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")


@dataclass
class SketchGraph:
    """Undirected graph: nodes are (x, y) positions, edges index into nodes.

    Edges are stored as (i, j) with i < j, without duplicates or self-loops.
    """

    nodes: np.ndarray
    edges: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.nodes = np.asarray(self.nodes, dtype=np.float64).reshape(-1, 2)
        n = len(self.nodes)
        cleaned = []
        seen = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) references a missing node (n={n})")
            if i == j:
                raise ValueError(f"self-loop on node {i} is not allowed")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            cleaned.append(key)
        self.edges = cleaned

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def adjacency(self) -> list[set[int]]:
        adj: list[set[int]] = [set() for _ in range(self.node_count)]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.node_count, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg


class _UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def build_graph(lines: list[Polyline], config: MergeConfig) -> SketchGraph:
    """Merge polyline endpoints into nodes and emit one edge per polyline.

    Endpoint clustering is single-linkage: any two endpoints within delta
    join the same cluster, transitively. A cluster's node sits at the
    centroid of its member endpoints. Polylines whose two endpoints land in
    the same cluster collapse to self-loops and are dropped; duplicate edges
    are kept once.
    """
    if not lines:
        return SketchGraph(np.zeros((0, 2)), [])
    endpoints = []
    for line in lines:
        pts = np.asarray(line, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError(f"polyline must be a (k, 2) array with k >= 2, got shape {pts.shape}")
        endpoints.append(pts[0])
        endpoints.append(pts[-1])
    pts = np.array(endpoints)
    k = len(pts)
    uf = _UnionFind(k)
    for a in range(k):
        d = np.hypot(pts[a + 1 :, 0] - pts[a, 0], pts[a + 1 :, 1] - pts[a, 1])
        for b in np.nonzero(d <= config.delta)[0]:
            uf.union(a, int(b) + a + 1)

    roots = [uf.find(a) for a in range(k)]
    cluster_ids: dict[int, int] = {}
    members: list[list[int]] = []
    for a in range(k):
        r = roots[a]
        if r not in cluster_ids:
            cluster_ids[r] = len(members)
            members.append([])
        members[cluster_ids[r]].append(a)

    # order-independent centroids: sum members in sorted coordinate order
    centroids = np.zeros((len(members), 2))
    for ci, ms in enumerate(members):
        coords = sorted((float(pts[a, 0]), float(pts[a, 1])) for a in ms)
        centroids[ci] = np.add.reduce(np.array(coords), axis=0) / len(coords)

    edges = []
    seen = set()
    for li in range(len(lines)):
        i = cluster_ids[roots[2 * li]]
        j = cluster_ids[roots[2 * li + 1]]
        if i == j:
            continue
        key = (min(i, j), max(i, j))
        if key not in seen:
            seen.add(key)
            edges.append(key)
    return SketchGraph(centroids, edges)


def canonicalize(graph: SketchGraph) -> SketchGraph:
    """Drop isolated nodes and reorder the rest lexicographically by (x, y)."""
    deg = graph.degrees()
    kept = [i for i in range(graph.node_count) if deg[i] > 0]
    order = sorted(kept, key=lambda i: (graph.nodes[i, 0], graph.nodes[i, 1]))
    remap = {old: new for new, old in enumerate(order)}
    nodes = graph.nodes[order] if order else np.zeros((0, 2))
    edges = sorted((min(remap[i], remap[j]), max(remap[i], remap[j])) for i, j in graph.edges)
    return SketchGraph(nodes, edges)


def save_graph(graph: SketchGraph, path: str, meta: dict | None = None) -> None:
    doc = {
        "nodes": [[float(x), float(y)] for x, y in graph.nodes],
        "edges": [[int(i), int(j)] for i, j in graph.edges],
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_graph(path: str) -> tuple[SketchGraph, dict]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"graph file not found: {path}")
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed graph file {path}: {exc}") from exc
    for key in ("nodes", "edges"):
        if key not in doc:
            raise ValueError(f"graph file {path} is missing field '{key}'")
    nodes = np.array(doc["nodes"], dtype=np.float64).reshape(-1, 2)
    edges = [(int(i), int(j)) for i, j in doc["edges"]]
    return SketchGraph(nodes, edges), doc.get("meta", {})
