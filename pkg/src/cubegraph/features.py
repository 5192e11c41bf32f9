"""Per-node features: graphlet degree vectors, inner angles, assembled matrix.

Orbit numbering over the nine connected graphlets on 2-4 nodes:

    0        edge endpoint
    1, 2     3-path end / middle
    3        triangle
    4, 5     4-path end / middle
    6, 7     3-star leaf / center
    8        4-cycle
    9,10,11  triangle-with-pendant: pendant / bare triangle corner / attachment
    12,13    diamond: degree-2 / degree-3 position
    14       complete graph on 4
"""

from __future__ import annotations

import math
from itertools import combinations

import numpy as np

from .graphbuild import SketchGraph

ORBITS = 15

FEATURE_COLUMNS = (
    ["x", "y"]
    + [f"orbit{o}" for o in range(ORBITS)]
    + ["angle1", "angle2", "angle3"]
)


def gdv(graph: SketchGraph) -> np.ndarray:
    """Graphlet degree vector per node, (n, 15) int64.

    Counts by direct enumeration from each node's neighborhood with
    set-intersection corrections, rather than by trying all vertex subsets.
    """
    n = graph.node_count
    orb = np.zeros((n, ORBITS), dtype=np.int64)
    adj = graph.adjacency()
    deg = [len(a) for a in adj]
    for v in range(n):
        nv = adj[v]
        d = deg[v]
        orb[v, 0] = d
        tri = sum(len(adj[u] & nv) for u in nv) // 2
        orb[v, 3] = tri
        orb[v, 2] = d * (d - 1) // 2 - tri
        orb[v, 1] = sum(deg[u] - 1 - len(adj[u] & nv) for u in nv)

        nvl = sorted(nv)
        # orbits keyed by the edge count among three neighbors of v
        for a, b, c in combinations(nvl, 3):
            e = (b in adj[a]) + (c in adj[a]) + (c in adj[b])
            if e == 0:
                orb[v, 7] += 1
            elif e == 1:
                orb[v, 11] += 1
            elif e == 2:
                orb[v, 13] += 1
            else:
                orb[v, 14] += 1

        for u in nvl:
            far = adj[u] - nv - {v}
            inner_edges = sum(len(adj[a] & far) for a in far) // 2
            k = len(far)
            orb[v, 6] += k * (k - 1) // 2 - inner_edges
            orb[v, 9] += inner_edges
            for w in sorted(far):
                orb[v, 4] += len(adj[w] - nv - adj[u] - {u})
            for a in nvl:
                if a == u or a in adj[u]:
                    continue
                orb[v, 5] += len(adj[u] - nv - adj[a] - {v})

        for a, b in combinations(nvl, 2):
            shared_out = (adj[a] & adj[b]) - nv - {v}
            if b in adj[a]:
                orb[v, 12] += len(shared_out)
                orb[v, 10] += len(adj[a] - nv - adj[b] - {v})
                orb[v, 10] += len(adj[b] - nv - adj[a] - {v})
            else:
                orb[v, 8] += len(shared_out)
    return orb


def _classify(size: int, edge_count: int, deg_in_sub: int) -> int:
    if size == 2:
        return 0
    if size == 3:
        if edge_count == 3:
            return 3
        return 1 if deg_in_sub == 1 else 2
    if edge_count == 6:
        return 14
    if edge_count == 5:
        return 12 if deg_in_sub == 2 else 13
    if edge_count == 4:
        if deg_in_sub == 1:
            return 9
        if deg_in_sub == 3:
            return 11
        # both the 4-cycle and the bare triangle corners have degree 2; the
        # caller disambiguates via the subgraph's maximum degree
        raise AssertionError("degree-2 case needs the max-degree check")
    # three edges: star or path
    if deg_in_sub == 3:
        return 7
    if deg_in_sub == 2:
        return 5
    raise AssertionError("leaf of star or path resolved by caller")


def gdv_exhaustive(graph: SketchGraph) -> np.ndarray:
    """Oracle counter: enumerate every induced connected subgraph on 2-4
    nodes and classify each member's position directly."""
    n = graph.node_count
    adj = graph.adjacency()
    orb = np.zeros((n, ORBITS), dtype=np.int64)
    for size in (2, 3, 4):
        for combo in combinations(range(n), size):
            sub = set(combo)
            sub_adj = {u: adj[u] & sub for u in combo}
            # connectivity by flood fill
            stack = [combo[0]]
            seen = {combo[0]}
            while stack:
                for w in sub_adj[stack.pop()]:
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            if len(seen) != size:
                continue
            degs = {u: len(sub_adj[u]) for u in combo}
            ecount = sum(degs.values()) // 2
            maxdeg = max(degs.values())
            for u in combo:
                d = degs[u]
                if size == 4 and ecount == 4 and d == 2:
                    orbit = 8 if maxdeg == 2 else 10
                elif size == 4 and ecount == 3 and d == 1:
                    orbit = 6 if maxdeg == 3 else 4
                else:
                    orbit = _classify(size, ecount, d)
                orb[u, orbit] += 1
    return orb


def inner_angles(graph: SketchGraph, node: int) -> np.ndarray:
    """Up to three inner angles at a node, radians, descending.

    Directions point from the node to each graph neighbor. Degree 0 or 1
    yields (0, 0, 0); degree 2 the single angle between the two directions;
    degree 3+ the three largest consecutive polar gaps, each mapped to
    [0, pi] via min(gap, 2*pi - gap).
    """
    if not 0 <= node < graph.node_count:
        raise ValueError(f"node {node} out of range (n={graph.node_count})")
    adj = graph.adjacency()
    nbrs = sorted(adj[node])
    out = np.zeros(3, dtype=np.float64)
    if len(nbrs) < 2:
        return out
    px, py = graph.nodes[node]
    dirs = sorted(math.atan2(graph.nodes[u, 1] - py, graph.nodes[u, 0] - px) for u in nbrs)
    if len(dirs) == 2:
        diff = abs(dirs[1] - dirs[0])
        out[0] = min(diff, 2 * math.pi - diff)
        return out
    gaps = [dirs[i + 1] - dirs[i] for i in range(len(dirs) - 1)]
    gaps.append(2 * math.pi - (dirs[-1] - dirs[0]))
    gaps.sort(reverse=True)
    vals = sorted((min(g, 2 * math.pi - g) for g in gaps[:3]), reverse=True)
    out[:] = vals
    return out


def assemble_features(graph: SketchGraph, log_counts: bool = True) -> np.ndarray:
    """Stack [coords(2) | gdv(15) | angles(3)] into an (n, 20) float matrix.

    Coordinates are min-max normalized to [0, 1] per graph (a degenerate
    axis maps to 0.5), orbit counts pass through log(1 + c) unless
    log_counts is off, and angles are divided by pi.
    """
    if graph.node_count == 0:
        raise ValueError("cannot build features for an empty graph")
    coords = graph.nodes.copy()
    for axis in range(2):
        lo, hi = coords[:, axis].min(), coords[:, axis].max()
        if hi > lo:
            coords[:, axis] = (coords[:, axis] - lo) / (hi - lo)
        else:
            coords[:, axis] = 0.5
    counts = gdv(graph).astype(np.float64)
    if log_counts:
        counts = np.log1p(counts)
    angles = np.stack([inner_angles(graph, v) for v in range(graph.node_count)])
    return np.hstack([coords, counts, angles / math.pi])


def save_features_csv(features: np.ndarray, path: str) -> None:
    """Write one row per node under the documented 20-column header."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != len(FEATURE_COLUMNS):
        raise ValueError(f"expected an (n, {len(FEATURE_COLUMNS)}) matrix, got {features.shape}")
    with open(path, "w") as fh:
        fh.write(",".join(FEATURE_COLUMNS) + "\n")
        for row in features:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
