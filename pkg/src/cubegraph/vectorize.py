"""Skeleton tracing and polyline simplification.

Polylines are (k, 2) float arrays of (x, y) points, k >= 2, with no
consecutive duplicates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import BinaryImage

Polyline = np.ndarray


@dataclass(frozen=True)
class SimplifyConfig:
    epsilon: float = 3.0

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")


_NB8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def _as_points(path_yx: list[tuple[int, int]]) -> Polyline:
    return np.array([(x, y) for y, x in path_yx], dtype=np.float64)


def trace_polylines(skeleton: BinaryImage) -> list[Polyline]:
    """Walk a one-pixel-wide skeleton into pixel-chain polylines.

    Endpoints (one neighbor) and junctions (three or more) terminate chains;
    interior pixels have exactly two neighbors and are passed through. Pure
    cycles with no terminal pixel are emitted as closed chains split at their
    lexicographically smallest (x, y) pixel. Isolated single pixels cannot
    form a two-point chain and are skipped.
    """
    mask = skeleton.mask
    h, w = mask.shape
    fg = {(int(y), int(x)) for y, x in np.argwhere(mask)}
    nbrs: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for y, x in fg:
        ns = []
        for dy, dx in _NB8:
            p = (y + dy, x + dx)
            if p in fg:
                ns.append(p)
        # deterministic neighbor order: by (x, y)
        ns.sort(key=lambda p: (p[1], p[0]))
        nbrs[(y, x)] = ns

    terminals = {p for p, ns in nbrs.items() if len(ns) != 2}
    used: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    lines: list[Polyline] = []
    on_chain: set[tuple[int, int]] = set()

    for t in sorted(terminals, key=lambda p: (p[1], p[0])):
        for n in nbrs[t]:
            if (t, n) in used:
                continue
            used.add((t, n))
            used.add((n, t))
            path = [t, n]
            prev, cur = t, n
            while cur not in terminals:
                a, b = nbrs[cur]
                nxt = b if a == prev else a
                used.add((cur, nxt))
                used.add((nxt, cur))
                path.append(nxt)
                prev, cur = cur, nxt
            on_chain.update(path)
            lines.append(_as_points(path))

    # anything untouched now sits on junction-free cycles
    remaining = sorted(
        (p for p in fg if p not in on_chain and len(nbrs[p]) == 2),
        key=lambda p: (p[1], p[0]),
    )
    left = set(remaining)
    for s in remaining:
        if s not in left:
            continue
        path = [s]
        prev, cur = s, nbrs[s][0]
        while cur != s:
            path.append(cur)
            a, b = nbrs[cur]
            nxt = b if a == prev else a
            prev, cur = cur, nxt
        path.append(s)
        left.difference_update(path)
        on_chain.update(path)
        lines.append(_as_points(path))
    return lines


def _chord_distances(points: np.ndarray, i: int, j: int) -> np.ndarray:
    """Perpendicular distance of points[i+1:j] to the chord points[i]-points[j].

    A degenerate chord (identical endpoints) falls back to point distance.
    """
    seg = points[j] - points[i]
    rel = points[i + 1 : j] - points[i]
    length = float(np.hypot(seg[0], seg[1]))
    if length == 0.0:
        return np.hypot(rel[:, 0], rel[:, 1])
    return np.abs(rel[:, 0] * seg[1] - rel[:, 1] * seg[0]) / length


def simplify(line: Polyline, config: SimplifyConfig) -> Polyline:
    """Douglas-Peucker simplification keeping both endpoints.

    Splits at the farthest point whenever its chord deviation exceeds
    epsilon, so the output is a subsequence of the input and every dropped
    point stays within epsilon of the chain.
    """
    points = np.asarray(line, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 2:
        raise ValueError(f"polyline must be a (k, 2) array with k >= 2, got shape {points.shape}")
    keep = np.zeros(len(points), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(points) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        dists = _chord_distances(points, i, j)
        k = int(np.argmax(dists))
        if dists[k] > config.epsilon:
            split = i + 1 + k
            keep[split] = True
            stack.append((i, split))
            stack.append((split, j))
    return points[keep]


def save_polylines_text(lines: list[Polyline], path: str) -> None:
    """One "x y" pair per line, blank line between polylines."""
    chunks = []
    for line in lines:
        chunks.append("\n".join(f"{float(p[0])!r} {float(p[1])!r}" for p in line))
    with open(path, "w") as fh:
        fh.write("\n\n".join(chunks))
        fh.write("\n")


def load_polylines_text(path: str) -> list[Polyline]:
    with open(path) as fh:
        blocks = fh.read().strip().split("\n\n")
    out = []
    for block in blocks:
        if not block.strip():
            continue
        pts = [tuple(float(v) for v in row.split()) for row in block.splitlines()]
        out.append(np.array(pts, dtype=np.float64))
    return out


def save_polylines_svg(
    lines: list[Polyline],
    path: str,
    width: int,
    height: int,
    stroke: str = "black",
    stroke_width: float = 1.5,
) -> None:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for line in lines:
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in line)
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="{stroke_width}"/>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")
