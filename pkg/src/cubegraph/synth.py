"""Synthetic hand-drawn cube sketches with known ground truth.

The base template is the planar wireframe projection of a cube: an outer
square, a smaller concentric inner square, and four corner spokes. That
drawing has eight corners of degree three and twelve strokes, so its contact
graph is the cube graph itself. An opaque variant with seven visible corners
is available behind a flag.

Distortions mimic impaired drawings: corner jitter, dropped strokes, broken
strokes with a visible gap, and per-stroke angle skew. A scalar severity in
[0, 1] maps monotonically onto all four.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .graphbuild import SketchGraph, canonicalize, save_graph

IMAGE_SIZE = 160
_STROKE_RADIUS = 1.1
_OVERSHOOT_PX = 2.0
_BACKGROUND = 235.0
_INK_DEPTH = 205.0
_NOISE_SIGMA = 5.0

# cohort make-up for the two diagnosis groups; per-group age and education
# counts are pulled partway toward the pooled distribution so demographics
# correlate with diagnosis without acting as a shortcut label
_AGE_COUNTS_CN = np.array([0, 2, 9, 15, 21, 17, 25, 7, 0], dtype=np.float64)
_AGE_COUNTS_AD = np.array([0, 2, 1, 0, 2, 3, 11, 9, 0], dtype=np.float64)
_EDU_COUNTS_CN = np.array([7, 22, 13, 24, 0, 20, 10], dtype=np.float64)
_EDU_COUNTS_AD = np.array([5, 9, 4, 5, 0, 2, 3], dtype=np.float64)
_DEMO_SHARPNESS = 0.35


def _blend_demographics(
    counts_a: np.ndarray, counts_b: np.ndarray, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    p_a = counts_a / counts_a.sum()
    p_b = counts_b / counts_b.sum()
    pooled = 0.5 * (p_a + p_b)
    return lam * p_a + (1 - lam) * pooled, lam * p_b + (1 - lam) * pooled


AGE_WEIGHTS_CN, AGE_WEIGHTS_AD = _blend_demographics(
    _AGE_COUNTS_CN, _AGE_COUNTS_AD, _DEMO_SHARPNESS
)
EDU_WEIGHTS_CN, EDU_WEIGHTS_AD = _blend_demographics(
    _EDU_COUNTS_CN, _EDU_COUNTS_AD, _DEMO_SHARPNESS
)
NPT_CN = (0.70, 0.10)
NPT_AD = (0.45, 0.13)
SEVERITY_BETA_CN = (1.5, 10.0)
SEVERITY_BETA_AD = (5.0, 2.2)


def cube_template(style: str = "transparent") -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Corner coordinates and stroke index pairs for the cube drawing."""
    if style == "transparent":
        m, s = 25.0, 110.0
        outer = [(m, m), (m + s, m), (m + s, m + s), (m, m + s)]
        c, t = IMAGE_SIZE / 2.0, 50.0
        inner = [
            (c - t / 2, c - t / 2),
            (c + t / 2, c - t / 2),
            (c + t / 2, c + t / 2),
            (c - t / 2, c + t / 2),
        ]
        corners = np.array(outer + inner, dtype=np.float64)
        edges = [(0, 1), (1, 2), (2, 3), (0, 3)]
        edges += [(4, 5), (5, 6), (6, 7), (4, 7)]
        edges += [(0, 4), (1, 5), (2, 6), (3, 7)]
        return corners, edges
    if style == "opaque":
        # hexagonal silhouette plus the one interior corner of three faces
        c = IMAGE_SIZE / 2.0
        r = 62.0
        angles = np.deg2rad(30 + 60 * np.arange(6))
        hexagon = np.stack([c + r * np.cos(angles), c + r * np.sin(angles)], axis=1)
        corners = np.vstack([hexagon, [[c, c]]])
        edges = [(i, (i + 1) % 6) for i in range(6)]
        edges += [(6, 0), (6, 2), (6, 4)]
        return corners, edges
    raise ValueError(f"style must be transparent or opaque, got {style!r}")


@dataclass(frozen=True)
class DistortionParams:
    """Knobs for one drawing: corner jitter, per-edge drops, per-corner
    stroke breaks (strokes stop gap_px short of a broken corner), and
    per-edge direction skew."""

    jitter_px: float = 0.0
    drop_edge_prob: float = 0.0
    break_prob: float = 0.0
    gap_px: float = 14.0
    angle_skew_deg: float = 0.0

    def __post_init__(self) -> None:
        if self.jitter_px < 0 or self.gap_px < 0 or self.angle_skew_deg < 0:
            raise ValueError("distortion magnitudes must be non-negative")
        for p in (self.drop_edge_prob, self.break_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probabilities must lie in [0, 1], got {p}")


def severity_to_params(severity: float) -> DistortionParams:
    """Map a scalar severity in [0, 1] onto distortion magnitudes.

    Broken strokes carry most of the signal; jitter and skew stay mild so
    corner geometry remains legible even at high severity.
    """
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity must lie in [0, 1], got {severity}")
    return DistortionParams(
        jitter_px=2.5 * severity,
        drop_edge_prob=0.35 * severity,
        break_prob=0.55 * severity,
        gap_px=14.0,
        angle_skew_deg=4.0 * severity,
    )


def severity_of(params: DistortionParams) -> float:
    """Inverse-ish of severity_to_params: average of the scaled magnitudes."""
    parts = [
        params.jitter_px / 2.5,
        params.drop_edge_prob / 0.35,
        params.break_prob / 0.55,
        params.angle_skew_deg / 4.0,
    ]
    return float(np.clip(np.mean(parts), 0.0, 1.0))


@dataclass
class GroundTruth:
    graph: SketchGraph
    severity: float
    params: DistortionParams


def _rotate_segment(a: np.ndarray, b: np.ndarray, degrees: float) -> tuple[np.ndarray, np.ndarray]:
    mid = (a + b) / 2.0
    t = np.deg2rad(degrees)
    rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    return mid + rot @ (a - mid), mid + rot @ (b - mid)


def _stamp_segment(ink: np.ndarray, a: np.ndarray, b: np.ndarray, radius: float) -> None:
    """Mark every pixel within radius of segment ab."""
    h, w = ink.shape
    x0 = max(int(np.floor(min(a[0], b[0]) - radius - 1)), 0)
    x1 = min(int(np.ceil(max(a[0], b[0]) + radius + 1)), w - 1)
    y0 = max(int(np.floor(min(a[1], b[1]) - radius - 1)), 0)
    y1 = min(int(np.ceil(max(a[1], b[1]) + radius + 1)), h - 1)
    if x1 < x0 or y1 < y0:
        return
    xs = np.arange(x0, x1 + 1, dtype=np.float64)
    ys = np.arange(y0, y1 + 1, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    d = b - a
    length_sq = float(d @ d)
    if length_sq == 0.0:
        dist = np.hypot(gx - a[0], gy - a[1])
    else:
        t = ((gx - a[0]) * d[0] + (gy - a[1]) * d[1]) / length_sq
        t = np.clip(t, 0.0, 1.0)
        dist = np.hypot(gx - (a[0] + t * d[0]), gy - (a[1] + t * d[1]))
    ink[y0 : y1 + 1, x0 : x1 + 1] |= dist <= radius


def render_cube(
    params: DistortionParams,
    rng: np.random.Generator,
    style: str = "transparent",
) -> tuple[np.ndarray, GroundTruth]:
    """Draw one distorted cube; returns the image and its intended graph.

    The ground-truth graph reflects jitter, drops, and breaks; stroke skew
    only perturbs the rendering. A break hits a whole corner: every stroke
    approaching it stops gap_px short of the join (the classic
    failure-to-close error), so the corner loses all its incidences and the
    surviving strokes end in free stubs.
    """
    corners, edges = cube_template(style)
    corners = corners + rng.normal(0.0, params.jitter_px, size=corners.shape) if params.jitter_px > 0 else corners.copy()

    keep = [e for e in edges if rng.random() >= params.drop_edge_prob]
    if params.break_prob > 0:
        broken = rng.random(len(corners)) < params.break_prob
    else:
        broken = np.zeros(len(corners), dtype=bool)

    # overshoot flags mark true joined endpoints, drawn with a short pencil
    # overrun; broken ends get none so the gap is not narrowed
    segments: list[tuple[np.ndarray, np.ndarray, bool, bool]] = []
    gt_nodes: list[tuple[float, float]] = [tuple(p) for p in corners]
    gt_edges: list[tuple[int, int]] = []
    for i, j in keep:
        a, b = corners[i], corners[j]
        length = float(np.hypot(*(b - a)))
        gap_frac = min(params.gap_px / max(length, 1e-9), 0.4)
        ta = gap_frac if broken[i] else 0.0
        tb = 1.0 - gap_frac if broken[j] else 1.0
        p_start = a + ta * (b - a)
        p_end = a + tb * (b - a)
        if broken[i]:
            ki = len(gt_nodes)
            gt_nodes.append((float(p_start[0]), float(p_start[1])))
        else:
            ki = i
        if broken[j]:
            kj = len(gt_nodes)
            gt_nodes.append((float(p_end[0]), float(p_end[1])))
        else:
            kj = j
        gt_edges.append((ki, kj))
        segments.append((p_start, p_end, not broken[i], not broken[j]))

    ink = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=bool)
    for a, b, over_a, over_b in segments:
        if params.angle_skew_deg > 0:
            a, b = _rotate_segment(a, b, rng.normal(0.0, params.angle_skew_deg))
        unit = (b - a) / max(float(np.hypot(*(b - a))), 1e-9)
        if over_a:
            a = a - _OVERSHOOT_PX * unit
        if over_b:
            b = b + _OVERSHOOT_PX * unit
        _stamp_segment(ink, a, b, _STROKE_RADIUS)

    img = np.full((IMAGE_SIZE, IMAGE_SIZE), _BACKGROUND)
    img[ink] -= _INK_DEPTH
    img += rng.normal(0.0, _NOISE_SIGMA, size=img.shape)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)

    graph = canonicalize(SketchGraph(nodes=np.array(gt_nodes), edges=gt_edges))
    return img, GroundTruth(graph=graph, severity=severity_of(params), params=params)


@dataclass
class CohortRow:
    subject_id: str
    image_file: str
    graph_file: str
    age_group: int
    edu_group: int
    npt: float
    label: int
    severity: float


def _sample_band(weights: np.ndarray, rng: np.random.Generator) -> int:
    p = weights / weights.sum()
    return int(rng.choice(len(weights), p=p))


def generate_cohort(
    out_dir: str,
    n_subjects: int,
    ad_fraction: float = 0.25,
    seed: int = 0,
    style: str = "transparent",
) -> list[CohortRow]:
    """Write images, ground-truth graphs, and a manifest for one cohort."""
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    if not 0.0 <= ad_fraction <= 1.0:
        raise ValueError(f"ad_fraction must lie in [0, 1], got {ad_fraction}")
    img_dir = os.path.join(out_dir, "images")
    graph_dir = os.path.join(out_dir, "graphs")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(graph_dir, exist_ok=True)

    n_ad = int(round(n_subjects * ad_fraction))
    labels = np.array([1] * n_ad + [0] * (n_subjects - n_ad))
    root = np.random.SeedSequence(seed)
    order_rng = np.random.default_rng(root.spawn(1)[0])
    order_rng.shuffle(labels)

    rows: list[CohortRow] = []
    for k, child in enumerate(root.spawn(n_subjects + 1)[1:]):
        rng = np.random.default_rng(child)
        label = int(labels[k])
        if label == 1:
            severity = float(rng.beta(*SEVERITY_BETA_AD))
            age = _sample_band(AGE_WEIGHTS_AD, rng)
            edu = _sample_band(EDU_WEIGHTS_AD, rng)
            npt = float(np.clip(rng.normal(*NPT_AD), 0.0, 1.0))
        else:
            severity = float(rng.beta(*SEVERITY_BETA_CN))
            age = _sample_band(AGE_WEIGHTS_CN, rng)
            edu = _sample_band(EDU_WEIGHTS_CN, rng)
            npt = float(np.clip(rng.normal(*NPT_CN), 0.0, 1.0))
        img, truth = render_cube(severity_to_params(severity), rng, style=style)

        sid = f"S{k:04d}"
        image_file = os.path.join("images", f"{sid}.png")
        graph_file = os.path.join("graphs", f"{sid}.json")
        Image.fromarray(img, mode="L").save(os.path.join(out_dir, image_file))
        save_graph(truth.graph, os.path.join(out_dir, graph_file))
        rows.append(
            CohortRow(
                subject_id=sid,
                image_file=image_file,
                graph_file=graph_file,
                age_group=age,
                edu_group=edu,
                npt=npt,
                label=label,
                severity=truth.severity,
            )
        )

    with open(os.path.join(out_dir, "manifest.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["subject_id", "image_file", "graph_file", "age_group", "edu_group", "npt", "label", "severity"]
        )
        for r in rows:
            writer.writerow(
                [r.subject_id, r.image_file, r.graph_file, r.age_group, r.edu_group, repr(r.npt), r.label, repr(r.severity)]
            )
    return rows


def load_manifest(path: str) -> list[CohortRow]:
    rows: list[CohortRow] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"subject_id", "image_file", "graph_file", "age_group", "edu_group", "npt", "label", "severity"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise ValueError(f"{path}: manifest is missing columns {sorted(needed)}")
        for rec in reader:
            rows.append(
                CohortRow(
                    subject_id=rec["subject_id"],
                    image_file=rec["image_file"],
                    graph_file=rec["graph_file"],
                    age_group=int(rec["age_group"]),
                    edu_group=int(rec["edu_group"]),
                    npt=float(rec["npt"]),
                    label=int(rec["label"]),
                    severity=float(rec["severity"]),
                )
            )
    if not rows:
        raise ValueError(f"{path}: manifest has no rows")
    return rows
