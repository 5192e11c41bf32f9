"""Shapley-value attributions for the fused classifier.

Players are named feature groups: each of the fifteen graphlet orbits as a
graph-level aggregate, each age and education band, and each test-score
column. Absent groups are replaced by their background (cohort-mean) values;
graph orbit groups substitute the background mean into that orbit's feature
column across every node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import ORBITS
from .model import AGE_BANDS, EDU_BANDS, SubjectRecord, TrainedModel, score_variants

_GDV_COL0 = 2  # feature matrix layout is [x, y, orbit0..orbit14, angles]


@dataclass(frozen=True)
class FeatureGroup:
    """One named player: kind picks the substitution rule, index the slot."""

    name: str
    kind: str
    index: int

    def __post_init__(self) -> None:
        if self.kind not in ("gdv_orbit", "age", "edu", "npt"):
            raise ValueError(f"unknown feature group kind {self.kind!r}")


def default_feature_groups(npt_dim: int = 1) -> list[FeatureGroup]:
    groups = [FeatureGroup(f"graphlet {o}", "gdv_orbit", o) for o in range(ORBITS)]
    groups += [FeatureGroup(f"age {band}", "age", i) for i, band in enumerate(AGE_BANDS)]
    groups += [FeatureGroup(f"edu {band}", "edu", i) for i, band in enumerate(EDU_BANDS)]
    if npt_dim == 1:
        groups.append(FeatureGroup("npt", "npt", 0))
    else:
        groups += [FeatureGroup(f"npt {i}", "npt", i) for i in range(npt_dim)]
    return groups


@dataclass
class Background:
    """Cohort means used as stand-ins for absent groups."""

    orbit_means: np.ndarray
    age_mean: np.ndarray
    edu_mean: np.ndarray
    npt_mean: np.ndarray


def build_background(records: list[SubjectRecord], npt_dim: int = 1) -> Background:
    if not records:
        raise ValueError("background needs at least one record")
    orbit = np.zeros((len(records), ORBITS))
    age = np.zeros((len(records), len(AGE_BANDS)))
    edu = np.zeros((len(records), len(EDU_BANDS)))
    npt = np.zeros((len(records), npt_dim))
    for i, r in enumerate(records):
        orbit[i] = r.node_features[:, _GDV_COL0 : _GDV_COL0 + ORBITS].mean(axis=0)
        age[i, r.age_group] = 1.0
        edu[i, r.edu_group] = 1.0
        npt[i] = r.npt
    return Background(
        orbit_means=orbit.mean(axis=0),
        age_mean=age.mean(axis=0),
        edu_mean=edu.mean(axis=0),
        npt_mean=npt.mean(axis=0),
    )


@dataclass
class AttributionReport:
    subject_id: str
    group_names: list[str]
    values: np.ndarray
    baseline: float
    model_output: float
    mode: str
    n_permutations: int
    std_errors: np.ndarray | None

    def ranked(self) -> list[tuple[str, float]]:
        order = np.argsort(-np.abs(self.values), kind="mergesort")
        return [(self.group_names[int(i)], float(self.values[int(i)])) for i in order]


def _coalition_weights(m: int) -> np.ndarray:
    """w[s] = s! (m-s-1)! / m! for coalition size s."""
    fact = [math.factorial(i) for i in range(m + 1)]
    return np.array([fact[s] * fact[m - s - 1] / fact[m] for s in range(m)], dtype=np.float64)


def exact_shapley(value_fn, m: int, batch_size: int = 4096) -> np.ndarray:
    """Exact Shapley values over all 2^m coalitions.

    value_fn takes a (k, m) boolean matrix of coalitions and returns k
    values. Kept to m <= 20 so the enumeration stays in memory.
    """
    if m < 1:
        raise ValueError("need at least one group")
    if m > 20:
        raise ValueError(f"exact enumeration supports at most 20 groups, got {m}")
    total = 1 << m
    codes = np.arange(total, dtype=np.int64)
    masks = (codes[:, None] >> np.arange(m)) & 1
    values = np.empty(total, dtype=np.float64)
    for lo in range(0, total, batch_size):
        hi = min(lo + batch_size, total)
        values[lo:hi] = value_fn(masks[lo:hi].astype(bool))
    sizes = masks.sum(axis=1)
    weights = _coalition_weights(m)
    phi = np.zeros(m, dtype=np.float64)
    for i in range(m):
        without = (codes >> i) & 1 == 0
        idx = codes[without]
        gain = values[idx + (1 << i)] - values[idx]
        phi[i] = float(np.sum(weights[sizes[idx]] * gain))
    return phi


def permutation_shapley(
    value_fn,
    m: int,
    n_permutations: int,
    rng: np.random.Generator,
    chunk: int = 64,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo Shapley by sampling group orderings.

    Returns the estimate and its standard error per group.
    """
    if m < 1:
        raise ValueError("need at least one group")
    if n_permutations < 1:
        raise ValueError("n_permutations must be >= 1")
    sums = np.zeros(m)
    sq_sums = np.zeros(m)
    done = 0
    while done < n_permutations:
        k = min(chunk, n_permutations - done)
        perms = np.stack([rng.permutation(m) for _ in range(k)])
        # prefix masks: row p*(m+1)+j holds the first j groups of perm p
        masks = np.zeros((k * (m + 1), m), dtype=bool)
        for p in range(k):
            base = p * (m + 1)
            for j in range(1, m + 1):
                masks[base + j] = masks[base + j - 1]
                masks[base + j, perms[p, j - 1]] = True
        values = value_fn(masks)
        for p in range(k):
            base = p * (m + 1)
            gains = values[base + 1 : base + m + 1] - values[base : base + m]
            sums[perms[p]] += gains
            sq_sums[perms[p]] += gains * gains
        done += k
    phi = sums / n_permutations
    var = np.maximum(sq_sums / n_permutations - phi * phi, 0.0)
    se = np.sqrt(var / n_permutations)
    return phi, se


def _variant_inputs(record: SubjectRecord, groups: list[FeatureGroup], background: Background):
    feats = np.asarray(record.node_features, dtype=np.float64)
    own = {
        "gdv_orbit": feats[:, _GDV_COL0 : _GDV_COL0 + ORBITS],
        "age": np.zeros(len(AGE_BANDS)),
        "edu": np.zeros(len(EDU_BANDS)),
        "npt": np.asarray(record.npt, dtype=np.float64),
    }
    own["age"][record.age_group] = 1.0
    own["edu"][record.edu_group] = 1.0

    def build(masks: np.ndarray) -> list[tuple]:
        variants = []
        for row in masks:
            f = feats.copy()
            f[:, _GDV_COL0 : _GDV_COL0 + ORBITS] = background.orbit_means
            age = background.age_mean.copy()
            edu = background.edu_mean.copy()
            npt = background.npt_mean.copy()
            for g, present in zip(groups, row):
                if not present:
                    continue
                if g.kind == "gdv_orbit":
                    f[:, _GDV_COL0 + g.index] = own["gdv_orbit"][:, g.index]
                elif g.kind == "age":
                    age[g.index] = own["age"][g.index]
                elif g.kind == "edu":
                    edu[g.index] = own["edu"][g.index]
                else:
                    npt[g.index] = own["npt"][g.index]
            variants.append((f, age, edu, npt))
        return variants

    return build


def shapley_values(
    model: TrainedModel,
    record: SubjectRecord,
    groups: list[FeatureGroup],
    background: Background,
    mode: str = "auto",
    n_permutations: int = 2048,
    seed: int = 0,
) -> AttributionReport:
    """Attribute the model's probability for one subject across groups.

    mode "auto" enumerates exactly up to 20 groups and falls back to
    permutation sampling beyond that.
    """
    if mode not in ("auto", "exact", "sampled"):
        raise ValueError(f"mode must be auto, exact, or sampled, got {mode!r}")
    m = len(groups)
    if m == 0:
        raise ValueError("need at least one feature group")
    build = _variant_inputs(record, groups, background)

    def value_fn(masks: np.ndarray) -> np.ndarray:
        return score_variants(model, record.graph, build(masks))

    resolved = mode
    if mode == "auto":
        resolved = "exact" if m <= 20 else "sampled"
    if resolved == "exact":
        phi = exact_shapley(value_fn, m)
        se = None
        n_used = 0
    else:
        rng = np.random.default_rng(seed)
        phi, se = permutation_shapley(value_fn, m, n_permutations, rng)
        n_used = n_permutations
    baseline = float(value_fn(np.zeros((1, m), dtype=bool))[0])
    full = float(value_fn(np.ones((1, m), dtype=bool))[0])
    return AttributionReport(
        subject_id=record.subject_id,
        group_names=[g.name for g in groups],
        values=phi,
        baseline=baseline,
        model_output=full,
        mode=resolved,
        n_permutations=n_used,
        std_errors=se,
    )


def global_importance(reports: list[AttributionReport]) -> list[tuple[str, float]]:
    """Mean |value| per group across subjects, descending."""
    if not reports:
        raise ValueError("need at least one attribution report")
    names = reports[0].group_names
    for r in reports[1:]:
        if r.group_names != names:
            raise ValueError("attribution reports disagree on group names")
    stacked = np.stack([np.abs(r.values) for r in reports])
    means = stacked.mean(axis=0)
    order = np.argsort(-means, kind="mergesort")
    return [(names[int(i)], float(means[int(i)])) for i in order]


def save_attributions_csv(reports: list[AttributionReport], path: str) -> None:
    if not reports:
        raise ValueError("nothing to save")
    names = reports[0].group_names
    with open(path, "w") as fh:
        fh.write("subject_id,mode,baseline,model_output," + ",".join(n.replace(",", ";") for n in names) + "\n")
        for r in reports:
            cells = [r.subject_id, r.mode, repr(r.baseline), repr(r.model_output)]
            cells += [repr(float(v)) for v in r.values]
            fh.write(",".join(cells) + "\n")


def save_ranking_csv(ranking: list[tuple[str, float]], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("rank,group,mean_abs_shap\n")
        for i, (name, value) in enumerate(ranking, start=1):
            fh.write(f"{i},{name.replace(',', ';')},{value!r}\n")


def save_ranking_svg(ranking: list[tuple[str, float]], path: str, top: int = 15) -> None:
    rows = ranking[:top]
    bar_h, gap, label_w, plot_w = 18, 6, 150, 420
    height = len(rows) * (bar_h + gap) + gap
    peak = max((v for _, v in rows), default=1.0) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{label_w + plot_w + 80}" height="{height}">',
        '<style>text{font-family:sans-serif;font-size:11px;}</style>',
    ]
    for i, (name, value) in enumerate(rows):
        y = gap + i * (bar_h + gap)
        w = plot_w * value / peak
        parts.append(f'<text x="{label_w - 6}" y="{y + bar_h - 5}" text-anchor="end">{name}</text>')
        parts.append(f'<rect x="{label_w}" y="{y}" width="{w:.2f}" height="{bar_h}" fill="#4878a8"/>')
        parts.append(f'<text x="{label_w + w + 4:.2f}" y="{y + bar_h - 5}">{value:.4f}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")
