"""Stratified splitting, classification metrics, and the ablation harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.8, 0.1, 0.1)
    seed: int = 0
    stratify_by_label: bool = True
    enforce_nonempty: bool = True

    def __post_init__(self) -> None:
        if len(self.fractions) != 3:
            raise ValueError("fractions must name (train, val, test)")
        if any(f < 0 for f in self.fractions):
            raise ValueError("fractions must be non-negative")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(self.fractions)}")


def _largest_remainder(count: int, fractions: tuple) -> list[int]:
    """Round count * fractions to integers that sum to count exactly.

    Ties between equal remainders go to the earlier split.
    """
    targets = [count * f for f in fractions]
    counts = [int(np.floor(t)) for t in targets]
    leftover = count - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(targets[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def _apportion(count: int, spec: SplitSpec, what: str) -> list[int]:
    counts = _largest_remainder(count, spec.fractions)
    if spec.enforce_nonempty:
        needy = [i for i, f in enumerate(spec.fractions) if f > 0 and counts[i] == 0]
        for i in needy:
            donor = int(np.argmax(counts))
            if counts[donor] <= 1:
                raise ValueError(f"{what}: too few records ({count}) to populate all splits")
            counts[donor] -= 1
            counts[i] += 1
        if any(f > 0 and c == 0 for f, c in zip(spec.fractions, counts)):
            raise ValueError(f"{what}: too few records ({count}) to populate all splits")
    return counts


def stratified_split(records: list, spec: SplitSpec) -> tuple[list, list, list]:
    """Shuffle and split records by .label so each class honors the fractions.

    Per-class counts come from largest-remainder rounding of the exact
    targets; with enforce_nonempty on, classes too small to give every
    positive-fraction split a record raise instead of silently merging.
    """
    if not records:
        raise ValueError("cannot split an empty record list")
    rng = np.random.default_rng(spec.seed)
    if spec.stratify_by_label:
        groups: dict[int, list] = {}
        for r in records:
            groups.setdefault(int(r.label), []).append(r)
        class_order = sorted(groups)
    else:
        groups = {0: list(records)}
        class_order = [0]
    splits: tuple[list, list, list] = ([], [], [])
    for cls in class_order:
        members = groups[cls]
        perm = rng.permutation(len(members))
        counts = _apportion(len(members), spec, f"class {cls}")
        at = 0
        for si, c in enumerate(counts):
            splits[si].extend(members[int(i)] for i in perm[at : at + c])
            at += c
    return splits


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def macro_f1(labels: np.ndarray, predictions: np.ndarray) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))
    return 0.5 * (_f1(tp, fp, fn) + _f1(tn, fn, fp))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Probability a positive outranks a negative, ties counting half.

    None when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = int(labels.sum())
    neg = len(labels) - pos
    if pos == 0 or neg == 0:
        return None
    ranks = _average_ranks(scores)
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


def auprc_score(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Average precision: sum of precision * recall increments over
    descending score thresholds, with tied scores grouped."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = int(labels.sum())
    if pos == 0 or pos == len(labels):
        return None
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    ap = 0.0
    tp = 0
    seen = 0
    prev_recall = 0.0
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        tp += int(sorted_labels[i : j + 1].sum())
        seen += j - i + 1
        recall = tp / pos
        precision = tp / seen
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return ap


@dataclass
class MetricReport:
    accuracy: float
    f1_positive: float
    macro_f1: float
    auc: float | None
    auprc: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    n_samples: int


def compute_metrics(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> MetricReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores and labels must be matching 1-D arrays, got {scores.shape} and {labels.shape}")
    if len(scores) == 0:
        raise ValueError("cannot compute metrics without samples")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    preds = (scores >= threshold).astype(np.int64)
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    tn = int(np.sum((preds == 0) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    return MetricReport(
        accuracy=(tp + tn) / len(labels),
        f1_positive=_f1(tp, fp, fn),
        macro_f1=0.5 * (_f1(tp, fp, fn) + _f1(tn, fn, fp)),
        auc=auc_score(scores, labels),
        auprc=auprc_score(scores, labels),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        n_samples=len(labels),
    )


ABLATION_METRICS = ("accuracy", "f1_positive", "macro_f1", "auc", "auprc")

DEFAULT_MASKS = (
    "graph,age,edu,npt",
    "graph,age,edu",
    "graph,age,npt",
    "graph,edu,npt",
    "graph",
    "age,edu,npt",
)


@dataclass
class AblationRow:
    mask: str
    n_repeats: int
    means: dict[str, float]
    stds: dict[str, float]

    def cell(self, metric: str) -> str:
        return f"{self.means[metric]:.3f} ± {self.stds[metric]:.3f}"


def run_ablation(
    records: list,
    masks: list[str],
    cfg,
    n_repeats: int = 5,
    split_spec: SplitSpec | None = None,
) -> list[AblationRow]:
    """Train and test each modality mask across repeated stratified
    re-splits; every mask sees the same split in a given repeat."""
    from . import model as model_mod

    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    base = split_spec or SplitSpec(seed=cfg.seed)
    per_mask: dict[str, list[dict[str, float]]] = {m: [] for m in masks}
    for rep in range(n_repeats):
        spec = SplitSpec(
            fractions=base.fractions,
            seed=base.seed + rep,
            stratify_by_label=base.stratify_by_label,
            enforce_nonempty=base.enforce_nonempty,
        )
        train_set, val_set, test_set = stratified_split(records, spec)
        test_labels = np.array([r.label for r in test_set], dtype=np.int64)
        for mask in masks:
            run_cfg = model_mod.clone_config(cfg, modality_mask=mask, seed=cfg.seed + rep)
            trained = model_mod.train(train_set, val_set, run_cfg)
            report = compute_metrics(model_mod.predict(trained, test_set), test_labels)
            per_mask[mask].append(
                {
                    "accuracy": report.accuracy,
                    "f1_positive": report.f1_positive,
                    "macro_f1": report.macro_f1,
                    "auc": np.nan if report.auc is None else report.auc,
                    "auprc": np.nan if report.auprc is None else report.auprc,
                }
            )
    rows = []
    for mask in masks:
        runs = per_mask[mask]
        means = {m: float(np.nanmean([r[m] for r in runs])) for m in ABLATION_METRICS}
        stds = {m: float(np.nanstd([r[m] for r in runs])) for m in ABLATION_METRICS}
        rows.append(AblationRow(mask=mask, n_repeats=n_repeats, means=means, stds=stds))
    return rows


def format_ablation_table(rows: list[AblationRow]) -> str:
    header = ["modalities"] + list(ABLATION_METRICS)
    body = [[row.mask] + [row.cell(m) for m in ABLATION_METRICS] for row in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def save_ablation_csv(rows: list[AblationRow], path: str) -> None:
    cols = ["mask", "n_repeats"]
    for m in ABLATION_METRICS:
        cols.extend([f"{m}_mean", f"{m}_std"])
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            cells = [row.mask.replace(",", "+"), str(row.n_repeats)]
            for m in ABLATION_METRICS:
                cells.extend([repr(row.means[m]), repr(row.stds[m])])
            fh.write(",".join(cells) + "\n")


def save_metric_report(report: MetricReport, path: str) -> None:
    with open(path, "w") as fh:
        for key in ("accuracy", "f1_positive", "macro_f1", "auc", "auprc"):
            value = getattr(report, key)
            fh.write(f"{key}={'NA' if value is None else repr(value)}\n")
        for key in ("tp", "fp", "tn", "fn", "n_samples"):
            fh.write(f"{key}={getattr(report, key)}\n")
