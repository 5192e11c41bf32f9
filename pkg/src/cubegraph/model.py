"""Attention-based graph encoder with late fusion of demographic and test
scores, trained with momentum SGD on class-weighted cross-entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphbuild import SketchGraph

MODALITIES = ("graph", "age", "edu", "npt")

AGE_BANDS = ("45-49", "50-54", "55-59", "60-64", "65-69", "70-74", "75-79", "80-84", "85-90")
EDU_BANDS = ("illiterate", "0-2", "3-5", "6-9", "10-12", "13-15", "16+")

FEATURE_DIM = 20


@dataclass
class SubjectRecord:
    """One subject: sketch graph with node features plus tabular modalities."""

    subject_id: str
    graph: SketchGraph
    node_features: np.ndarray
    age_group: int
    edu_group: int
    npt: np.ndarray
    label: int

    def __post_init__(self) -> None:
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        self.npt = np.atleast_1d(np.asarray(self.npt, dtype=np.float64))
        if self.node_features.ndim != 2 or self.node_features.shape[0] != self.graph.node_count:
            raise ValueError(
                f"subject {self.subject_id}: feature rows {self.node_features.shape} "
                f"do not match graph size {self.graph.node_count}"
            )
        if not 0 <= self.age_group < len(AGE_BANDS):
            raise ValueError(f"subject {self.subject_id}: age_group {self.age_group} out of range")
        if not 0 <= self.edu_group < len(EDU_BANDS):
            raise ValueError(f"subject {self.subject_id}: edu_group {self.edu_group} out of range")
        if np.any(self.npt < 0) or np.any(self.npt > 1):
            raise ValueError(f"subject {self.subject_id}: npt scores must lie in [0, 1]")
        if self.label not in (0, 1):
            raise ValueError(f"subject {self.subject_id}: label must be 0 or 1, got {self.label}")


def _parse_mask(mask) -> tuple[bool, bool, bool, bool]:
    if isinstance(mask, str):
        wanted = {m.strip() for m in mask.split(",") if m.strip()}
        unknown = wanted - set(MODALITIES)
        if unknown:
            raise ValueError(f"unknown modalities in mask: {sorted(unknown)}")
        return tuple(m in wanted for m in MODALITIES)
    mask = tuple(bool(b) for b in mask)
    if len(mask) != 4:
        raise ValueError(f"modality mask needs 4 entries for {MODALITIES}, got {len(mask)}")
    return mask


@dataclass(frozen=True)
class ModelConfig:
    gat_layers: int = 2
    hidden_dim: int = 32
    attention_heads: int = 4
    leaky_slope: float = 0.2
    mlp_hidden: int = 16
    epochs: int = 300
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    class_weight: float | None = None
    seed: int = 0
    modality_mask: tuple = (True, True, True, True)
    npt_dim: int = 1
    attn_variant: str = "v2"

    def __post_init__(self) -> None:
        object.__setattr__(self, "modality_mask", _parse_mask(self.modality_mask))
        if self.gat_layers < 1:
            raise ValueError("gat_layers must be >= 1")
        if self.attention_heads < 1 or self.hidden_dim < 1 or self.mlp_hidden < 1:
            raise ValueError("hidden_dim, attention_heads, and mlp_hidden must be >= 1")
        if self.gat_layers > 1 and self.hidden_dim % self.attention_heads:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} must divide evenly into {self.attention_heads} heads"
            )
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.class_weight is not None and self.class_weight < 1:
            raise ValueError("class_weight must be >= 1 for the positive class")
        if self.npt_dim < 1:
            raise ValueError("npt_dim must be >= 1")
        if self.attn_variant not in ("v1", "v2"):
            raise ValueError(f"attn_variant must be 'v1' or 'v2', got {self.attn_variant!r}")
        if not any(self.modality_mask):
            raise ValueError("at least one modality must stay enabled")

    def enabled(self, modality: str) -> bool:
        return self.modality_mask[MODALITIES.index(modality)]

    def mask_name(self) -> str:
        return "+".join(m for m, on in zip(MODALITIES, self.modality_mask) if on)

    def to_meta(self) -> dict[str, str]:
        meta = {
            "gat_layers": str(self.gat_layers),
            "hidden_dim": str(self.hidden_dim),
            "attention_heads": str(self.attention_heads),
            "leaky_slope": repr(self.leaky_slope),
            "mlp_hidden": str(self.mlp_hidden),
            "epochs": str(self.epochs),
            "learning_rate": repr(self.learning_rate),
            "momentum": repr(self.momentum),
            "weight_decay": repr(self.weight_decay),
            "class_weight": "auto" if self.class_weight is None else repr(self.class_weight),
            "seed": str(self.seed),
            "modality_mask": ",".join(m for m, on in zip(MODALITIES, self.modality_mask) if on),
            "npt_dim": str(self.npt_dim),
            "attn_variant": self.attn_variant,
        }
        return meta

    @staticmethod
    def from_meta(meta: dict[str, str]) -> "ModelConfig":
        return ModelConfig(
            gat_layers=int(meta["gat_layers"]),
            hidden_dim=int(meta["hidden_dim"]),
            attention_heads=int(meta["attention_heads"]),
            leaky_slope=float(meta["leaky_slope"]),
            mlp_hidden=int(meta["mlp_hidden"]),
            epochs=int(meta["epochs"]),
            learning_rate=float(meta["learning_rate"]),
            momentum=float(meta["momentum"]),
            weight_decay=float(meta["weight_decay"]),
            class_weight=None if meta["class_weight"] == "auto" else float(meta["class_weight"]),
            seed=int(meta["seed"]),
            modality_mask=meta["modality_mask"],
            npt_dim=int(meta["npt_dim"]),
            attn_variant=meta["attn_variant"],
        )


@dataclass
class TrainedModel:
    params: dict[str, np.ndarray]
    config: ModelConfig
    best_epoch: int
    val_macro_f1: float


def _head_width(cfg: ModelConfig, layer: int) -> int:
    # hidden layers concatenate heads back to hidden_dim; the final layer
    # averages heads of full width, so the embedding stays hidden_dim wide
    if layer == cfg.gat_layers - 1:
        return cfg.hidden_dim
    return cfg.hidden_dim // cfg.attention_heads


def _layer_in(cfg: ModelConfig, layer: int, feature_dim: int) -> int:
    return feature_dim if layer == 0 else cfg.hidden_dim


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, feature_dim: int = FEATURE_DIM) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    params: dict[str, np.ndarray] = {}
    if cfg.enabled("graph"):
        for layer in range(cfg.gat_layers):
            fin = _layer_in(cfg, layer, feature_dim)
            width = _head_width(cfg, layer)
            total = cfg.attention_heads * width
            params[f"gat{layer}.w"] = _xavier(rng, fin, total, (fin, total))
            rows = 2 if cfg.attn_variant == "v1" else 1
            params[f"gat{layer}.a"] = _xavier(rng, width, 1, (rows, total))
    # biases start at a small positive constant instead of zero: it keeps
    # units alive initially and keeps pre-activations off the relu kink even
    # when an entire previous layer row is inactive
    bias0 = 0.01
    mod_in = {"age": len(AGE_BANDS), "edu": len(EDU_BANDS), "npt": cfg.npt_dim}
    for name, fin in mod_in.items():
        if not cfg.enabled(name):
            continue
        m = cfg.mlp_hidden
        dims = [(fin, m), (m, m), (m, m)]
        for i, (a, b) in enumerate(dims, start=1):
            params[f"{name}.w{i}"] = _xavier(rng, a, b, (a, b))
            params[f"{name}.b{i}"] = np.full((1, b), bias0)
    fused = cfg.hidden_dim + 3 * cfg.mlp_hidden
    params["fuse.w1"] = _xavier(rng, fused, cfg.mlp_hidden, (fused, cfg.mlp_hidden))
    params["fuse.b1"] = np.full((1, cfg.mlp_hidden), bias0)
    params["fuse.w2"] = _xavier(rng, cfg.mlp_hidden, 1, (cfg.mlp_hidden, 1))
    params["fuse.b2"] = np.full((1, 1), bias0)
    return params


@dataclass
class GraphBatch:
    """Disjoint union of graphs: nodes stacked, edges offset, plus the
    directed edge list (both directions and self-loops) sorted by
    destination so segment ops see contiguous groups."""

    feats: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    node_graph: np.ndarray
    n_nodes: int
    n_graphs: int


def build_graph_batch(items: list[tuple[SketchGraph, np.ndarray]]) -> GraphBatch:
    if not items:
        raise ValueError("cannot batch zero graphs")
    feats = []
    src_all: list[int] = []
    dst_all: list[int] = []
    node_graph: list[int] = []
    offset = 0
    for gi, (graph, f) in enumerate(items):
        n = graph.node_count
        if n == 0:
            raise ValueError(f"graph {gi} in batch is empty")
        f = np.asarray(f, dtype=np.float64)
        if f.shape[0] != n:
            raise ValueError(f"graph {gi}: {f.shape[0]} feature rows for {n} nodes")
        feats.append(f)
        for i, j in graph.edges:
            src_all.extend((offset + i, offset + j))
            dst_all.extend((offset + j, offset + i))
        src_all.extend(range(offset, offset + n))
        dst_all.extend(range(offset, offset + n))
        node_graph.extend([gi] * n)
        offset += n
    src = np.array(src_all, dtype=np.int64)
    dst = np.array(dst_all, dtype=np.int64)
    order = np.lexsort((src, dst))
    return GraphBatch(
        feats=np.vstack(feats),
        src=src[order],
        dst=dst[order],
        node_graph=np.array(node_graph, dtype=np.int64),
        n_nodes=offset,
        n_graphs=len(items),
    )


def _head_mixers(heads: int, width: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Constant matrices translating between per-head blocks and head columns."""
    total = heads * width
    collapse = np.zeros((total, heads))
    for h in range(heads):
        collapse[h * width : (h + 1) * width, h] = 1.0
    expand = collapse.T.copy()
    average = np.tile(np.eye(width), (heads, 1)) / heads
    return collapse, expand, average


def _gat_layers(params: dict[str, Tensor], cfg: ModelConfig, batch: GraphBatch) -> Tensor:
    x = Tensor(batch.feats)
    for layer in range(cfg.gat_layers):
        width = _head_width(cfg, layer)
        heads = cfg.attention_heads
        collapse, expand, average = _head_mixers(heads, width)
        w = params[f"gat{layer}.w"]
        a = params[f"gat{layer}.a"]
        z = ad.matmul(x, w)
        zs = ad.gather_rows(z, batch.src)
        zd = ad.gather_rows(z, batch.dst)
        if cfg.attn_variant == "v2":
            pre = ad.leaky_relu(ad.add(zs, zd), cfg.leaky_slope)
            scored = ad.mul(pre, a)
            logits = ad.matmul(scored, Tensor(collapse))
        else:
            a_src = ad.mul(zs, ad.gather_rows(a, np.array([0])))
            a_dst = ad.mul(zd, ad.gather_rows(a, np.array([1])))
            summed = ad.matmul(ad.add(a_src, a_dst), Tensor(collapse))
            logits = ad.leaky_relu(summed, cfg.leaky_slope)
        alpha = ad.segment_softmax(logits, batch.dst, batch.n_nodes)
        weights = ad.matmul(alpha, Tensor(expand))
        agg = ad.segment_sum(ad.mul(zs, weights), batch.dst, batch.n_nodes)
        if layer == cfg.gat_layers - 1:
            agg = ad.matmul(agg, Tensor(average))
        x = ad.leaky_relu(agg, cfg.leaky_slope)
    return x


def _mlp3(params: dict[str, Tensor], name: str, x: Tensor) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(x, params[f"{name}.w1"]), params[f"{name}.b1"]))
    h = ad.relu(ad.add(ad.matmul(h, params[f"{name}.w2"]), params[f"{name}.b2"]))
    return ad.add(ad.matmul(h, params[f"{name}.w3"]), params[f"{name}.b3"])


def forward_scores(
    params: dict[str, Tensor],
    cfg: ModelConfig,
    batch: GraphBatch | None,
    age_rows: np.ndarray,
    edu_rows: np.ndarray,
    npt_rows: np.ndarray,
    n_subjects: int,
) -> Tensor:
    """Fused probability per subject, shape (n_subjects, 1).

    Disabled modalities contribute a constant zero embedding, so the output
    provably cannot depend on their inputs.
    """
    parts: list[Tensor] = []
    if cfg.enabled("graph"):
        if batch is None:
            raise ValueError("graph modality enabled but no graph batch given")
        node_states = _gat_layers(params, cfg, batch)
        parts.append(ad.segment_mean(node_states, batch.node_graph, batch.n_graphs))
    else:
        parts.append(Tensor(np.zeros((n_subjects, cfg.hidden_dim))))
    for name, rows in (("age", age_rows), ("edu", edu_rows), ("npt", npt_rows)):
        if cfg.enabled(name):
            parts.append(_mlp3(params, name, Tensor(rows)))
        else:
            parts.append(Tensor(np.zeros((n_subjects, cfg.mlp_hidden))))
    fused = ad.concat(parts, axis=1)
    h = ad.relu(ad.add(ad.matmul(fused, params["fuse.w1"]), params["fuse.b1"]))
    logits = ad.add(ad.matmul(h, params["fuse.w2"]), params["fuse.b2"])
    return ad.sigmoid(logits)


def one_hot(index: int | np.ndarray, size: int) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(index, dtype=np.int64))
    out = np.zeros((len(idx), size))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def _tabular_rows(records: list[SubjectRecord], cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    age = one_hot([r.age_group for r in records], len(AGE_BANDS))
    edu = one_hot([r.edu_group for r in records], len(EDU_BANDS))
    npt = np.zeros((len(records), cfg.npt_dim))
    for i, r in enumerate(records):
        if r.npt.size != cfg.npt_dim:
            raise ValueError(
                f"subject {r.subject_id}: expected {cfg.npt_dim} npt scores, got {r.npt.size}"
            )
        npt[i] = r.npt
    return age, edu, npt


def _wrap_params(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def _scores_for(params: dict[str, np.ndarray], cfg: ModelConfig, records: list[SubjectRecord]) -> np.ndarray:
    if not records:
        return np.zeros(0)
    wrapped = _wrap_params(params)
    batch = None
    if cfg.enabled("graph"):
        batch = build_graph_batch([(r.graph, r.node_features) for r in records])
    age, edu, npt = _tabular_rows(records, cfg)
    out = forward_scores(wrapped, cfg, batch, age, edu, npt, len(records))
    return out.data[:, 0].copy()


def predict(model: TrainedModel, records: list[SubjectRecord]) -> np.ndarray:
    """Probability of the positive class for each record."""
    return _scores_for(model.params, model.config, records)


def encode_and_fuse(record: SubjectRecord, model: TrainedModel) -> float:
    return float(predict(model, [record])[0])


def gat_encode(graph: SketchGraph, node_features: np.ndarray, params: dict[str, np.ndarray], cfg: ModelConfig) -> np.ndarray:
    """Graph embedding (mean of final node states) for a single graph."""
    batch = build_graph_batch([(graph, node_features)])
    states = _gat_layers(_wrap_params(params), cfg, batch)
    emb = ad.segment_mean(states, batch.node_graph, batch.n_graphs)
    return emb.data[0].copy()


def score_variants(
    model: TrainedModel,
    graph: SketchGraph,
    variants: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]],
) -> np.ndarray:
    """Scores for many input variants sharing one graph topology.

    Each variant is (node_features, age_row, edu_row, npt_row); rows are raw
    vectors fed straight to the modality encoders, which lets callers probe
    the model off the one-hot manifold.
    """
    cfg = model.config
    if not variants:
        return np.zeros(0)
    params = _wrap_params(model.params)
    batch = None
    if cfg.enabled("graph"):
        batch = build_graph_batch([(graph, f) for f, _, _, _ in variants])
    age = np.vstack([a.reshape(1, -1) for _, a, _, _ in variants])
    edu = np.vstack([e.reshape(1, -1) for _, _, e, _ in variants])
    npt = np.vstack([p.reshape(1, -1) for _, _, _, p in variants])
    out = forward_scores(params, cfg, batch, age, edu, npt, len(variants))
    return out.data[:, 0].copy()


def _macro_f1_at_half(scores: np.ndarray, labels: np.ndarray) -> float:
    from .evaluation import macro_f1

    return macro_f1(labels, (scores >= 0.5).astype(int))


def train(
    train_records: list[SubjectRecord],
    val_records: list[SubjectRecord],
    cfg: ModelConfig,
) -> TrainedModel:
    """Full-batch momentum SGD; keeps the epoch with the best validation
    macro-F1 (earlier epoch wins ties)."""
    if not train_records:
        raise ValueError("training set is empty")
    if not val_records:
        raise ValueError("validation set is empty")
    labels = np.array([r.label for r in train_records], dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("training set must contain both classes")
    pos_weight = cfg.class_weight if cfg.class_weight is not None else n_neg / n_pos
    weights = np.where(labels > 0.5, pos_weight, 1.0)[:, None]
    targets = labels[:, None]
    val_labels = np.array([r.label for r in val_records], dtype=np.int64)

    params = init_params(cfg)
    batch = None
    if cfg.enabled("graph"):
        batch = build_graph_batch([(r.graph, r.node_features) for r in train_records])
    age, edu, npt = _tabular_rows(train_records, cfg)

    best = {name: arr.copy() for name, arr in params.items()}
    best_f1 = _macro_f1_at_half(_scores_for(params, cfg, val_records), val_labels)
    best_epoch = 0
    velocity = {name: np.zeros_like(arr) for name, arr in params.items()}

    for epoch in range(1, cfg.epochs + 1):
        wrapped = _wrap_params(params)
        probs = forward_scores(wrapped, cfg, batch, age, edu, npt, len(train_records))
        loss = ad.bce_loss(probs, targets, weights)
        if not np.isfinite(loss.data):
            raise RuntimeError(f"non-finite training loss at epoch {epoch}")
        ad.backward(loss)
        for name in params:
            grad = wrapped[name].grad
            if grad is None:
                grad = np.zeros_like(params[name])
            grad = grad + cfg.weight_decay * params[name]
            velocity[name] = cfg.momentum * velocity[name] - cfg.learning_rate * grad
            params[name] = params[name] + velocity[name]
        f1 = _macro_f1_at_half(_scores_for(params, cfg, val_records), val_labels)
        if f1 > best_f1:
            best_f1 = f1
            best_epoch = epoch
            best = {name: arr.copy() for name, arr in params.items()}
    return TrainedModel(params=best, config=cfg, best_epoch=best_epoch, val_macro_f1=best_f1)


def save_model(model: TrainedModel, path: str) -> None:
    meta = {f"config.{k}": v for k, v in model.config.to_meta().items()}
    meta["best_epoch"] = str(model.best_epoch)
    meta["val_macro_f1"] = repr(model.val_macro_f1)
    ad.save_checkpoint(path, model.params, meta)


def load_model(path: str) -> TrainedModel:
    params, meta = ad.load_checkpoint(path)
    cfg_meta = {k.split(".", 1)[1]: v for k, v in meta.items() if k.startswith("config.")}
    missing = set(ModelConfig().to_meta()) - set(cfg_meta)
    if missing:
        raise ValueError(f"checkpoint {path} lacks config entries: {sorted(missing)}")
    cfg = ModelConfig.from_meta(cfg_meta)
    expected = set(init_params(cfg))
    if expected != set(params):
        raise ValueError(
            f"checkpoint {path} parameters do not match its config "
            f"(missing {sorted(expected - set(params))}, extra {sorted(set(params) - expected)})"
        )
    for name, ref in init_params(cfg).items():
        if params[name].shape != ref.shape:
            raise ValueError(
                f"checkpoint {path}: parameter {name} has shape {params[name].shape}, expected {ref.shape}"
            )
    return TrainedModel(
        params=params,
        config=cfg,
        best_epoch=int(meta.get("best_epoch", "0")),
        val_macro_f1=float(meta.get("val_macro_f1", "nan")),
    )


def clone_config(cfg: ModelConfig, **overrides) -> ModelConfig:
    return replace(cfg, **overrides)
