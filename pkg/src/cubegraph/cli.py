"""Command-line entry point: image vectorization, feature extraction,
cohort synthesis, training, evaluation, ablation, and attribution.

All knobs live in one flat key=value namespace. Values come from built-in
defaults, then an optional --config file, then --set KEY=VALUE overrides,
then the dedicated flags (--seed, --mask, --epsilon, --delta). Unknown keys
are rejected. Every run echoes its effective configuration into the output
directory so artifacts are reproducible from disk alone.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import evaluation, explain, features, graphbuild, model, raster, synth, vectorize

CONFIG_DEFAULTS = {
    "window_radius": 15,
    "offset": 10.0,
    "invert": False,
    "min_component_px": 20,
    "epsilon": 3.0,
    "delta": 10.0,
    "gat_layers": 2,
    "hidden_dim": 32,
    "attention_heads": 4,
    "leaky_slope": 0.2,
    "mlp_hidden": 16,
    "epochs": 300,
    "learning_rate": 0.01,
    "momentum": 0.9,
    "weight_decay": 1e-4,
    "class_weight": "auto",
    "mask": "graph,age,edu,npt",
    "npt_dim": 1,
    "attn_variant": "v2",
    "train_frac": 0.8,
    "val_frac": 0.1,
    "test_frac": 0.1,
    "repeats": 5,
    "n_subjects": 200,
    "ad_fraction": 0.25,
    "style": "transparent",
    "shap_mode": "auto",
    "n_permutations": 2048,
    "explain_subjects": 8,
    "use_groundtruth": False,
    "seed": 0,
}

OUT_ENV_VAR = "CUBEGRAPH_OUT"


class ConfigError(Exception):
    pass


def _coerce(key: str, raw: str):
    default = CONFIG_DEFAULTS[key]
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return raw.strip()


def _parse_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected KEY=VALUE, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in CONFIG_DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce(key, value)
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(CONFIG_DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(_parse_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(f"--set: unknown config key {key!r}")
        cfg[key] = _coerce(key, value)
    for flag, key in (("seed", "seed"), ("mask", "mask"), ("epsilon", "epsilon"), ("delta", "delta")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _out_dir(args: argparse.Namespace) -> str:
    out = getattr(args, "out", None) or os.environ.get(OUT_ENV_VAR) or "cubegraph_out"
    os.makedirs(out, exist_ok=True)
    return out


def _subdir(out: str, name: str) -> str:
    path = os.path.join(out, name)
    os.makedirs(path, exist_ok=True)
    return path


def write_effective_config(cfg: dict, subcommand: str, out: str) -> None:
    lines = [f"subcommand={subcommand}"]
    for key in sorted(cfg):
        value = cfg[key]
        lines.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    with open(os.path.join(out, "effective_config.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _raster_config(cfg: dict) -> raster.RasterConfig:
    return raster.RasterConfig(
        window_radius=cfg["window_radius"],
        offset=cfg["offset"],
        invert=cfg["invert"],
        min_component_px=cfg["min_component_px"],
    )


def _model_config(cfg: dict) -> model.ModelConfig:
    raw_weight = str(cfg["class_weight"]).strip().lower()
    if raw_weight in ("auto", "none", ""):
        class_weight = None
    else:
        try:
            class_weight = float(raw_weight)
        except ValueError:
            raise ConfigError(f"class_weight: expected 'auto' or a number, got {cfg['class_weight']!r}") from None
    return model.ModelConfig(
        gat_layers=cfg["gat_layers"],
        hidden_dim=cfg["hidden_dim"],
        attention_heads=cfg["attention_heads"],
        leaky_slope=cfg["leaky_slope"],
        mlp_hidden=cfg["mlp_hidden"],
        epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"],
        momentum=cfg["momentum"],
        weight_decay=cfg["weight_decay"],
        class_weight=class_weight,
        seed=cfg["seed"],
        modality_mask=cfg["mask"],
        npt_dim=cfg["npt_dim"],
        attn_variant=cfg["attn_variant"],
    )


def _split_spec(cfg: dict) -> evaluation.SplitSpec:
    return evaluation.SplitSpec(
        fractions=(cfg["train_frac"], cfg["val_frac"], cfg["test_frac"]),
        seed=cfg["seed"],
    )


def image_to_graph(image: raster.RasterImage, cfg: dict):
    """Full vectorization chain: binarize, thin, trace, simplify, merge."""
    rcfg = _raster_config(cfg)
    binary = raster.denoise(raster.adaptive_threshold(image, rcfg), rcfg)
    skeleton = raster.skeletonize(binary)
    lines = vectorize.trace_polylines(skeleton)
    scfg = vectorize.SimplifyConfig(epsilon=cfg["epsilon"])
    simplified = [vectorize.simplify(line, scfg) for line in lines]
    graph = graphbuild.canonicalize(
        graphbuild.build_graph(simplified, graphbuild.MergeConfig(delta=cfg["delta"]))
    )
    return graph, simplified


def _pipeline_meta(cfg: dict, source: str) -> dict:
    return {
        "source": source,
        "window_radius": str(cfg["window_radius"]),
        "offset": repr(cfg["offset"]),
        "invert": str(cfg["invert"]),
        "min_component_px": str(cfg["min_component_px"]),
        "epsilon": repr(cfg["epsilon"]),
        "delta": repr(cfg["delta"]),
    }


def records_from_manifest(data_dir: str, cfg: dict, graph_dir: str | None = None, feature_dir: str | None = None):
    """Build subject records from a cohort directory.

    With use_groundtruth the stored graphs are taken as-is; otherwise each
    image runs through the vectorization chain. Optionally writes the graphs
    and feature matrices used.
    """
    rows = synth.load_manifest(os.path.join(data_dir, "manifest.csv"))
    records = []
    for row in rows:
        if cfg["use_groundtruth"]:
            graph, _ = graphbuild.load_graph(os.path.join(data_dir, row.graph_file))
            source = row.graph_file
        else:
            image = raster.load_image(os.path.join(data_dir, row.image_file))
            graph, _ = image_to_graph(image, cfg)
            source = row.image_file
        if graph.node_count == 0:
            raise ValueError(
                f"subject {row.subject_id}: no strokes recovered from {source}; "
                "check the raster settings"
            )
        feats = features.assemble_features(graph)
        if graph_dir is not None:
            graphbuild.save_graph(graph, os.path.join(graph_dir, f"{row.subject_id}.json"), _pipeline_meta(cfg, source))
        if feature_dir is not None:
            features.save_features_csv(feats, os.path.join(feature_dir, f"{row.subject_id}.csv"))
        records.append(
            model.SubjectRecord(
                subject_id=row.subject_id,
                graph=graph,
                node_features=feats,
                age_group=row.age_group,
                edu_group=row.edu_group,
                npt=np.full(cfg["npt_dim"], row.npt),
                label=row.label,
            )
        )
    return records


def _cmd_vectorize(cfg: dict, args: argparse.Namespace) -> None:
    out = _out_dir(args)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    image = raster.load_image(args.image)
    graph, lines = image_to_graph(image, cfg)
    graph_dir = _subdir(out, "graphs")
    report_dir = _subdir(out, "reports")
    graph_path = os.path.join(graph_dir, f"{stem}.json")
    graphbuild.save_graph(graph, graph_path, _pipeline_meta(cfg, args.image))
    vectorize.save_polylines_text(lines, os.path.join(graph_dir, f"{stem}.polylines.txt"))
    vectorize.save_polylines_svg(lines, os.path.join(report_dir, f"{stem}.svg"), width=image.pixels.shape[1], height=image.pixels.shape[0])
    write_effective_config(cfg, "vectorize", out)
    print(f"vectorize: {args.image} -> {graph_path} ({graph.node_count} nodes, {graph.edge_count} edges)")


def _cmd_features(cfg: dict, args: argparse.Namespace) -> None:
    out = _out_dir(args)
    stem = os.path.splitext(os.path.basename(args.graph))[0]
    graph, _ = graphbuild.load_graph(args.graph)
    feats = features.assemble_features(graph)
    feature_dir = _subdir(out, "features")
    path = os.path.join(feature_dir, f"{stem}.csv")
    features.save_features_csv(feats, path)
    write_effective_config(cfg, "features", out)
    print(f"features: {args.graph} -> {path} ({feats.shape[0]} nodes x {feats.shape[1]} columns)")


def _cmd_synth(cfg: dict, args: argparse.Namespace) -> None:
    out = _out_dir(args)
    rows = synth.generate_cohort(
        out,
        n_subjects=cfg["n_subjects"],
        ad_fraction=cfg["ad_fraction"],
        seed=cfg["seed"],
        style=cfg["style"],
    )
    write_effective_config(cfg, "synth", out)
    n_ad = sum(r.label for r in rows)
    print(f"synth: wrote {len(rows)} subjects ({n_ad} positive) under {out}")


def _split_records(records, cfg: dict):
    return evaluation.stratified_split(records, _split_spec(cfg))


def _cmd_train(cfg: dict, args: argparse.Namespace) -> None:
    out = _out_dir(args)
    records = records_from_manifest(args.data, cfg)
    train_r, val_r, _ = _split_records(records, cfg)
    trained = model.train(train_r, val_r, _model_config(cfg))
    ckpt_dir = _subdir(out, "checkpoints")
    report_dir = _subdir(out, "reports")
    ckpt_path = os.path.join(ckpt_dir, "model.txt")
    model.save_model(trained, ckpt_path)
    scores = model.predict(trained, val_r)
    report = evaluation.compute_metrics(scores, np.array([r.label for r in val_r]))
    evaluation.save_metric_report(report, os.path.join(report_dir, "val_metrics.txt"))
    write_effective_config(cfg, "train", out)
    print(
        f"train: {len(train_r)} train / {len(val_r)} val subjects, best epoch {trained.best_epoch}, "
        f"val macro-F1 {trained.val_macro_f1:.3f} -> {ckpt_path}"
    )


def _cmd_eval(cfg: dict, args: argparse.Namespace) -> None:
    out = _out_dir(args)
    trained = model.load_model(args.model)
    records = records_from_manifest(args.data, cfg)
    _, _, test_r = _split_records(records, cfg)
    scores = model.predict(trained, test_r)
    report = evaluation.compute_metrics(scores, np.array([r.label for r in test_r]))
    report_dir = _subdir(out, "reports")
    path = os.path.join(report_dir, "test_metrics.txt")
    evaluation.save_metric_report(report, path)
    write_effective_config(cfg, "eval", out)
    auc = "NA" if report.auc is None else f"{report.auc:.3f}"
    print(f"eval: {report.n_samples} test subjects, accuracy {report.accuracy:.3f}, macro-F1 {report.macro_f1:.3f}, AUC {auc} -> {path}")


def _cmd_ablate(cfg: dict, args: argparse.Namespace) -> None:
    out = _out_dir(args)
    records = records_from_manifest(args.data, cfg)
    rows = evaluation.run_ablation(
        records,
        list(evaluation.DEFAULT_MASKS),
        _model_config(cfg),
        n_repeats=cfg["repeats"],
        split_spec=_split_spec(cfg),
    )
    report_dir = _subdir(out, "reports")
    evaluation.save_ablation_csv(rows, os.path.join(report_dir, "ablation.csv"))
    table = evaluation.format_ablation_table(rows)
    with open(os.path.join(report_dir, "ablation.txt"), "w") as fh:
        fh.write(table + "\n")
    write_effective_config(cfg, "ablate", out)
    print(table)


def _cmd_explain(cfg: dict, args: argparse.Namespace) -> None:
    out = _out_dir(args)
    trained = model.load_model(args.model)
    records = records_from_manifest(args.data, cfg)
    train_r, _, test_r = _split_records(records, cfg)
    background = explain.build_background(train_r, npt_dim=cfg["npt_dim"])
    groups = explain.default_feature_groups(npt_dim=cfg["npt_dim"])
    if args.subject:
        chosen = [r for r in records if r.subject_id == args.subject]
        if not chosen:
            raise ValueError(f"subject {args.subject!r} not found in {args.data}")
    else:
        chosen = test_r[: cfg["explain_subjects"]]
    reports = [
        explain.shapley_values(
            trained,
            r,
            groups,
            background,
            mode=cfg["shap_mode"],
            n_permutations=cfg["n_permutations"],
            seed=cfg["seed"],
        )
        for r in chosen
    ]
    report_dir = _subdir(out, "reports")
    explain.save_attributions_csv(reports, os.path.join(report_dir, "attributions.csv"))
    ranking = explain.global_importance(reports)
    explain.save_ranking_csv(ranking, os.path.join(report_dir, "shap_ranking.csv"))
    explain.save_ranking_svg(ranking, os.path.join(report_dir, "shap_ranking.svg"))
    write_effective_config(cfg, "explain", out)
    top = ", ".join(f"{name} ({value:.4f})" for name, value in ranking[:3])
    print(f"explain: attributed {len(reports)} subjects ({reports[0].mode}); top groups: {top}")


def _cmd_pipeline(cfg: dict, args: argparse.Namespace) -> None:
    out = _out_dir(args)
    graph_dir = _subdir(out, "graphs")
    feature_dir = _subdir(out, "features")
    ckpt_dir = _subdir(out, "checkpoints")
    report_dir = _subdir(out, "reports")
    records = records_from_manifest(args.data, cfg, graph_dir=graph_dir, feature_dir=feature_dir)
    train_r, val_r, test_r = _split_records(records, cfg)
    trained = model.train(train_r, val_r, _model_config(cfg))
    ckpt_path = os.path.join(ckpt_dir, "model.txt")
    model.save_model(trained, ckpt_path)
    val_report = evaluation.compute_metrics(model.predict(trained, val_r), np.array([r.label for r in val_r]))
    evaluation.save_metric_report(val_report, os.path.join(report_dir, "val_metrics.txt"))
    test_report = evaluation.compute_metrics(model.predict(trained, test_r), np.array([r.label for r in test_r]))
    evaluation.save_metric_report(test_report, os.path.join(report_dir, "test_metrics.txt"))
    background = explain.build_background(train_r, npt_dim=cfg["npt_dim"])
    groups = explain.default_feature_groups(npt_dim=cfg["npt_dim"])
    reports = [
        explain.shapley_values(
            trained,
            r,
            groups,
            background,
            mode=cfg["shap_mode"],
            n_permutations=cfg["n_permutations"],
            seed=cfg["seed"],
        )
        for r in test_r[: cfg["explain_subjects"]]
    ]
    explain.save_attributions_csv(reports, os.path.join(report_dir, "attributions.csv"))
    ranking = explain.global_importance(reports)
    explain.save_ranking_csv(ranking, os.path.join(report_dir, "shap_ranking.csv"))
    explain.save_ranking_svg(ranking, os.path.join(report_dir, "shap_ranking.svg"))
    write_effective_config(cfg, "pipeline", out)
    auc = "NA" if test_report.auc is None else f"{test_report.auc:.3f}"
    print(
        f"pipeline: {len(records)} subjects vectorized, trained (best epoch {trained.best_epoch}), "
        f"test macro-F1 {test_report.macro_f1:.3f}, AUC {auc}; artifacts under {out}"
    )


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat KEY=VALUE config file")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    sub.add_argument("--out", help=f"output directory (default ${OUT_ENV_VAR} or ./cubegraph_out)")
    sub.add_argument("--seed", type=int, help="random seed")
    sub.add_argument("--mask", help="enabled modalities, comma-separated subset of graph,age,edu,npt")
    sub.add_argument("--epsilon", type=float, help="polyline simplification tolerance in pixels")
    sub.add_argument("--delta", type=float, help="endpoint merge radius in pixels")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cubegraph",
        description="Hand-drawn cube sketches to graphs, features, and a multimodal classifier.",
    )
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("vectorize", help="image -> sketch graph + SVG overlay")
    p.add_argument("--image", required=True, help="input PNG or PGM file")
    _add_common(p)
    p.set_defaults(func=_cmd_vectorize)

    p = subs.add_parser("features", help="sketch graph -> node feature CSV")
    p.add_argument("--graph", required=True, help="graph file produced by vectorize")
    _add_common(p)
    p.set_defaults(func=_cmd_features)

    p = subs.add_parser("synth", help="generate a synthetic cohort")
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    p = subs.add_parser("train", help="train the fused classifier on a cohort")
    p.add_argument("--data", required=True, help="cohort directory holding manifest.csv")
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("eval", help="score a trained model on the held-out split")
    p.add_argument("--data", required=True, help="cohort directory holding manifest.csv")
    p.add_argument("--model", required=True, help="checkpoint written by train")
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = subs.add_parser("ablate", help="repeat train/eval across modality masks")
    p.add_argument("--data", required=True, help="cohort directory holding manifest.csv")
    _add_common(p)
    p.set_defaults(func=_cmd_ablate)

    p = subs.add_parser("explain", help="Shapley attributions for test subjects")
    p.add_argument("--data", required=True, help="cohort directory holding manifest.csv")
    p.add_argument("--model", required=True, help="checkpoint written by train")
    p.add_argument("--subject", help="attribute one subject id instead of the test split")
    _add_common(p)
    p.set_defaults(func=_cmd_explain)

    p = subs.add_parser("pipeline", help="vectorize, train, eval, and explain in one run")
    p.add_argument("--data", required=True, help="cohort directory holding images and manifest.csv")
    _add_common(p)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
