"""Acceptance suite: one test per shipped guarantee.

Each test appends a PASS/FAIL line to the terminal summary (see conftest.py)
and asserts the same condition, so the one-line report always matches the
pytest outcome. The cohort experiment (criteria 8 and 9) trains ten models on
a 200-subject synthetic cohort and takes a few minutes; everything else is
fast.
"""

import time
from itertools import combinations

import numpy as np
import pytest

from cubegraph import autodiff as ad
from cubegraph import evaluation, model, explain, synth
from cubegraph.cli import CONFIG_DEFAULTS, image_to_graph, main, records_from_manifest
from cubegraph.features import ORBITS, gdv, gdv_exhaustive
from cubegraph.graphbuild import SketchGraph
from cubegraph.raster import RasterImage
from cubegraph.synth import DistortionParams
from cubegraph.vectorize import SimplifyConfig, simplify


def _verdict(acceptance, number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion-{number}: {detail}"
    acceptance(line)
    assert ok, line


def _graph(n, edges):
    coords = np.array([(float(i), float(i % 3)) for i in range(n)])
    return SketchGraph(nodes=coords, edges=list(edges))


def _orbit_vec(**orbits):
    v = np.zeros(ORBITS, dtype=np.int64)
    for k, c in orbits.items():
        v[int(k[1:])] = c
    return v


# -- criterion 1: optimized orbit counter vs exhaustive enumeration ----------


def _connected(n, edges):
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen, stack = {0}, [0]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == n


def _random_connected_graph(rng):
    while True:
        n = int(rng.integers(2, 10))
        p = float(rng.uniform(0.2, 0.6))
        edges = [(i, j) for i, j in combinations(range(n), 2) if rng.random() < p]
        if _connected(n, edges):
            return _graph(n, edges)


def test_criterion_1_gdv_oracle_equivalence(acceptance):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(200):
        g = _random_connected_graph(rng)
        if not np.array_equal(gdv(g), gdv_exhaustive(g)):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 60.0
    _verdict(
        acceptance, 1,
        ok,
        f"orbit counter matches exhaustive enumeration on 200 random connected graphs ({elapsed:.1f}s)",
    )


# -- criterion 2: analytic orbit fixtures ------------------------------------


def test_criterion_2_gdv_analytic_fixtures(acceptance):
    triangle = gdv(_graph(3, [(0, 1), (1, 2), (0, 2)]))
    path = gdv(_graph(3, [(0, 1), (1, 2)]))
    claw = gdv(_graph(4, [(0, 1), (0, 2), (0, 3)]))
    cube = gdv(
        _graph(8, [(a, b) for a, b in combinations(range(8), 2) if bin(a ^ b).count("1") == 1])
    )
    ok = (
        all(np.array_equal(triangle[v], _orbit_vec(o0=2, o3=1)) for v in range(3))
        and np.array_equal(path[0], _orbit_vec(o0=1, o1=1))
        and np.array_equal(path[1], _orbit_vec(o0=2, o2=1))
        and np.array_equal(path[2], _orbit_vec(o0=1, o1=1))
        and np.array_equal(claw[0], _orbit_vec(o0=3, o2=3, o7=1))
        and all(np.array_equal(claw[v], _orbit_vec(o0=1, o1=2, o6=1)) for v in (1, 2, 3))
        and all(np.array_equal(cube[v], [3, 6, 3, 0, 6, 6, 3, 1, 3, 0, 0, 0, 0, 0, 0]) for v in range(8))
    )
    _verdict(acceptance, 2, ok, "triangle, 3-path, claw, and cube-graph orbit vectors are exact")


# -- criterion 3: simplification property suite -------------------------------


def _dist_to_chain(p, chain):
    best = np.inf
    for a, b in zip(chain[:-1], chain[1:]):
        d = b - a
        length = float(np.hypot(*d))
        if length == 0.0:
            dist = float(np.hypot(*(p - a)))
        else:
            dist = abs((p[0] - a[0]) * d[1] - (p[1] - a[1]) * d[0]) / length
        best = min(best, dist)
    return best


def _is_subsequence(out, line):
    k = 0
    for p in line:
        if k < len(out) and np.array_equal(out[k], p):
            k += 1
    return k == len(out)


def test_criterion_3_simplification_properties(acceptance):
    rng = np.random.default_rng(33)
    ok = True
    for _ in range(1000):
        m = int(rng.integers(2, 30))
        line = np.cumsum(rng.normal(0.0, 5.0, size=(m, 2)), axis=0)
        if m > 3 and rng.random() < 0.2:  # exercise duplicate points
            line[int(rng.integers(1, m - 1))] = line[int(rng.integers(0, m))]
        eps = float(rng.uniform(0.1, 6.0))
        cfg = SimplifyConfig(epsilon=eps)
        out = simplify(line, cfg)
        ok &= np.array_equal(out[0], line[0]) and np.array_equal(out[-1], line[-1])
        ok &= _is_subsequence(out, line)
        ok &= all(_dist_to_chain(p, out) <= eps + 1e-9 for p in line)
        ok &= np.array_equal(simplify(out, cfg), out)
        if not ok:
            break
    _verdict(
        acceptance, 3,
        ok,
        "1000 random polylines: subsequence, endpoints kept, within-epsilon, idempotent",
    )


# -- criterion 4: render -> vectorize round trip ------------------------------


def _graphs_match(truth, recovered, tol_px):
    if truth.node_count != recovered.node_count:
        return None
    taken = set()
    mapping = {}
    worst = 0.0
    for i, (x, y) in enumerate(truth.nodes):
        d = np.hypot(recovered.nodes[:, 0] - x, recovered.nodes[:, 1] - y)
        j = int(np.argmin(d))
        if d[j] > tol_px or j in taken:
            return None
        taken.add(j)
        mapping[i] = j
        worst = max(worst, float(d[j]))
    want = {tuple(sorted((mapping[a], mapping[b]))) for a, b in truth.edges}
    got = {tuple(sorted(e)) for e in recovered.edges}
    return worst if want == got else None


def test_criterion_4_pipeline_round_trip(acceptance):
    cfg = dict(CONFIG_DEFAULTS)
    worst = 0.0
    failures = []
    for seed in range(20):
        img, truth = synth.render_cube(DistortionParams(), np.random.default_rng(seed))
        recovered, _ = image_to_graph(RasterImage(pixels=img), cfg)
        err = _graphs_match(truth.graph, recovered, tol_px=3.0)
        if err is None:
            failures.append(seed)
        else:
            worst = max(worst, err)
    ok = not failures
    _verdict(
        acceptance, 4,
        ok,
        f"20/20 zero-distortion renders recover the reference graph (worst node error {worst:.2f}px)"
        if ok
        else f"seeds {failures} failed to recover the reference graph",
    )


# -- criterion 5: gradient correctness ----------------------------------------


def _fd_worst_error(seed):
    rng = np.random.default_rng(seed)
    cfg = model.ModelConfig(gat_layers=2, hidden_dim=4, attention_heads=2, mlp_hidden=3, seed=seed)
    records = []
    for idx, n in enumerate((3, 4, 5, 4)):
        edges = {(int(rng.integers(0, v)), v) for v in range(1, n)}
        edges.add(tuple(sorted(rng.choice(n, size=2, replace=False))))
        g = SketchGraph(nodes=rng.uniform(0.0, 160.0, size=(n, 2)), edges=sorted(edges))
        records.append(
            model.SubjectRecord(
                subject_id=f"T{idx}",
                graph=g,
                node_features=rng.uniform(0.0, 1.0, size=(n, model.FEATURE_DIM)),
                age_group=int(rng.integers(0, len(model.AGE_BANDS))),
                edu_group=int(rng.integers(0, len(model.EDU_BANDS))),
                npt=np.array([float(rng.uniform())]),
                label=idx % 2,
            )
        )
    params = {k: ad.Tensor(v, requires_grad=True) for k, v in model.init_params(cfg).items()}
    batch = model.build_graph_batch([(r.graph, r.node_features) for r in records])
    age = model.one_hot([r.age_group for r in records], len(model.AGE_BANDS))
    edu = model.one_hot([r.edu_group for r in records], len(model.EDU_BANDS))
    npt = np.stack([r.npt for r in records])
    targets = np.array([[float(r.label)] for r in records])

    def build_loss():
        probs = model.forward_scores(params, cfg, batch, age, edu, npt, len(records))
        return ad.bce_loss(probs, targets)

    return ad.finite_difference_check(build_loss, list(params.values()), h=1e-5)


def test_criterion_5_gradient_correctness(acceptance):
    worst = max(_fd_worst_error(seed) for seed in range(5))
    ok = worst < 1e-4
    _verdict(
        acceptance, 5,
        ok,
        f"finite differences vs backprop on the full model, 5 seeds: max rel err {worst:.2e}",
    )


# -- criterion 6: metric oracles ----------------------------------------------


def _auc_pairwise(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return float(wins) / (len(pos) * len(neg))


def test_criterion_6_metric_oracles(acceptance):
    rng = np.random.default_rng(66)
    max_diff = 0.0
    for _ in range(100):
        m = int(rng.integers(4, 40))
        labels = rng.integers(0, 2, size=m)
        while labels.min() == labels.max():
            labels = rng.integers(0, 2, size=m)
        scores = rng.integers(0, 6, size=m) / 5.0  # coarse grid forces ties
        max_diff = max(max_diff, abs(evaluation.auc_score(scores, labels) - _auc_pairwise(scores, labels)))
    fixture = evaluation.auc_score(np.array([0.9, 0.8, 0.4, 0.3]), np.array([1, 0, 1, 0]))
    sep_scores = np.array([0.9, 0.8, 0.2, 0.1])
    sep_labels = np.array([1, 1, 0, 0])
    ok = (
        max_diff < 1e-9
        and fixture == 0.75
        and evaluation.auc_score(sep_scores, sep_labels) == 1.0
        and evaluation.auprc_score(sep_scores, sep_labels) == 1.0
    )
    _verdict(
        acceptance, 6,
        ok,
        f"AUC == pairwise oracle on 100 trials (max diff {max_diff:.1e}); fixtures exact",
    )


# -- criterion 7: Shapley axioms ----------------------------------------------


def test_criterion_7_shapley_axioms(acceptance):
    rng = np.random.default_rng(77)
    ok = True
    for _ in range(20):
        m = int(rng.integers(3, 11))
        w = rng.normal(0.0, 2.0, size=m)
        pair = rng.choice(m, size=2, replace=False)
        w[pair[1]] = w[pair[0]]  # symmetric pair
        dummy = next(i for i in range(m) if i not in pair)
        w[dummy] = 0.0

        def value(masks, w=w):
            return masks.astype(float) @ w

        phi = explain.exact_shapley(value, m)
        full = value(np.ones((1, m), dtype=bool))[0]
        base = value(np.zeros((1, m), dtype=bool))[0]
        ok &= abs(phi.sum() - (full - base)) < 1e-6  # efficiency
        ok &= phi[dummy] == 0.0  # dummy, exact
        ok &= abs(phi[pair[0]] - phi[pair[1]]) < 1e-9  # symmetry
    linear = explain.exact_shapley(lambda m: m.astype(float) @ np.array([2.0, 3.0]), 2)
    ok &= np.allclose(linear, [2.0, 3.0], atol=1e-9)
    _verdict(
        acceptance, 7,
        ok,
        "exact mode satisfies efficiency, dummy, symmetry on 20 games; linear fixture gives (2,3)",
    )


# -- criteria 8 and 9: cohort experiment --------------------------------------


@pytest.fixture(scope="module")
def cohort_experiment(tmp_path_factory):
    t0 = time.perf_counter()
    cohort = tmp_path_factory.mktemp("cohort")
    synth.generate_cohort(str(cohort), 200, ad_fraction=0.25, seed=42)
    cfg = dict(CONFIG_DEFAULTS)
    records = records_from_manifest(str(cohort), cfg)
    per_seed = []
    seed0_model = None
    for seed in range(5):
        tr, va, te = evaluation.stratified_split(records, evaluation.SplitSpec(seed=seed))
        labels = np.array([r.label for r in te])
        multi = model.train(tr, va, model.ModelConfig(epochs=300, seed=seed))
        graph_only = model.train(
            tr, va, model.ModelConfig(epochs=300, seed=seed, modality_mask="graph")
        )
        r_multi = evaluation.compute_metrics(model.predict(multi, te), labels)
        r_graph = evaluation.compute_metrics(model.predict(graph_only, te), labels)
        per_seed.append((r_multi.auc, r_multi.macro_f1, r_graph.macro_f1))
        if seed == 0:
            seed0_model = multi
    elapsed = time.perf_counter() - t0
    return records, per_seed, seed0_model, elapsed


def test_criterion_8_synthetic_experiment(acceptance, cohort_experiment):
    _, per_seed, _, elapsed = cohort_experiment
    mean_auc = float(np.mean([row[0] for row in per_seed]))
    mean_multi = float(np.mean([row[1] for row in per_seed]))
    mean_graph = float(np.mean([row[2] for row in per_seed]))
    ok = mean_auc >= 0.9 and mean_multi >= mean_graph and elapsed < 300.0
    _verdict(
        acceptance, 8,
        ok,
        f"5-seed cohort run: mean AUC {mean_auc:.3f} (>=0.9), multimodal F1 {mean_multi:.3f} "
        f">= graph-only {mean_graph:.3f}, {elapsed:.0f}s (<300s)",
    )


def test_criterion_9_attribution_ranking(acceptance, cohort_experiment):
    records, _, seed0_model, _ = cohort_experiment
    tr, _, te = evaluation.stratified_split(records, evaluation.SplitSpec(seed=0))
    background = explain.build_background(tr)
    groups = explain.default_feature_groups()
    reports = [
        explain.shapley_values(
            seed0_model, r, groups, background, mode="sampled", n_permutations=512, seed=0
        )
        for r in te
    ]
    ranking = explain.global_importance(reports)
    top3 = [name for name, _ in ranking[:3]]
    ok = "graphlet 4" in top3 and "graphlet 6" in top3
    _verdict(
        acceptance, 9,
        ok,
        f"mean-|SHAP| top 3 = {top3} (expects graphlet 4 and graphlet 6)",
    )


# -- criterion 10: determinism ------------------------------------------------


def test_criterion_10_determinism(acceptance, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["synth", "--out", str(out), "--set", "n_subjects=16", "--seed", "7"]) == 0
    manifests_equal = (a / "manifest.csv").read_bytes() == (b / "manifest.csv").read_bytes()

    fast = ["--set", "epochs=20", "--set", "hidden_dim=8", "--set", "attention_heads=2", "--set", "mlp_hidden=4"]
    for run in (tmp_path / "r1", tmp_path / "r2"):
        assert main(["train", "--data", str(a), "--out", str(run), "--seed", "7"] + fast) == 0
    checkpoints_equal = (
        (tmp_path / "r1" / "checkpoints" / "model.txt").read_bytes()
        == (tmp_path / "r2" / "checkpoints" / "model.txt").read_bytes()
    )
    ok = manifests_equal and checkpoints_equal
    _verdict(
        acceptance, 10,
        ok,
        "synth manifests and train checkpoints are byte-identical across reruns",
    )
