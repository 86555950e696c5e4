"""Acceptance suite: one test per numbered criterion.

Each criterion prints a PASS/FAIL line in the terminal summary (see conftest).
The pipeline criteria (6-10) use a reduced walk/embedding budget so the whole
suite fits on one laptop core; the budget is ACCEPT_CFG below.
"""
from __future__ import annotations

import filecmp
import math
import random
import time

import numpy as np
import pytest
from scipy import stats

from amlgraph.classify import train_adaboost
from amlgraph.cli import main as cli_main
from amlgraph.embed import SkipGramConfig, sgns_gradient_check
from amlgraph.evaluate import LOSO, Experiment, ExperimentConfig, SplitSpec
from amlgraph.features import extract_daily_features
from amlgraph.graphcore import build_graph
from amlgraph.ingest import Dataset
from amlgraph.synthgen import generate, preset_scenarios
from amlgraph.walks import WalkConfig

import oracles
from conftest import record_detail
from test_classify import FIXTURE_X, FIXTURE_Y
import test_features
import test_walks
from test_features import _edges, cyclic_transactions
from test_graph import check_against_oracles, random_graph_sizes
from test_walks import busiest_node, chi2_against_law, fixture_50, second_step_counts

pytestmark = pytest.mark.acceptance

ACCEPT_CFG = ExperimentConfig(walks=WalkConfig(walks_per_node=5, walk_length=40),
                              embed=SkipGramConfig(window=5, epochs=1))
SEEDS = (0, 1, 2)


def criterion(n, title):
    return pytest.mark.criterion(n, title)


def _runs(ex: Experiment, methods, cfg=ACCEPT_CFG):
    return {m: ex.run(m, cfg) for m in methods}


@pytest.fixture(scope="module")
def balanced():
    t0 = time.perf_counter()
    txs, labels, rep = generate(preset_scenarios(seed=0)["balanced-demo"])
    ds = Dataset(txs, labels)
    ex = Experiment(ds, SplitSpec(), seed=0)
    runs = _runs(ex, ("neighbour", "curated", "deepwalk", "node2vec", "OR", "AND"))
    return ds, rep, runs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def helix():
    runs = []
    for seed in SEEDS:
        txs, labels, _ = generate(preset_scenarios(seed=seed)["helixmixer-like"])
        ex = Experiment(Dataset(txs, labels), SplitSpec(LOSO, held_out="HelixMixer"), seed=seed)
        runs.append(_runs(ex, ("curated", "node2vec", "OR", "AND")))
    return runs


def _report(request, lines):
    record_detail(request.node.get_closest_marker("criterion").args[0], lines)


@criterion(1, "graph oracle equivalence on 200 random graphs")
def test_c01_graph_oracles(request):
    rng = random.Random(2024)
    t0 = time.perf_counter()
    sizes = list(random_graph_sizes(rng, 200))
    for n, rate in sizes:
        check_against_oracles(oracles.random_transactions(rng, n, rate))
    elapsed = time.perf_counter() - t0
    _report(request, [f"200 graphs, largest {max(n for n, _ in sizes)} nodes, {elapsed:.1f}s"])
    assert elapsed < 60


@criterion(2, "PageRank vs power-method oracle; sums to one at 1e5 nodes")
def test_c02_pagerank(request):
    from amlgraph.features import pagerank

    t0 = time.perf_counter()
    rng = random.Random(99)
    worst = 0.0
    for k in range(40):
        n = rng.randint(2, 120)
        txs = (cyclic_transactions(rng, n, rng.randint(0, 3 * n)) if k % 2
               else oracles.random_transactions(rng, n, rng.choice([0.5, 1.5, 3])))
        g = build_graph(txs)
        worst = max(worst, float(np.abs(pagerank(g) - oracles.pagerank_power(n, _edges(g))).max()))
    test_features.test_pagerank_sums_to_one_large()
    elapsed = time.perf_counter() - t0
    _report(request, [f"max deviation {worst:.2e}, {elapsed:.1f}s"])
    assert worst < 1e-8 and elapsed < 30


@criterion(3, "node2vec transition law and deepwalk equivalence")
def test_c03_transition_law(request):
    t0 = time.perf_counter()
    view = fixture_50().undirected()
    s = busiest_node(view)
    pvals = {}
    for p, q in ((1.0, 1.0), (2.0, 0.5), (0.5, 4.0)):
        pvals[(p, q)] = chi2_against_law(view, s, second_step_counts(view, s, p, q, 100_000), p, q)
    test_walks.test_unit_pq_matches_deepwalk()
    elapsed = time.perf_counter() - t0
    _report(request, [f"(p,q)={k}: chi2 p-value {v:.3f}" for k, v in pvals.items()]
            + [f"{elapsed:.1f}s"])
    assert min(pvals.values()) > 0.01 and elapsed < 60


@criterion(4, "SGNS gradient check")
def test_c04_gradient_check(request):
    t0 = time.perf_counter()
    err = sgns_gradient_check()
    elapsed = time.perf_counter() - t0
    _report(request, [f"max relative error {err:.2e}, {elapsed:.2f}s"])
    assert err < 1e-5 and elapsed < 5


@criterion(5, "AdaBoost three-stage trace")
def test_c05_adaboost_trace(request):
    X, y = np.array(FIXTURE_X), np.array(FIXTURE_Y)
    trace, final_w, final_labels = oracles.adaboost_trace(FIXTURE_X, FIXTURE_Y, 3)
    model = train_adaboost(X, y, n_estimators=3, max_depth=1)
    dev = 0.0
    for m, (eps, alpha, w_before) in enumerate(trace):
        dev = max(dev, abs(model.errors[m] - eps), abs(model.alphas[m] - alpha),
                  float(np.abs(model.weight_history[m] - np.array(w_before)).max()))
    dev = max(dev, float(np.abs(model.weight_history[-1] - np.array(final_w)).max()))
    quarter = train_adaboost(np.array([[0.0], [1.0], [2.0], [3.0]]), np.array([-1, 1, -1, 1]),
                             n_estimators=1, max_depth=1)
    _report(request, [f"max trace deviation {dev:.1e}"])
    assert dev < 1e-12
    assert model.predict_labels(X).tolist() == final_labels
    assert abs(quarter.alphas[0] - 0.5 * math.log(3)) < 1e-12


@criterion(6, "classifier ordering on balanced-demo")
def test_c06_classifier_ordering(request, balanced):
    ds, _, runs, elapsed = balanced
    f1 = {m: r.f1 for m, r in runs.items()}
    _report(request, [f"{len(ds)} transactions, {elapsed:.0f}s"]
            + [f"{m:9s} acc={r.accuracy:.4f} f1={r.f1:.4f}" for m, r in runs.items()])
    assert 40_000 <= len(ds) <= 60_000
    assert f1["node2vec"] >= f1["deepwalk"] - 0.02
    assert f1["node2vec"] > f1["curated"] > f1["neighbour"]
    assert f1["node2vec"] >= 0.85
    assert elapsed < 15 * 60


@criterion(7, "ensemble directions")
def test_c07_ensembles(request, balanced, helix):
    _, _, runs, _ = balanced
    lines = []
    for k, r in enumerate([runs, *helix]):
        lo = min(r["curated"].recall, r["node2vec"].recall)
        hi = max(r["curated"].recall, r["node2vec"].recall)
        lines.append(f"run {k}: recall AND={r['AND'].recall:.3f} <= {lo:.3f}, "
                     f"OR={r['OR'].recall:.3f} >= {hi:.3f}")
        assert r["OR"].recall >= hi and r["AND"].recall <= lo
    lines.append(f"balanced f1 OR={runs['OR'].f1:.4f} node2vec={runs['node2vec'].f1:.4f}")
    _report(request, lines)
    assert runs["OR"].f1 >= runs["node2vec"].f1 - 0.01


@criterion(8, "held-out service degrades F1, accuracy stays >= 0.90")
def test_c08_loso_degradation(request, balanced, helix):
    in_dist = balanced[2]["node2vec"].f1
    lines = [f"seed {s}: acc={r['node2vec'].accuracy:.4f} f1={r['node2vec'].f1:.4f}"
             for s, r in zip(SEEDS, helix)]
    mean_f1 = float(np.mean([r["node2vec"].f1 for r in helix]))
    _report(request, lines + [f"mean f1 {mean_f1:.4f} vs in-distribution {in_dist:.4f}"])
    assert mean_f1 < in_dist
    assert all(r["node2vec"].accuracy >= 0.90 for r in helix)


@criterion(9, "extreme imbalance keeps single-classifier F1 below 0.2")
def test_c09_imbalance(request):
    methods = ("neighbour", "curated", "deepwalk", "node2vec")
    f1 = {m: [] for m in methods}
    for seed in SEEDS:
        txs, labels, _ = generate(preset_scenarios(seed=seed)["bitmixer-like"])
        ex = Experiment(Dataset(txs, labels), SplitSpec(LOSO, held_out="Bitmixer"), seed=seed)
        for m, r in _runs(ex, methods).items():
            f1[m].append(r.f1)
    means = {m: float(np.mean(v)) for m, v in f1.items()}
    _report(request, [f"{m:9s} f1 per seed {np.round(v, 3).tolist()} mean {means[m]:.3f}"
             for m, v in f1.items()])
    assert all(v < 0.2 for v in means.values())


@criterion(10, "walk budget and walk-start trends")
def test_c10_walk_trends(request):
    settings = {"walks 20x20": dict(walks_per_node=20, walk_length=20),
                "walks 100x100": dict(walks_per_node=100, walk_length=100),
                "starts 80%/0%": dict(walks_per_node=100, walk_length=100,
                                      frac_labelled_test=0.8, frac_unlabelled_test=0.0)}
    f1 = {k: [] for k in settings}
    for seed in SEEDS:
        txs, labels, _ = generate(preset_scenarios(scale=0.02, seed=seed)["balanced-demo"])
        ex = Experiment(Dataset(txs, labels), SplitSpec(), seed=seed)
        for k, params in settings.items():
            f1[k].append(ex.run("node2vec", ACCEPT_CFG.with_params(**params)).f1)
    means = {k: float(np.mean(v)) for k, v in f1.items()}
    _report(request, [f"{k:14s} f1 per seed {np.round(v, 3).tolist()} mean {means[k]:.4f}"
             for k, v in f1.items()])
    assert means["walks 100x100"] >= means["walks 20x20"]
    assert means["walks 100x100"] >= means["starts 80%/0%"]


@criterion(11, "synthetic calibration: value ratio, class ratios, feature directions")
def test_c11_calibration(request, balanced):
    ds, rep, _, _ = balanced
    lines = [f"value ratio {rep.value_ratio:.3f} (target {38.8 / 29.1:.3f})"]
    ok = abs(rep.value_ratio / (38.8 / 29.1) - 1) <= 0.25
    presets = preset_scenarios(seed=0)
    for name in ("alphabay-like", "helixmixer-like", "bitmixer-like"):
        r = generate(presets[name])[2]
        lines.append(f"{name}: ratio {r.realized_target_ratio:.5f} (target {r.target_ratio:.5f})")
        ok &= abs(r.realized_target_ratio / r.target_ratio - 1) <= 0.20
    c = rep.class_counts
    share = c["laundering"] / (c["laundering"] + c["regular"])
    lines.append(f"balanced-demo laundering share {share:.3f}")
    ok &= abs(share - 0.5) <= 0.1

    feats = extract_daily_features(ds.transactions, ds.output_lookup())
    rows = {t: i for i, t in enumerate(feats.txids)}
    cls = {lab: [rows[t] for t, v in ds.labels.labels_only().items() if v == lab]
           for lab in ("laundering", "regular")}
    for name, alt in (("in_out_ratio", "less"), ("out_std", "greater")):
        col = feats.column(name)
        res = stats.ks_2samp(col[cls["laundering"]], col[cls["regular"]], alternative=alt,
                             method="asymp")
        lines.append(f"KS {name} laundering {'larger' if alt == 'less' else 'smaller'}: "
                     f"p={res.pvalue:.2e}")
        ok &= res.pvalue < 0.01
    _report(request, lines)
    assert ok


@criterion(12, "repeated CLI pipeline gives byte-identical metric CSVs")
def test_c12_determinism(request, tmp_path, capsys):
    config = tmp_path / "run.yaml"
    config.write_text("gen: {preset: balanced-demo, scale: 0.02}\n"
                      "walks: {walks_per_node: 5, walk_length: 40}\n"
                      "embed: {window: 5, epochs: 1}\n", encoding="utf-8")
    for name in ("a", "b"):
        common = ["--workdir", str(tmp_path / name), "--config", str(config), "--seed", "11"]
        steps = [["gen"], ["features"]]
        for m in ("deepwalk", "node2vec"):
            steps += [["walk", "--method", m], ["embed", "--method", m]]
        steps += [["eval", "--method", m] for m in
                  ("neighbour", "curated", "deepwalk", "node2vec", "OR", "AND")]
        steps += [["loso", "--service", "MixerA"], ["report"]]
        for step in steps:
            assert cli_main(step + common) == 0, step
    capsys.readouterr()
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    _report(request, [f"{len(match)} CSVs compared, mismatched: {mismatch or 'none'}"])
    assert len(names) >= 9 and not mismatch and not errors
