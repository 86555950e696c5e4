from __future__ import annotations

import math

import numpy as np
import pytest
from numba import njit
from scipy import stats

from amlgraph._rng import alias_draw, build_alias, next_uniform, seed64
from amlgraph.embed import (
    EmbeddingTable, SkipGramConfig, _pair_update, export_embeddings, import_embeddings,
    noise_distribution, sgns_gradient_check, sgns_loss_and_grads, train_embeddings,
)
from amlgraph.graphcore import build_graph
from amlgraph.walks import DEEPWALK, WalkConfig, WalkCorpus, generate_walks

from conftest import tx


def test_gradient_check_fixture():
    assert sgns_gradient_check() < 1e-5


def test_gradient_check_d3_triple():
    rng = np.random.default_rng(3)
    W, C = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    assert sgns_gradient_check(W, C, [(0, 1, [2, 3, 4])]) < 1e-5


def test_zero_vectors():
    W = np.zeros((4, 3))
    C = np.zeros((4, 3))
    loss, gW, gC = sgns_loss_and_grads(W, C, [(0, 1, [2, 3])])
    assert loss == pytest.approx(3 * math.log(2))
    assert not gW.any() and not gC.any()
    assert sgns_gradient_check(W, C, [(0, 1, [2, 3])]) == 0.0


def test_orthogonal_unit_vectors_hand_loss():
    W = np.eye(3)
    C = np.array([[0, 1.0, 0], [0, 0, 1.0], [0, 1.0, 0]])
    loss, _, _ = sgns_loss_and_grads(W, C, [(0, 1, [2])])
    # both dot products are 0, each term is -log sigma(0)
    assert loss == pytest.approx(2 * math.log(2), abs=1e-15)


def test_kernel_step_matches_analytic_gradient():
    rng = np.random.default_rng(8)
    W = rng.normal(scale=0.3, size=(6, 4))
    C = rng.normal(scale=0.3, size=(6, 4))
    lr = 0.05
    negs = np.array([2, 3, 5], dtype=np.int64)
    loss, gW, gC = sgns_loss_and_grads(W, C, [(0, 1, negs.tolist())])
    W2, C2 = W.copy(), C.copy()
    got = _pair_update(W2, C2, 0, 1, negs, 3, lr, np.zeros(4), True)
    assert got == pytest.approx(loss, rel=1e-12)
    assert np.allclose(W2, W - lr * gW, rtol=0, atol=1e-14)
    assert np.allclose(C2, C - lr * gC, rtol=0, atol=1e-14)


def clique_corpus(seed=0, walks_per_node=20):
    txs = []
    for base in (0, 10):
        for i in range(base, base + 10):
            ins = [(f"v{j}", 0) for j in range(base, i)]
            txs.append(tx(f"v{i}", 0, ins))
    g = build_graph(txs)
    return generate_walks(g.undirected(), WalkConfig(walks_per_node, 30, mode=DEEPWALK, rng_seed=seed), range(20))


def cosine_matrix(t: EmbeddingTable) -> np.ndarray:
    v = t.vectors / np.linalg.norm(t.vectors, axis=1, keepdims=True)
    return v @ v.T


def test_two_cliques_separate():
    t = train_embeddings(clique_corpus(), SkipGramConfig(dim=16, rng_seed=1))
    cos = cosine_matrix(t)
    group = t.ids < 10
    same = group[:, None] == group[None, :]
    off = ~np.eye(len(t), dtype=bool)
    assert cos[same & off].mean() > cos[~same].mean() + 0.5
    assert np.linalg.norm(t.vectors, axis=1).max() < 100


@pytest.mark.parametrize("seed", range(3))
def test_trailing_loss_below_first_epoch(seed):
    # a short corpus, so learning is not finished inside the first epoch
    t = train_embeddings(clique_corpus(seed, walks_per_node=2), SkipGramConfig(dim=16, rng_seed=seed))
    losses = t.metadata["epoch_loss"]
    assert len(losses) == 5 and losses[-1] < losses[0]
    assert t.metadata["final_loss"] == losses[-1]


def test_repeated_pair_similarity_rises():
    rng = np.random.default_rng(0)
    rows = [[0, 1] * 20] + [rng.integers(2, 30, 40).tolist() for _ in range(30)]
    corpus = WalkCorpus(np.array(rows, dtype=np.int32), np.full(len(rows), 40))

    def cos(t):
        a, b = t[0], t[1]
        return float(a @ b / np.linalg.norm(a) / np.linalg.norm(b))

    for seed in range(3):
        frozen = SkipGramConfig(dim=8, window=2, epochs=1, lr=1e-12, min_lr=1e-12, rng_seed=seed)
        trained = SkipGramConfig(dim=8, window=2, epochs=20, rng_seed=seed)
        before, after = cos(train_embeddings(corpus, frozen)), cos(train_embeddings(corpus, trained))
        assert after > before and after > 0.9


def test_deterministic_and_vocabulary():
    corpus = clique_corpus()
    cfg = SkipGramConfig(dim=8, epochs=2, rng_seed=5)
    a, b = train_embeddings(corpus, cfg), train_embeddings(corpus, cfg)
    assert np.array_equal(a.vectors, b.vectors)
    assert set(a.ids.tolist()) == set(corpus.nodes().tolist())
    assert 99 not in a and np.isfinite(a.vectors).all()
    assert not np.array_equal(a.vectors, train_embeddings(corpus, SkipGramConfig(dim=8, epochs=2, rng_seed=6)).vectors)


def test_subsampling_runs():
    t = train_embeddings(clique_corpus(), SkipGramConfig(dim=8, epochs=1, subsample=1e-3))
    assert np.isfinite(t.vectors).all()


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(dim=0), dict(window=0), dict(negatives=0),
                                dict(lr=0.0), dict(subsample=-1.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SkipGramConfig(**kw)


def test_empty_corpus():
    empty = WalkCorpus(np.zeros((0, 5), dtype=np.int32), np.zeros(0, dtype=np.int64))
    with pytest.raises(ValueError):
        train_embeddings(empty)


@njit(cache=True)
def _draw_many(prob, alias, n, seed):
    state = seed
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        state, u = next_uniform(state)
        out[i] = alias_draw(prob, alias, 0, prob.shape[0], u)
    return out


def test_noise_distribution_chi2():
    counts = np.array([1, 3, 7, 20, 50, 2, 9, 400, 13, 5], dtype=np.float64)
    p = noise_distribution(counts)
    assert np.allclose(p, counts ** 0.75 / (counts ** 0.75).sum())
    prob, alias = build_alias(p)
    n = 1_000_000
    draws = _draw_many(prob, alias, n, seed64(17))
    obs = np.bincount(draws, minlength=p.size)
    assert stats.chisquare(obs, n * p).pvalue > 0.01


def test_round_trip(tmp_path):
    t = train_embeddings(clique_corpus(), SkipGramConfig(dim=5, epochs=1))
    export_embeddings(t, tmp_path / "e.txt", header_comment="schema=x")
    back = import_embeddings(tmp_path / "e.txt")
    assert np.array_equal(back.ids, t.ids) and np.array_equal(back.vectors, t.vectors)


def test_ragged_row_named(tmp_path):
    (tmp_path / "e.txt").write_text("2 3\n0 1.0 2.0 3.0\n7 1.0 2.0\n")
    with pytest.raises(ValueError, match="node 7"):
        import_embeddings(tmp_path / "e.txt")


def test_empty_table_round_trip(tmp_path):
    empty = EmbeddingTable(np.zeros(0, dtype=np.int64), np.zeros((0, 4)))
    export_embeddings(empty, tmp_path / "e.txt")
    assert (tmp_path / "e.txt").read_text() == "0 4\n"
    assert len(import_embeddings(tmp_path / "e.txt")) == 0
