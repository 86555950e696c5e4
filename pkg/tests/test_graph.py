from __future__ import annotations

import random

import networkx as nx
import pytest

from amlgraph.graphcore import (
    build_graph, evolution_series, giant_component_subgraph, graph_density, undirected_view,
    weak_components,
)

import oracles
from conftest import tx


def check_against_oracles(txs) -> None:
    g = build_graph(txs)
    mult = oracles.spend_edges(txs)
    assert g.edge_multiplicity() == dict(mult)
    indeg, outdeg = oracles.degrees(txs)
    assert g.in_degree().tolist() == [indeg[t] for t in g.txids]
    assert g.out_degree().tolist() == [outdeg[t] for t in g.txids]
    assert g.in_degree().sum() == g.out_degree().sum() == g.n_edges

    ci = weak_components(g)
    ours = sorted(sorted(g.txids[i] for i in ci.members(c)) for c in range(len(ci)))
    ref = sorted(sorted(c) for c in oracles.flood_components(txs))
    assert ours == ref
    assert ci.sizes.sum() == g.n_nodes
    assert set(giant_component_subgraph(g).txids) == oracles.giant(txs)

    if len(txs) >= 2:
        assert graph_density(g) == pytest.approx(oracles.density(txs), abs=0, rel=1e-15)

    adj = oracles.undirected_adjacency(txs)
    view = undirected_view(g)
    for u, t in enumerate(g.txids):
        assert {g.txids[v] for v in view.neighbors(u).tolist()} == adj[t]


def random_graph_sizes(rng: random.Random, count: int):
    for k in range(count):
        # log-uniform sizes up to 10^4, with a few at the ceiling
        n = 10_000 if k % 50 == 0 else int(10 ** rng.uniform(0.3, 3.6))
        yield max(n, 1), rng.choice([0.0, 0.3, 0.8, 1.2, 2.5])


def test_oracle_equivalence_random_graphs():
    rng = random.Random(1234)
    for n, rate in random_graph_sizes(rng, 40):
        check_against_oracles(oracles.random_transactions(rng, n, rate))


def test_networkx_cross_check():
    rng = random.Random(5)
    txs = oracles.random_transactions(rng, 3000, 0.9)
    g = build_graph(txs)
    G = nx.DiGraph()
    G.add_nodes_from(g.txids)
    G.add_edges_from(g.edge_set())
    ci = weak_components(g)
    ours = {frozenset(g.txids[i] for i in ci.members(c)) for c in range(len(ci))}
    assert ours == {frozenset(c) for c in nx.weakly_connected_components(G)}
    assert graph_density(g) == pytest.approx(nx.density(G))


def test_spend_chain_edge():
    g = build_graph([tx("Tx3", 0), tx("Tx4", 1, [("Tx3", 0)])])
    assert g.edge_set() == {("Tx3", "Tx4")}


def test_independent_transactions():
    g = build_graph([tx("a"), tx("b")])
    assert g.n_nodes == 2 and g.n_edges == 0


def test_parallel_spend_multiplicity():
    g = build_graph([tx("a", outputs=(1,)), tx("b", 1, [("a", 0)], (1, 1)),
                     tx("c", 2, [("b", 0), ("b", 1)])])
    assert g.edge_set() == {("a", "b"), ("b", "c")}
    assert g.edge_multiplicity()[("b", "c")] == 2
    assert g.in_degree()[g.node_id("c")] == 1
    assert g.n_inputs[g.node_id("c")] == 2


def test_dangling_refs_make_no_edge():
    g = build_graph([tx("a", inputs=[("elsewhere", 3)])])
    assert g.n_edges == 0 and g.n_inputs[0] == 1


def test_density_examples():
    chain = [tx("a"), tx("b", 1, [("a", 0)]), tx("c", 2, [("b", 0)])]
    assert graph_density(build_graph(chain)) == pytest.approx(2 / 6)
    # complete directed graph on three nodes: every pair spends each other
    full = [tx("a", 0, [("b", 0), ("c", 0)], (1, 1)), tx("b", 0, [("a", 0), ("c", 1)], (1, 1)),
            tx("c", 0, [("a", 1), ("b", 1)], (1, 1))]
    assert graph_density(build_graph(full)) == 1.0
    assert graph_density(build_graph([tx("a"), tx("b")])) == 0.0
    with pytest.raises(ValueError):
        graph_density(build_graph([tx("a")]))


def test_components_examples():
    g = build_graph([tx("a"), tx("b", 1, [("a", 0)]), tx("c", 2, [("b", 0)]), tx("d")])
    ci = weak_components(g)
    assert sorted(ci.sizes.tolist()) == [1, 3]
    assert ci.sizes[ci.giant] == 3
    empty = weak_components(build_graph([]))
    assert len(empty) == 0 and empty.giant == -1


def test_giant_component_examples():
    chain5 = [tx(f"c{i}", i, [(f"c{i - 1}", 0)] if i else []) for i in range(5)]
    pair = [tx("p0"), tx("p1", 1, [("p0", 0)])]
    g = build_graph(pair + chain5)
    sub = giant_component_subgraph(g)
    assert set(sub.txids) == {f"c{i}" for i in range(5)}
    assert sub.edge_set() == {(f"c{i}", f"c{i + 1}") for i in range(4)}
    # identity on a connected graph, and idempotent
    again = giant_component_subgraph(sub)
    assert again.txids == sub.txids and again.edge_set() == sub.edge_set()
    # equal-size tie: the component holding the smallest node id wins
    left = [tx(f"x{i}", i, [(f"x{i - 1}", 0)] if i else []) for i in range(5)]
    right = [tx(f"y{i}", i, [(f"y{i - 1}", 0)] if i else []) for i in range(5)]
    assert set(giant_component_subgraph(build_graph(left + right)).txids) == {t.txid for t in left}
    assert set(giant_component_subgraph(build_graph(right + left)).txids) == {t.txid for t in right}
    with pytest.raises(ValueError):
        giant_component_subgraph(build_graph([]))


def test_undirected_view_examples():
    g = build_graph([tx("a"), tx("b", 1, [("a", 0)]), tx("z")])
    v = undirected_view(g)
    a, b, z = (g.node_id(t) for t in "abz")
    assert v.neighbors(a).tolist() == [b] and v.neighbors(b).tolist() == [a]
    assert v.neighbors(z).size == 0
    with pytest.raises(KeyError):
        v.neighbors(99)
    both = build_graph([tx("a", 0, [("b", 0)]), tx("b", 0, [("a", 0)])])
    assert undirected_view(both).neighbors(0).tolist() == [1]


def test_undirected_symmetry_random():
    rng = random.Random(3)
    g = build_graph(oracles.random_transactions(rng, 500, 1.5))
    v = g.undirected()
    for u in range(g.n_nodes):
        for w in v.neighbors(u).tolist():
            assert v.has_edge(w, u)


def test_order_insensitive():
    rng = random.Random(11)
    txs = oracles.random_transactions(rng, 400, 1.3)
    g1 = build_graph(txs)
    rng.shuffle(txs)
    g2 = build_graph(txs)
    assert g1.edge_multiplicity() == g2.edge_multiplicity()


def test_evolution_series():
    day = 86400
    one_day = [tx("a", 10), tx("b", 20, [("a", 0)]), tx("c", 30, [("b", 0)])]
    (rec,) = evolution_series(one_day, day)
    g = build_graph(one_day)
    assert (rec.n_nodes, rec.n_edges, rec.density) == (3, 2, graph_density(g))
    two_days = one_day + [tx("d", day + 40, [("c", 0)]), tx("e", day + 50)]
    recs = evolution_series(two_days, day)
    assert [r.window_start for r in recs] == [10, 10 + day]
    # the cross-day spend c -> d is not an edge of either daily graph
    assert recs[1].n_edges == 0
    assert evolution_series([], day) == []
    with pytest.raises(ValueError):
        evolution_series(one_day, 0)


def test_export(tmp_path):
    g = build_graph([tx("a"), tx("b", 1, [("a", 0)])])
    g.export(tmp_path / "e.tsv", tmp_path / "n.tsv")
    assert (tmp_path / "e.tsv").read_text() == "a\tb\t1\n"
    assert (tmp_path / "n.tsv").read_text() == "a\t0\nb\t1\n"
