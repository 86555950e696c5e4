"""UTXO spend graph: nodes are transactions, an edge u -> v means v spends an output of u."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from numba import njit

from .ingest import Transaction


def _csr(n: int, rows: np.ndarray, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((cols, rows))
    counts = np.bincount(rows, minlength=n)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, cols[order].astype(np.int32)


class UndirectedView:
    """Symmetric, deduplicated adjacency over dense node ids (sorted neighbour lists)."""

    def __init__(self, n: int, ptr: np.ndarray, idx: np.ndarray):
        self.n_nodes = n
        self.ptr = ptr
        self.idx = idx

    def _check(self, u: int) -> None:
        if not 0 <= u < self.n_nodes:
            raise KeyError(f"unknown node id {u}")

    def neighbors(self, u: int) -> np.ndarray:
        self._check(u)
        return self.idx[self.ptr[u]:self.ptr[u + 1]]

    def degree(self, u: int | None = None):
        deg = np.diff(self.ptr)
        if u is None:
            return deg
        self._check(u)
        return int(deg[u])

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < nb.size and nb[i] == v)

    @property
    def n_edges(self) -> int:
        return int(self.idx.size // 2)


class TxGraph:
    """Directed transaction graph with dense integer node ids.

    Parallel spends between the same pair collapse to one edge; ``multiplicity``
    keeps the UTXO count. ``n_inputs``/``n_outputs`` are per-transaction UTXO
    counts and include inputs whose source lies outside the graph.
    """

    def __init__(self, txids: Sequence[str], src: np.ndarray, dst: np.ndarray, mult: np.ndarray,
                 n_inputs: np.ndarray, n_outputs: np.ndarray, timestamps: np.ndarray):
        self.txids = list(txids)
        self.index = {t: i for i, t in enumerate(self.txids)}
        n = len(self.txids)
        self.src = src.astype(np.int32)
        self.dst = dst.astype(np.int32)
        self.multiplicity = mult.astype(np.int64)
        self.n_inputs = n_inputs.astype(np.int64)
        self.n_outputs = n_outputs.astype(np.int64)
        self.timestamps = timestamps.astype(np.int64)
        self.out_ptr, self.out_idx = _csr(n, self.src, self.dst)
        self.in_ptr, self.in_idx = _csr(n, self.dst, self.src)
        self._undirected: UndirectedView | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.txids)

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    def __len__(self) -> int:
        return self.n_nodes

    def __contains__(self, txid: str) -> bool:
        return txid in self.index

    def node_id(self, txid: str) -> int:
        try:
            return self.index[txid]
        except KeyError:
            raise KeyError(f"transaction {txid!r} not in graph") from None

    def out_degree(self) -> np.ndarray:
        return np.diff(self.out_ptr)

    def in_degree(self) -> np.ndarray:
        return np.diff(self.in_ptr)

    def successors(self, u: int) -> np.ndarray:
        return self.out_idx[self.out_ptr[u]:self.out_ptr[u + 1]]

    def predecessors(self, u: int) -> np.ndarray:
        return self.in_idx[self.in_ptr[u]:self.in_ptr[u + 1]]

    def edge_set(self) -> set[tuple[str, str]]:
        t = self.txids
        return {(t[a], t[b]) for a, b in zip(self.src.tolist(), self.dst.tolist())}

    def edge_multiplicity(self) -> dict[tuple[str, str], int]:
        t = self.txids
        return {(t[a], t[b]): int(m) for a, b, m in
                zip(self.src.tolist(), self.dst.tolist(), self.multiplicity.tolist())}

    def undirected(self) -> UndirectedView:
        if self._undirected is None:
            n = self.n_nodes
            if self.n_edges:
                a = np.concatenate([self.src, self.dst]).astype(np.int64)
                b = np.concatenate([self.dst, self.src]).astype(np.int64)
                keys = np.unique(a * n + b)
                rows, cols = keys // n, keys % n
            else:
                rows = cols = np.zeros(0, dtype=np.int64)
            ptr, idx = _csr(n, rows, cols)
            self._undirected = UndirectedView(n, ptr, idx)
        return self._undirected

    def subgraph(self, nodes: Iterable[int]) -> "TxGraph":
        """Induced subgraph; node order follows the original dense ids."""
        keep = np.zeros(self.n_nodes, dtype=bool)
        keep[np.fromiter(nodes, dtype=np.int64)] = True
        new_id = np.full(self.n_nodes, -1, dtype=np.int64)
        kept = np.flatnonzero(keep)
        new_id[kept] = np.arange(kept.size)
        emask = keep[self.src] & keep[self.dst]
        return TxGraph(
            [self.txids[i] for i in kept],
            new_id[self.src[emask]], new_id[self.dst[emask]], self.multiplicity[emask],
            self.n_inputs[kept], self.n_outputs[kept], self.timestamps[kept],
        )

    def export(self, edges_path: str | Path, nodes_path: str | Path) -> None:
        with open(nodes_path, "w", encoding="utf-8") as fh:
            for i, t in enumerate(self.txids):
                fh.write(f"{t}\t{i}\n")
        with open(edges_path, "w", encoding="utf-8") as fh:
            for a, b, m in zip(self.src.tolist(), self.dst.tolist(), self.multiplicity.tolist()):
                fh.write(f"{self.txids[a]}\t{self.txids[b]}\t{m}\n")


def build_graph(transactions: Iterable[Transaction]) -> TxGraph:
    """One node per transaction, one edge per distinct (spent tx, spending tx) pair."""
    txs = list(transactions)
    index = {tx.txid: i for i, tx in enumerate(txs)}
    src, dst = [], []
    for j, tx in enumerate(txs):
        for ref in tx.inputs:
            i = index.get(ref.source_txid)
            if i is not None:
                src.append(i)
                dst.append(j)
    n = len(txs)
    if src:
        keys, mult = np.unique(np.asarray(src, dtype=np.int64) * n + np.asarray(dst, dtype=np.int64),
                               return_counts=True)
        s, d = keys // n, keys % n
    else:
        s = d = mult = np.zeros(0, dtype=np.int64)
    return TxGraph(
        [tx.txid for tx in txs], s, d, mult,
        np.array([len(tx.inputs) for tx in txs], dtype=np.int64),
        np.array([len(tx.outputs) for tx in txs], dtype=np.int64),
        np.array([tx.timestamp for tx in txs], dtype=np.int64),
    )


def graph_density(g: TxGraph) -> float:
    """|E| / (|V| (|V| - 1)) over distinct directed edges."""
    n = g.n_nodes
    if n < 2:
        raise ValueError(f"density undefined for a graph with {n} node(s)")
    return g.n_edges / (n * (n - 1))


@njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(cache=True)
def _union_find_labels(n, src, dst):
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    for e in range(src.shape[0]):
        a = _find(parent, src[e])
        b = _find(parent, dst[e])
        if a == b:
            continue
        if size[a] < size[b]:
            a, b = b, a
        parent[b] = a
        size[a] += size[b]
    # component ids numbered by first appearance in node order
    comp = np.full(n, -1, dtype=np.int64)
    root_comp = np.full(n, -1, dtype=np.int64)
    k = 0
    for v in range(n):
        r = _find(parent, v)
        if root_comp[r] < 0:
            root_comp[r] = k
            k += 1
        comp[v] = root_comp[r]
    return comp, k


@dataclass(frozen=True)
class ComponentIndex:
    component: np.ndarray   # component id per node
    sizes: np.ndarray       # size per component id
    giant: int              # id of the largest component, -1 if empty

    def __len__(self) -> int:
        return int(self.sizes.size)

    def members(self, cid: int) -> np.ndarray:
        return np.flatnonzero(self.component == cid)

    def node_sizes(self) -> np.ndarray:
        """Size of each node's own component."""
        return self.sizes[self.component]


def weak_components(g: TxGraph) -> ComponentIndex:
    """Weakly connected components. Component ids follow the smallest member node id,
    so size ties for the giant component resolve to the lowest id."""
    n = g.n_nodes
    if n == 0:
        return ComponentIndex(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), -1)
    comp, k = _union_find_labels(n, g.src.astype(np.int64), g.dst.astype(np.int64))
    sizes = np.bincount(comp, minlength=k)
    return ComponentIndex(comp, sizes, int(np.argmax(sizes)))


def giant_component_subgraph(g: TxGraph) -> TxGraph:
    if g.n_nodes == 0:
        raise ValueError("empty graph has no giant component")
    ci = weak_components(g)
    return g.subgraph(ci.members(ci.giant))


def undirected_view(g: TxGraph) -> UndirectedView:
    return g.undirected()


class EvolutionRecord(NamedTuple):
    window_start: int
    n_nodes: int
    n_edges: int
    density: float


def evolution_series(transactions: Sequence[Transaction], window_size: int) -> list[EvolutionRecord]:
    """Node/edge counts and density per window, windows tiled from the earliest timestamp.

    Single-node windows report density 0.0.
    """
    if window_size <= 0:
        raise ValueError(f"window size must be positive, got {window_size}")
    if not transactions:
        return []
    t0 = min(tx.timestamp for tx in transactions)
    buckets: dict[int, list[Transaction]] = {}
    for tx in transactions:
        buckets.setdefault((tx.timestamp - t0) // window_size, []).append(tx)
    records = []
    for k in sorted(buckets):
        g = build_graph(buckets[k])
        dens = graph_density(g) if g.n_nodes >= 2 else 0.0
        records.append(EvolutionRecord(t0 + k * window_size, g.n_nodes, g.n_edges, dens))
    return records
