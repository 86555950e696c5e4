"""Curated per-transaction features: UTXO statistics plus network measures."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from numba import njit

from .graphcore import TxGraph, UndirectedView, _union_find_labels, build_graph, weak_components
from .ingest import LAUNDERING, REGULAR, LabelSet, Transaction

FEATURE_NAMES = (
    "in_utxo_count",
    "out_utxo_count",
    "in_out_ratio",
    "out_sum",
    "out_mean",
    "out_std",
    "in_value_sum",
    "in_value_mean",
    "in_value_std",
    "wcc_size",
    "pagerank",
    "degree_centrality",
    "clustering_coefficient",
    "closeness_centrality",
)


@dataclass
class FeatureTable:
    txids: list[str]
    matrix: np.ndarray                  # (n_nodes, 14), rows follow txids
    resolvable_fraction: np.ndarray     # share of inputs whose value could be resolved
    names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        self._row = {t: i for i, t in enumerate(self.txids)}

    def __len__(self) -> int:
        return len(self.txids)

    def __contains__(self, txid: str) -> bool:
        return txid in self._row

    def vector(self, txid: str) -> dict[str, float]:
        row = self.matrix[self._row[txid]]
        return dict(zip(self.names, row.tolist()))

    def rows(self, txids: Iterable[str]) -> np.ndarray:
        idx = [self._row[t] for t in txids]
        return self.matrix[idx]

    def column(self, name: str) -> np.ndarray:
        return self.matrix[:, self.names.index(name)]

    def as_dict(self) -> dict[str, dict[str, float]]:
        return {t: self.vector(t) for t in self.txids}

    def write_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["txid", *self.names])
            for t, row in zip(self.txids, self.matrix.tolist()):
                w.writerow([t, *map(repr, row)])

    @classmethod
    def read_csv(cls, path: str | Path) -> "FeatureTable":
        with open(path, encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        header, body = rows[0], rows[1:]
        if tuple(header[1:]) != FEATURE_NAMES:
            raise ValueError(f"unexpected feature header {header}")
        mat = np.array([[float(x) for x in r[1:]] for r in body], dtype=np.float64).reshape(-1, 14)
        return cls([r[0] for r in body], mat, np.ones(len(body)))


def pagerank(g: TxGraph, damping: float = 0.85, tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Power-iteration PageRank on the directed graph with uniform teleport.

    Dangling nodes spread their mass uniformly. Stops when the L1 change drops
    below ``tol`` or after ``max_iter`` iterations.
    """
    if not 0.0 < damping < 1.0:
        raise ValueError(f"damping must lie in (0, 1), got {damping}")
    n = g.n_nodes
    if n == 0:
        return np.zeros(0)
    outdeg = g.out_degree().astype(np.float64)
    dangling = outdeg == 0
    inv_out = np.divide(1.0, outdeg, out=np.zeros(n), where=~dangling)
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        flow = np.bincount(g.dst, weights=(x * inv_out)[g.src], minlength=n)
        new = damping * (flow + x[dangling].sum() / n) + (1.0 - damping) / n
        new /= new.sum()
        delta = np.abs(new - x).sum()
        x = new
        if delta < tol:
            break
    return x


@njit(cache=True)
def _clustering_all(n, ptr, idx):
    mark = np.full(n, -1, dtype=np.int64)
    out = np.zeros(n)
    for u in range(n):
        deg = ptr[u + 1] - ptr[u]
        if deg < 2:
            continue
        for k in range(ptr[u], ptr[u + 1]):
            mark[idx[k]] = u
        links = 0
        for k in range(ptr[u], ptr[u + 1]):
            v = idx[k]
            for m in range(ptr[v], ptr[v + 1]):
                if mark[idx[m]] == u:
                    links += 1
        # each triangle edge counted from both endpoints
        out[u] = links / (deg * (deg - 1.0))
    return out


def clustering_coefficient(view: UndirectedView, node: int | None = None):
    """Local clustering: 2 * triangles / (deg (deg - 1)); 0 when deg < 2.

    With ``node`` given returns that node's value, otherwise the full array.
    """
    if node is not None:
        view._check(node)
        nb = set(view.neighbors(node).tolist())
        deg = len(nb)
        if deg < 2:
            return 0.0
        links = sum(1 for v in nb for w in view.neighbors(v).tolist() if w in nb)
        return links / (deg * (deg - 1))
    return _clustering_all(view.n_nodes, view.ptr, view.idx)


@njit(cache=True)
def _closeness_all(n, ptr, idx, comp_size):
    dist = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    out = np.zeros(n)
    for s in range(n):
        if comp_size[s] <= 1:
            continue
        head = 0
        tail = 1
        queue[0] = s
        dist[s] = 0
        total = 0
        while head < tail:
            u = queue[head]
            head += 1
            du = dist[u]
            total += du
            for k in range(ptr[u], ptr[u + 1]):
                v = idx[k]
                if dist[v] < 0:
                    dist[v] = du + 1
                    queue[tail] = v
                    tail += 1
        for i in range(tail):
            dist[queue[i]] = -1
        out[s] = (comp_size[s] - 1.0) / total
    return out


def closeness_centrality(view: UndirectedView, comp_size: np.ndarray | None = None) -> np.ndarray:
    """Closeness within each node's own component: (size - 1) / sum of BFS distances."""
    if comp_size is None:
        comp_size = _component_sizes(view)
    return _closeness_all(view.n_nodes, view.ptr, view.idx, comp_size.astype(np.int64))


def _component_sizes(view: UndirectedView) -> np.ndarray:
    # undirected adjacency holds both directions, so reuse the directed union-find
    rows = np.repeat(np.arange(view.n_nodes), np.diff(view.ptr))
    comp, k = _union_find_labels(view.n_nodes, rows.astype(np.int64), view.idx.astype(np.int64))
    return np.bincount(comp, minlength=k)[comp]


def _population_stats(values: Sequence[float]) -> tuple[float, float, float]:
    if not values:
        return 0.0, 0.0, 0.0
    total = math.fsum(values)
    mean = total / len(values)
    var = math.fsum((v - mean) ** 2 for v in values) / len(values)
    return total, mean, math.sqrt(var)


def extract_features(g: TxGraph, transactions: Iterable[Transaction],
                     value_lookup: Mapping[str, Sequence[float]] | None = None) -> FeatureTable:
    """Compute the 14 features for every node of ``g``.

    Input values are resolved through ``value_lookup`` (txid -> output values),
    defaulting to the given transactions; unresolvable inputs count toward
    ``in_utxo_count`` but contribute value 0.
    """
    by_id = {tx.txid: tx for tx in transactions}
    missing = [t for t in g.txids if t not in by_id]
    if missing:
        raise KeyError(f"{len(missing)} graph node(s) have no transaction record, e.g. {missing[0]!r}")
    if value_lookup is None:
        value_lookup = {t: tx.outputs for t, tx in by_id.items()}

    n = g.n_nodes
    mat = np.zeros((n, len(FEATURE_NAMES)))
    resolvable = np.ones(n)
    for i, txid in enumerate(g.txids):
        tx = by_id[txid]
        n_in, n_out = len(tx.inputs), len(tx.outputs)
        in_vals = []
        hits = 0
        for ref in tx.inputs:
            outs = value_lookup.get(ref.source_txid)
            if outs is not None and ref.output_index < len(outs):
                in_vals.append(float(outs[ref.output_index]))
                hits += 1
            else:
                in_vals.append(0.0)
        if n_in:
            resolvable[i] = hits / n_in
        mat[i, 0] = n_in
        mat[i, 1] = n_out
        mat[i, 2] = n_in / n_out
        mat[i, 3:6] = _population_stats(tx.outputs)
        mat[i, 6:9] = _population_stats(in_vals)

    view = g.undirected()
    comp = weak_components(g)
    sizes = comp.node_sizes()
    mat[:, 9] = sizes
    mat[:, 10] = pagerank(g)
    mat[:, 11] = view.degree() / (n - 1) if n > 1 else 0.0
    mat[:, 12] = _clustering_all(n, view.ptr, view.idx)
    mat[:, 13] = _closeness_all(n, view.ptr, view.idx, sizes.astype(np.int64))
    return FeatureTable(list(g.txids), mat, resolvable)


def extract_daily_features(transactions: Iterable[Transaction],
                           value_lookup: Mapping[str, Sequence[float]] | None = None,
                           day_seconds: int = 86400) -> FeatureTable:
    """Features computed on each UTC-day graph separately, rows concatenated day by day."""
    txs = list(transactions)
    if value_lookup is None:
        value_lookup = {tx.txid: tx.outputs for tx in txs}
    by_day: dict[int, list[Transaction]] = {}
    for tx in txs:
        by_day.setdefault(tx.timestamp // day_seconds, []).append(tx)
    ids, rows, res = [], [], []
    for _, day in sorted(by_day.items()):
        table = extract_features(build_graph(day), day, value_lookup)
        ids.extend(table.txids)
        rows.append(table.matrix)
        res.append(table.resolvable_fraction)
    if not rows:
        return FeatureTable([], np.zeros((0, len(FEATURE_NAMES))), np.zeros(0))
    return FeatureTable(ids, np.vstack(rows), np.concatenate(res))


@dataclass(frozen=True)
class ImportanceRanking:
    names: tuple[str, ...]
    scores: np.ndarray

    @property
    def order(self) -> list[str]:
        """Feature names by decreasing importance (stable on ties)."""
        idx = np.argsort(-self.scores, kind="stable")
        return [self.names[i] for i in idx]

    def top(self, k: int = 5) -> list[str]:
        return self.order[:k]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.scores.tolist()))


def feature_importance(features: FeatureTable | np.ndarray,
                       labels: Mapping[str, str] | np.ndarray,
                       max_depth: int = 5, n_estimators: int = 40,
                       names: Sequence[str] | None = None) -> ImportanceRanking:
    """AdaBoost-based importance: stage-weighted impurity decrease, normalised to 1.

    ``features`` is a FeatureTable with ``labels`` mapping txid -> label
    (unlabelled rows skipped), or a raw matrix with a label array.
    """
    from .classify import train_adaboost

    if isinstance(features, FeatureTable):
        lab = labels if isinstance(labels, Mapping) else dict(labels)
        ids = [t for t in features.txids if lab.get(t) in (LAUNDERING, REGULAR)]
        X = features.rows(ids)
        y = np.array([1 if lab[t] == LAUNDERING else -1 for t in ids])
        names = features.names
    else:
        X, y = np.asarray(features), np.asarray(labels)
        names = tuple(names) if names is not None else tuple(f"f{i}" for i in range(X.shape[1]))
    for cls in (1, -1):
        if np.count_nonzero(y == cls) < 2:
            raise ValueError("feature importance needs at least 2 labelled samples per class")
    model = train_adaboost(X, y, n_estimators=n_estimators, max_depth=max_depth)
    return ImportanceRanking(tuple(names), model.feature_importances())


@dataclass(frozen=True)
class CDFTable:
    values: np.ndarray
    cum_frac: np.ndarray

    @property
    def empty(self) -> bool:
        return self.values.size == 0


def empirical_cdf(values: Sequence[float]) -> CDFTable:
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        return CDFTable(v, v.copy())
    uniq, counts = np.unique(v, return_counts=True)
    return CDFTable(uniq, np.cumsum(counts) / v.size)


def feature_cdf_report(features: FeatureTable, labels: LabelSet | Mapping[str, str],
                       feature_names: Sequence[str], by_service: bool = False
                       ) -> dict[tuple[str, str], CDFTable]:
    """Empirical CDFs keyed by (group, feature); group is the class, or the
    service name when ``by_service`` is set (requires a LabelSet)."""
    unknown = [f for f in feature_names if f not in FEATURE_NAMES]
    if unknown:
        raise ValueError(f"unknown feature name(s): {unknown}")
    groups: dict[str, list[int]] = {LAUNDERING: [], REGULAR: []} if not by_service else {}
    for i, t in enumerate(features.txids):
        if by_service:
            if not isinstance(labels, LabelSet):
                raise TypeError("per-service CDFs need a LabelSet")
            s = labels.service(t)
            if s is not None:
                groups.setdefault(s, []).append(i)
        else:
            lab = labels.label(t) if isinstance(labels, LabelSet) else labels.get(t)
            if lab in groups:
                groups[lab].append(i)
    report = {}
    for group in sorted(groups):
        rows = groups[group]
        for f in feature_names:
            col = features.matrix[rows, FEATURE_NAMES.index(f)] if rows else []
            report[(group, f)] = empirical_cdf(col)
    return report


def write_cdf_report(report: Mapping[tuple[str, str], CDFTable], path: str | Path,
                     header_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "feature", "value", "cum_frac"])
        for (group, f), table in report.items():
            for v, c in zip(table.values.tolist(), table.cum_frac.tolist()):
                w.writerow([group, f, repr(v), repr(c)])
