"""Brute-force reference implementations used as test oracles.

Deliberately naive: plain dicts, lists and loops, no shared code with the package.
"""
from __future__ import annotations

import math
import random
from collections import Counter, deque

import numpy as np

from amlgraph.ingest import OutputRef, Transaction


def random_transactions(rng: random.Random, n: int, spend_rate: float = 1.2,
                        dangling_rate: float = 0.1) -> list[Transaction]:
    """Random spend DAG over n transactions, including duplicate spends and dangling refs."""
    n_out = [rng.randint(1, 4) for _ in range(n)]
    txs = []
    for j in range(n):
        inputs = []
        k = min(j, int(rng.expovariate(1.0 / spend_rate)) if spend_rate > 0 else 0)
        for _ in range(k):
            i = rng.randrange(j)
            inputs.append(OutputRef(f"n{i}", rng.randrange(n_out[i])))
            if rng.random() < 0.1:
                inputs.append(OutputRef(f"n{i}", rng.randrange(n_out[i])))
        if rng.random() < dangling_rate:
            inputs.append(OutputRef("outside", 0))
        outs = tuple(round(rng.uniform(0, 10), 3) for _ in range(n_out[j]))
        txs.append(Transaction(f"n{j}", j, tuple(inputs), outs))
    rng.shuffle(txs)
    return txs


def spend_edges(txs) -> Counter:
    ids = {t.txid for t in txs}
    c: Counter = Counter()
    for t in txs:
        for ref in t.inputs:
            if ref.source_txid in ids:
                c[(ref.source_txid, t.txid)] += 1
    return c


def degrees(txs) -> tuple[dict, dict]:
    indeg = {t.txid: 0 for t in txs}
    outdeg = dict(indeg)
    for a, b in spend_edges(txs):
        outdeg[a] += 1
        indeg[b] += 1
    return indeg, outdeg


def undirected_adjacency(txs) -> dict[str, set]:
    adj = {t.txid: set() for t in txs}
    for a, b in spend_edges(txs):
        adj[a].add(b)
        adj[b].add(a)
    return adj


def flood_components(txs) -> list[list[str]]:
    """BFS flood fill in input order; each component lists members in input order."""
    adj = undirected_adjacency(txs)
    order = {t.txid: i for i, t in enumerate(txs)}
    seen: set = set()
    comps = []
    for t in txs:
        if t.txid in seen:
            continue
        comp, queue = [], deque([t.txid])
        seen.add(t.txid)
        while queue:
            u = queue.popleft()
            comp.append(u)
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        comps.append(sorted(comp, key=order.get))
    return comps


def giant(txs) -> set:
    comps = flood_components(txs)
    best = max(len(c) for c in comps)
    return set(next(c for c in comps if len(c) == best))


def density(txs) -> float:
    n = len(txs)
    return len(spend_edges(txs)) / (n * (n - 1))


def pagerank_power(n: int, edges, damping: float = 0.85, iters: int = 100) -> np.ndarray:
    """Textbook power method, fixed iteration count, dense transition matrix."""
    M = np.zeros((n, n))
    out = [0] * n
    for a, b in edges:
        out[a] += 1
    for a, b in edges:
        M[b, a] += 1.0 / out[a]
    for a in range(n):
        if out[a] == 0:
            M[:, a] = 1.0 / n
    x = np.full(n, 1.0 / n)
    for _ in range(iters):
        x = damping * M @ x + (1 - damping) / n
    return x


def adaboost_trace(X, y, stages: int):
    """Hand-style discrete AdaBoost with exhaustive decision stumps.

    Stumps are enumerated over every feature and every midpoint threshold, both
    polarities; ties go to (feature, threshold) order with the majority-leaf
    labelling a Gini tree would choose. Returns per-stage (eps, alpha,
    weights-before) plus final weights and labels.
    """
    n = len(y)
    w = [1.0 / n] * n
    trace = []
    stumps = []
    for _ in range(stages):
        best = None
        for f in range(len(X[0])):
            vals = sorted(set(row[f] for row in X))
            for lo, hi in zip(vals, vals[1:]):
                thr = lo + (hi - lo) / 2
                left = [i for i in range(n) if X[i][f] <= thr]
                right = [i for i in range(n) if X[i][f] > thr]

                def leaf(rows):
                    pw = sum(w[i] for i in rows if y[i] > 0)
                    nw = sum(w[i] for i in rows if y[i] < 0)
                    return (1 if pw > nw else -1), pw, nw

                lv, lp, ln = leaf(left)
                rv, rp, rn = leaf(right)
                gini = 0.0
                for p_, n_ in ((lp, ln), (rp, rn)):
                    tot = p_ + n_
                    if tot > 0:
                        gini += tot * (1 - (p_ / tot) ** 2 - (n_ / tot) ** 2)
                if best is None or gini < best[0] - 1e-15:
                    best = (gini, f, thr, lv, rv)
        _, f, thr, lv, rv = best
        h = [lv if X[i][f] <= thr else rv for i in range(n)]
        eps = sum(w[i] for i in range(n) if h[i] != y[i])
        alpha = 0.5 * math.log((1 - eps) / eps)
        trace.append((eps, alpha, list(w)))
        stumps.append((f, thr, lv, rv, alpha))
        w = [w[i] * math.exp(-alpha * y[i] * h[i]) for i in range(n)]
        z = sum(w)
        w = [v / z for v in w]

    def vote(row):
        m = sum(a * (lv if row[f] <= thr else rv) for f, thr, lv, rv, a in stumps)
        return 1 if m > 0 else -1

    return trace, w, [vote(row) for row in X]
