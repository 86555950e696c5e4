"""First-order (deepwalk) and second-order (node2vec) random-walk corpora."""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Collection, Iterable, Iterator, Mapping

import numba
import numpy as np
from numba import njit, prange

from ._rng import alias_draw, build_alias, derive_state, next_uniform, seed64, stable_hash
from .graphcore import TxGraph, UndirectedView

DEEPWALK = "deepwalk"
NODE2VEC = "node2vec"
# alias entries (sum of squared degrees) above which transitions are computed on the fly
DEFAULT_ALIAS_BUDGET = 20_000_000


@dataclass(frozen=True)
class WalkConfig:
    walks_per_node: int = 100
    walk_length: int = 100
    p: float = 2.0
    q: float = 0.5
    mode: str = NODE2VEC
    rng_seed: int = 0

    def __post_init__(self):
        if self.walks_per_node <= 0:
            raise ValueError("walks_per_node must be positive")
        if self.walk_length <= 1:
            raise ValueError("walk_length must be > 1")
        if not (self.p > 0 and self.q > 0):
            raise ValueError("p and q must be positive")
        if self.mode not in (DEEPWALK, NODE2VEC):
            raise ValueError(f"mode must be {DEEPWALK!r} or {NODE2VEC!r}")

    def fingerprint(self) -> str:
        return stable_hash(asdict(self))


@dataclass
class WalkCorpus:
    walks: np.ndarray        # (n_walks, walk_length) int32, padded with -1
    lengths: np.ndarray      # (n_walks,)
    config_hash: str = ""
    start_hash: str = ""

    def __len__(self) -> int:
        return int(self.lengths.size)

    def __iter__(self) -> Iterator[np.ndarray]:
        for row, n in zip(self.walks, self.lengths):
            yield row[:n]

    @property
    def n_tokens(self) -> int:
        return int(self.lengths.sum())

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """Concatenated tokens and walk offsets (length n_walks + 1)."""
        mask = np.arange(self.walks.shape[1])[None, :] < self.lengths[:, None]
        tokens = self.walks[mask].astype(np.int64)
        offsets = np.zeros(len(self) + 1, dtype=np.int64)
        np.cumsum(self.lengths, out=offsets[1:])
        return tokens, offsets

    def nodes(self) -> np.ndarray:
        return np.unique(self.flat()[0])

    def write(self, path: str | Path, header: str = "") -> None:
        """One walk per line; ``header`` (e.g. the run's schema and config hash) is appended to
        the comment line after the walk-config and start-set fingerprints."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# walk_config={self.config_hash} starts={self.start_hash} {header}".rstrip())
            fh.write("\n")
            for walk in self:
                fh.write(" ".join(map(str, walk.tolist())))
                fh.write("\n")

    @classmethod
    def read(cls, path: str | Path) -> "WalkCorpus":
        config_hash = start_hash = ""
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("#"):
                    for part in line[1:].split():
                        key, _, val = part.partition("=")
                        if key == "walk_config":
                            config_hash = val
                        elif key == "starts":
                            start_hash = val
                    continue
                if line.strip():
                    rows.append([int(x) for x in line.split()])
        width = max((len(r) for r in rows), default=0)
        walks = np.full((len(rows), width), -1, dtype=np.int32)
        for i, r in enumerate(rows):
            walks[i, :len(r)] = r
        return cls(walks, np.array([len(r) for r in rows], dtype=np.int64), config_hash, start_hash)


def _sample_size(frac: float, n: int) -> int:
    return int(math.floor(frac * n + 0.5))


def select_start_nodes(g: TxGraph, labels: Collection[str] | Mapping[str, object],
                       train_ids: Iterable[str], test_ids: Iterable[str],
                       frac_labelled_test: float = 1.0, frac_unlabelled_test: float = 1.0,
                       seed: int = 0) -> np.ndarray:
    """All labelled training nodes plus seeded uniform samples of labelled and
    unlabelled test nodes. Only label membership is consulted. Returns sorted dense ids."""
    for name, frac in (("frac_labelled_test", frac_labelled_test),
                       ("frac_unlabelled_test", frac_unlabelled_test)):
        if not 0.0 <= frac <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {frac}")
    train = sorted({i for i, t in [(g.node_id(t), t) for t in train_ids] if t in labels})
    test = {g.node_id(t): t for t in test_ids}
    lab_test = sorted(i for i, t in test.items() if t in labels)
    unl_test = sorted(i for i, t in test.items() if t not in labels)
    rng = np.random.default_rng(seed)
    picked = [np.asarray(train, dtype=np.int64)]
    for pool, frac in ((lab_test, frac_labelled_test), (unl_test, frac_unlabelled_test)):
        k = _sample_size(frac, len(pool))
        if k == len(pool):
            picked.append(np.asarray(pool, dtype=np.int64))
        elif k > 0:
            picked.append(rng.choice(np.asarray(pool, dtype=np.int64), size=k, replace=False))
    return np.unique(np.concatenate(picked))


@njit(cache=True)
def _find_sorted(idx, lo, hi, x):
    while lo < hi:
        mid = (lo + hi) >> 1
        if idx[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def _edge_alias_tables(ptr, idx, inv_p, inv_q):
    """One alias table per directed edge (t -> v) over the neighbours of v."""
    m = idx.shape[0]
    off = np.zeros(m + 1, dtype=np.int64)
    for e in range(m):
        v = idx[e]
        off[e + 1] = off[e] + ptr[v + 1] - ptr[v]
    prob = np.zeros(off[m])
    alias = np.zeros(off[m], dtype=np.int64)
    n = ptr.shape[0] - 1
    for t in range(n):
        for e in range(ptr[t], ptr[t + 1]):
            v = idx[e]
            deg = ptr[v + 1] - ptr[v]
            w = np.empty(deg)
            for k in range(deg):
                x = idx[ptr[v] + k]
                if x == t:
                    w[k] = inv_p
                else:
                    j = _find_sorted(idx, ptr[t], ptr[t + 1], x)
                    if j < ptr[t + 1] and idx[j] == x:
                        w[k] = 1.0
                    else:
                        w[k] = inv_q
            w /= w.sum()
            pr, al = build_alias(w)
            prob[off[e]:off[e + 1]] = pr
            alias[off[e]:off[e + 1]] = al
    return off, prob, alias


@njit(cache=True)
def _step_on_the_fly(ptr, idx, t, v, inv_p, inv_q, u):
    deg = ptr[v + 1] - ptr[v]
    total = 0.0
    w = np.empty(deg)
    for k in range(deg):
        x = idx[ptr[v] + k]
        if x == t:
            w[k] = inv_p
        else:
            j = _find_sorted(idx, ptr[t], ptr[t + 1], x)
            w[k] = 1.0 if (j < ptr[t + 1] and idx[j] == x) else inv_q
        total += w[k]
    target = u * total
    acc = 0.0
    for k in range(deg):
        acc += w[k]
        if target < acc:
            return k
    return deg - 1


@njit(cache=True, parallel=True)
def _walk_kernel(ptr, idx, starts, walks_per_node, length, second_order, inv_p, inv_q, seed,
                 use_alias, off, prob, alias, out, lengths):
    n_starts = starts.shape[0]
    total = n_starts * walks_per_node
    for w in prange(total):
        r = w // n_starts
        s = starts[w % n_starts]
        state = derive_state(seed, s, r)
        out[w, 0] = s
        n = 1
        cur = s
        prev = -1
        prev_edge = -1
        while n < length:
            deg = ptr[cur + 1] - ptr[cur]
            if deg == 0:
                break
            state, u = next_uniform(state)
            if prev < 0 or not second_order:
                k = np.int64(u * deg)
                if k >= deg:
                    k = deg - 1
            elif use_alias:
                k = alias_draw(prob, alias, off[prev_edge], deg, u)
            else:
                k = _step_on_the_fly(ptr, idx, prev, cur, inv_p, inv_q, u)
            prev_edge = ptr[cur] + k
            prev = cur
            cur = idx[prev_edge]
            out[w, n] = cur
            n += 1
        lengths[w] = n


def generate_walks(view: UndirectedView, config: WalkConfig, start_nodes: Iterable[int],
                   alias_budget: int = DEFAULT_ALIAS_BUDGET, threads: int | None = None) -> WalkCorpus:
    """``walks_per_node`` walks from every start node, in round-major canonical order.

    Walk ``r`` from start ``s`` draws from its own stream keyed by (seed, s, r),
    so the corpus is identical for any thread count. Walks stop early only at
    zero-degree nodes.
    """
    starts = np.asarray(sorted(set(int(s) for s in start_nodes)), dtype=np.int64)
    if starts.size and (starts[0] < 0 or starts[-1] >= view.n_nodes):
        raise KeyError("start node outside the graph")
    ptr = view.ptr.astype(np.int64)
    idx = view.idx.astype(np.int64)
    second_order = config.mode == NODE2VEC
    deg = np.diff(ptr)
    use_alias = second_order and int((deg.astype(np.int64) ** 2).sum()) <= alias_budget
    if use_alias:
        off, prob, alias = _edge_alias_tables(ptr, idx, 1.0 / config.p, 1.0 / config.q)
    else:
        off, prob, alias = np.zeros(1, np.int64), np.zeros(1), np.zeros(1, np.int64)

    n_walks = starts.size * config.walks_per_node
    out = np.full((n_walks, config.walk_length), -1, dtype=np.int32)
    lengths = np.zeros(n_walks, dtype=np.int64)
    prev_threads = numba.get_num_threads()
    if threads is not None:
        numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))
    try:
        _walk_kernel(ptr, idx, starts, config.walks_per_node, config.walk_length, second_order,
                     1.0 / config.p, 1.0 / config.q, seed64(config.rng_seed),
                     use_alias, off, prob, alias, out, lengths)
    finally:
        numba.set_num_threads(prev_threads)
    start_hash = hashlib.sha256(starts.tobytes()).hexdigest()[:16]
    return WalkCorpus(out, lengths, config.fingerprint(), start_hash)


def transition_probabilities(view: UndirectedView, prev: int | None, cur: int,
                             p: float, q: float) -> dict[int, float]:
    """Analytic next-step law from ``cur`` given the previous node (None for the first step)."""
    nbrs = view.neighbors(cur).tolist()
    if prev is None:
        return {x: 1.0 / len(nbrs) for x in nbrs}
    prev_nb = set(view.neighbors(prev).tolist())
    w = {x: (1.0 / p if x == prev else 1.0 if x in prev_nb else 1.0 / q) for x in nbrs}
    z = sum(w.values())
    return {x: v / z for x, v in w.items()}
