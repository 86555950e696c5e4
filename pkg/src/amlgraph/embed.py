"""Skip-gram with negative sampling over walk corpora."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numba
import numpy as np
from numba import njit, prange

from ._rng import alias_draw, build_alias, derive_state, next_uniform, seed64
from .walks import WalkCorpus


@dataclass(frozen=True)
class SkipGramConfig:
    dim: int = 25
    window: int = 10
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    min_lr: float = 1e-4
    subsample: float = 0.0
    rng_seed: int = 0
    deterministic: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("embedding dimension must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0 or self.min_lr < 0 or self.min_lr > self.lr:
            raise ValueError("need lr > 0 and 0 <= min_lr <= lr")
        if self.subsample < 0:
            raise ValueError("subsample threshold must be >= 0")


@dataclass
class EmbeddingTable:
    ids: np.ndarray                 # node id per row
    vectors: np.ndarray             # (n, dim) float64
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            self.vectors = self.vectors.reshape(len(self.ids), -1)
        self._row = {int(k): i for i, k in enumerate(self.ids.tolist())}

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1]) if self.vectors.ndim == 2 else 0

    def __len__(self) -> int:
        return int(self.ids.size)

    def __contains__(self, node: int) -> bool:
        return int(node) in self._row

    def __getitem__(self, node: int) -> np.ndarray:
        return self.vectors[self._row[int(node)]]

    def matrix(self, nodes: Iterable[int], missing: str = "zero") -> np.ndarray:
        """Stack vectors for ``nodes``; nodes without a vector get zeros
        (``missing="zero"``) or raise (``missing="raise"``)."""
        nodes = list(nodes)
        out = np.zeros((len(nodes), self.dim))
        for i, u in enumerate(nodes):
            r = self._row.get(int(u))
            if r is None:
                if missing == "raise":
                    raise KeyError(f"no embedding for node {u}")
                continue
            out[i] = self.vectors[r]
        return out


def noise_distribution(counts: np.ndarray, power: float = 0.75) -> np.ndarray:
    w = np.asarray(counts, dtype=np.float64) ** power
    return w / w.sum()


@njit(cache=True)
def _softplus(x):
    # log(1 + exp(x)) without overflow
    if x > 0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


# the loss is evaluated on one pair in LOSS_STRIDE; it is a monitor, not part of the update
LOSS_STRIDE = 8


@njit(cache=True, fastmath=True)
def _pair_update(W, C, c, o, negs, n_negs, lr, grad, want_loss):
    """One SGD step on -log s(u_o.v_c) - sum_k log s(-u_nk.v_c).

    Returns the pair loss when ``want_loss`` is set, else 0.
    """
    d = W.shape[1]
    wc = W[c]
    one = wc.dtype.type(1.0)
    zero = wc.dtype.type(0.0)
    step = wc.dtype.type(lr)
    for k in range(d):
        grad[k] = 0.0
    loss = 0.0
    for t in range(n_negs + 1):
        tgt = o if t == 0 else negs[t - 1]
        ct = C[tgt]
        dot = wc[0] * ct[0]
        for k in range(1, d):
            dot += wc[k] * ct[k]
        sg = one / (one + np.exp(-dot))
        if want_loss:
            x = np.float64(dot)
            loss += _softplus(-x) if t == 0 else _softplus(x)
        g = step * ((one if t == 0 else zero) - sg)
        for k in range(d):
            grad[k] += g * ct[k]
            ct[k] += g * wc[k]
    for k in range(d):
        wc[k] += grad[k]
    return loss


@njit(cache=True)
def _walk_pass(tokens, s, e, W, C, nprob, nalias, keep, window, neg, lr_hi, lr_lo, total, done,
               state, grad, negs, buf):
    n_vocab = nprob.shape[0]
    m = 0
    for i in range(s, e):
        tok = tokens[i]
        if keep[tok] < 1.0:
            state, u = next_uniform(state)
            if u >= keep[tok]:
                continue
        buf[m] = tok
        m += 1
    loss = 0.0
    sampled = 0
    pairs = 0
    for i in range(m):
        lr = lr_hi - (lr_hi - lr_lo) * (done + i) / total
        if lr < lr_lo:
            lr = lr_lo
        c = buf[i]
        lo = max(0, i - window)
        hi = min(m, i + window + 1)
        for j in range(lo, hi):
            if j == i:
                continue
            o = buf[j]
            k = 0
            for _ in range(neg):
                state, u = next_uniform(state)
                x = alias_draw(nprob, nalias, 0, n_vocab, u)
                if x != o:
                    negs[k] = x
                    k += 1
            want = pairs % LOSS_STRIDE == 0
            loss += _pair_update(W, C, c, o, negs, k, lr, grad, want)
            sampled += want
            pairs += 1
    return loss, sampled, state


@njit(cache=True)
def _epoch_sequential(tokens, offsets, W, C, nprob, nalias, keep, window, neg, lr_hi, lr_lo,
                      total, done0, seed, epoch):
    d = W.shape[1]
    grad = np.zeros(d, dtype=W.dtype)
    negs = np.zeros(neg, dtype=np.int64)
    buf = np.zeros(max(1, np.max(np.diff(offsets))), dtype=np.int64)
    loss = 0.0
    sampled = 0
    done = done0
    for w in range(offsets.shape[0] - 1):
        s, e = offsets[w], offsets[w + 1]
        state = derive_state(seed, epoch, w)
        l, p, state = _walk_pass(tokens, s, e, W, C, nprob, nalias, keep, window, neg,
                                 lr_hi, lr_lo, total, done, state, grad, negs, buf)
        loss += l
        sampled += p
        done += e - s
    return loss, sampled


@njit(cache=True, parallel=True)
def _epoch_parallel(tokens, offsets, W, C, nprob, nalias, keep, window, neg, lr_hi, lr_lo,
                    total, done0, seed, epoch, n_chunks):
    # lock-free shared updates; reproducible only in distribution
    n_walks = offsets.shape[0] - 1
    d = W.shape[1]
    maxlen = max(1, np.max(np.diff(offsets)))
    losses = np.zeros(n_chunks)
    counts = np.zeros(n_chunks, dtype=np.int64)
    for ch in prange(n_chunks):
        grad = np.zeros(d, dtype=W.dtype)
        negs = np.zeros(neg, dtype=np.int64)
        buf = np.zeros(maxlen, dtype=np.int64)
        for w in range(ch, n_walks, n_chunks):
            s, e = offsets[w], offsets[w + 1]
            state = derive_state(seed, epoch, w)
            l, p, state = _walk_pass(tokens, s, e, W, C, nprob, nalias, keep, window, neg,
                                     lr_hi, lr_lo, total, done0 + s, state, grad, negs, buf)
            losses[ch] += l
            counts[ch] += p
    return losses.sum(), counts.sum()


def train_embeddings(corpus: WalkCorpus, config: SkipGramConfig = SkipGramConfig()) -> EmbeddingTable:
    """Learn one vector per node appearing in ``corpus``; the centre-vector table is returned.

    The learning rate decays linearly from ``lr`` to ``min_lr`` over all tokens of
    all epochs. Negatives are drawn from unigram^0.75 over corpus nodes.
    Deterministic mode is bit-reproducible for a fixed (corpus, config).
    """
    raw, offsets = corpus.flat()
    if raw.size == 0:
        raise ValueError("cannot train on an empty corpus")
    vocab, tokens = np.unique(raw, return_inverse=True)
    tokens = tokens.astype(np.int64)
    counts = np.bincount(tokens, minlength=vocab.size)
    nprob, nalias = build_alias(noise_distribution(counts))
    if config.subsample > 0:
        freq = counts / counts.sum()
        t = config.subsample
        keep = np.minimum(1.0, (np.sqrt(freq / t) + 1.0) * t / freq)
    else:
        keep = np.ones(vocab.size)

    rng = np.random.default_rng(config.rng_seed)
    d = config.dim
    dtype = np.float32
    W = ((rng.random((vocab.size, d)) - 0.5) / d).astype(dtype)
    C = np.zeros((vocab.size, d), dtype=dtype)

    seed = seed64(config.rng_seed)
    total = float(tokens.size * config.epochs)
    epoch_loss = []
    prev_threads = numba.get_num_threads()
    try:
        if not config.deterministic:
            numba.set_num_threads(max(1, min(config.threads, numba.config.NUMBA_NUM_THREADS)))
        for ep in range(config.epochs):
            done0 = float(ep * tokens.size)
            if config.deterministic:
                loss, sampled = _epoch_sequential(tokens, offsets, W, C, nprob, nalias, keep,
                                                config.window, config.negatives, config.lr,
                                                config.min_lr, total, done0, seed, ep)
            else:
                loss, sampled = _epoch_parallel(tokens, offsets, W, C, nprob, nalias, keep,
                                              config.window, config.negatives, config.lr,
                                              config.min_lr, total, done0, seed, ep,
                                              max(1, config.threads) * 8)
            epoch_loss.append(loss / max(sampled, 1))
    finally:
        numba.set_num_threads(prev_threads)

    vectors = W.astype(np.float64)
    if not np.isfinite(vectors).all():
        raise FloatingPointError("embedding training diverged")
    meta = asdict(config)
    meta.update(epoch_loss=epoch_loss, final_loss=epoch_loss[-1], n_tokens=int(tokens.size))
    return EmbeddingTable(vocab, vectors, meta)


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def sgns_loss_and_grads(W: np.ndarray, C: np.ndarray,
                        triples: Sequence[tuple[int, int, Sequence[int]]]):
    """Summed SGNS loss over (centre, context, negatives) triples and its exact
    gradients with respect to the centre table ``W`` and context table ``C``."""
    gW = np.zeros_like(W, dtype=np.float64)
    gC = np.zeros_like(C, dtype=np.float64)
    loss = 0.0
    for c, o, negs in triples:
        v = W[c]
        s = C[o] @ v
        loss -= _log_sigmoid(s)
        coef = 1.0 / (1.0 + np.exp(-s)) - 1.0          # d/ds of -log s(s)
        gW[c] += coef * C[o]
        gC[o] += coef * v
        for n in negs:
            s = C[n] @ v
            loss -= _log_sigmoid(-s)
            coef = 1.0 / (1.0 + np.exp(-s))           # d/ds of -log s(-s)
            gW[c] += coef * C[n]
            gC[n] += coef * v
    return float(loss), gW, gC


def sgns_gradient_check(W: np.ndarray | None = None, C: np.ndarray | None = None,
                        triples=None, h: float = 1e-6, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Defaults to a random 8-node, d=3 fixture. Relative error per entry is
    |a - f| / max(|a| + |f|, 1e-12); entries where both are exactly zero count as 0.
    """
    rng = np.random.default_rng(seed)
    if W is None:
        W = rng.normal(scale=0.5, size=(8, 3))
    if C is None:
        C = rng.normal(scale=0.5, size=W.shape)
    if triples is None:
        triples = [(0, 1, [2, 3, 4]), (1, 0, [5, 6]), (2, 7, [0, 3]), (3, 4, [4, 5])]
    W = np.array(W, dtype=np.float64)
    C = np.array(C, dtype=np.float64)
    _, gW, gC = sgns_loss_and_grads(W, C, triples)
    worst = 0.0
    for table, grad in ((W, gW), (C, gC)):
        it = np.nditer(table, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            old = table[ix]
            table[ix] = old + h
            up = sgns_loss_and_grads(W, C, triples)[0]
            table[ix] = old - h
            down = sgns_loss_and_grads(W, C, triples)[0]
            table[ix] = old
            fd = (up - down) / (2 * h)
            a = grad[ix]
            denom = abs(a) + abs(fd)
            if denom == 0.0:
                continue
            worst = max(worst, abs(a - fd) / max(denom, 1e-12))
    return worst


def export_embeddings(table: EmbeddingTable, path: str | Path, header_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(f"{len(table)} {table.dim}\n")
        for node, vec in zip(table.ids.tolist(), table.vectors.tolist()):
            fh.write(f"{node} " + " ".join(map(repr, vec)) + "\n")


def import_embeddings(path: str | Path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        offset = 1
        while first.startswith("#"):
            first = fh.readline()
            offset += 1
        header = first.split()
        if len(header) != 2:
            raise ValueError(f"{path}: header must be '<count> <dim>'")
        count, dim = int(header[0]), int(header[1])
        ids, rows = [], []
        for lineno, line in enumerate(fh, start=offset + 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise ValueError(f"{path}: line {lineno} (node {parts[0]}) has "
                                 f"{len(parts) - 1} values, expected {dim}")
            ids.append(int(parts[0]))
            rows.append([float(x) for x in parts[1:]])
    if len(ids) != count:
        raise ValueError(f"{path}: header declares {count} rows, found {len(ids)}")
    vectors = np.array(rows, dtype=np.float64).reshape(count, dim)
    return EmbeddingTable(np.array(ids, dtype=np.int64), vectors)
