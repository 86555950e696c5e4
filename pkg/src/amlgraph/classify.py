"""Decision trees, discrete AdaBoost, the immediate-neighbour rule and OR/AND ensembles.

Labels are encoded internally as +1 (laundering) and -1 (regular).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graphcore import UndirectedView
from .ingest import LAUNDERING, REGULAR

MODEL_FORMAT = "amlgraph.adaboost/1"
ALPHA_CAP = math.log(1e10) / 2


def encode_labels(labels: Iterable[str]) -> np.ndarray:
    out = []
    for lab in labels:
        if lab == LAUNDERING:
            out.append(1)
        elif lab == REGULAR:
            out.append(-1)
        else:
            raise ValueError(f"not a class label: {lab!r}")
    return np.array(out, dtype=np.int64)


def _gini(pos, neg):
    tot = pos + neg
    with np.errstate(invalid="ignore", divide="ignore"):
        g = 1.0 - (pos * pos + neg * neg) / (tot * tot)
    return np.where(tot > 0, g, 0.0)


@dataclass
class DecisionTree:
    """Array-encoded binary tree. Leaves have ``feature == -1``.

    A sample goes left when ``x[feature] <= threshold``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray          # +1 / -1 majority class at each node
    proba: np.ndarray          # laundering weight fraction at each node
    gain: np.ndarray           # weighted impurity decrease at each split node
    n_features: int
    max_depth: int

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if self.feature[node] >= 0:
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return best

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for each row."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def feature_importances(self) -> np.ndarray:
        imp = np.zeros(self.n_features)
        split = self.feature >= 0
        np.add.at(imp, self.feature[split], self.gain[split])
        return imp

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
            "left": self.left.tolist(), "right": self.right.tolist(),
            "value": self.value.tolist(), "proba": self.proba.tolist(), "gain": self.gain.tolist(),
            "n_features": self.n_features, "max_depth": self.max_depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(
            np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=np.float64),
            np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=np.int64), np.array(d["proba"], dtype=np.float64),
            np.array(d["gain"], dtype=np.float64), int(d["n_features"]), int(d["max_depth"]),
        )


def _best_split(X, y, w, rows, min_leaf):
    """Best (gain, feature, threshold) for the node holding ``rows``, or None.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    wr, yr = w[rows], y[rows]
    pos_w = np.where(yr > 0, wr, 0.0)
    neg_w = wr - pos_w
    tot_pos, tot_neg = pos_w.sum(), neg_w.sum()
    parent = (tot_pos + tot_neg) * float(_gini(tot_pos, tot_neg))
    n = rows.size
    best = None
    for f in range(X.shape[1]):
        xs = X[rows, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        valid = xs[:-1] < xs[1:]
        if min_leaf > 1:
            k = np.arange(1, n)
            valid &= (k >= min_leaf) & (n - k >= min_leaf)
        if not valid.any():
            continue
        lp = np.cumsum(pos_w[order])[:-1]
        ln = np.cumsum(neg_w[order])[:-1]
        rp, rn = tot_pos - lp, tot_neg - ln
        gains = parent - (lp + ln) * _gini(lp, ln) - (rp + rn) * _gini(rp, rn)
        gains = np.where(valid, gains, -np.inf)
        i = int(np.argmax(gains))
        if best is None or gains[i] > best[0]:
            lo, hi = xs[i], xs[i + 1]
            thr = lo + (hi - lo) / 2.0
            if not lo <= thr < hi:
                thr = lo
            best = (float(gains[i]), f, float(thr))
    return best


def train_decision_tree(X: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None,
                        max_depth: int = 5, min_leaf: int = 1) -> DecisionTree:
    """Greedy weighted-Gini tree, splits at midpoints between distinct sorted values.

    Impure nodes are split whenever a valid split exists, including zero-gain
    ones (so XOR-like targets remain learnable at depth 2).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data is empty")
    n = X.shape[0]
    if y.shape != (n,):
        raise ValueError("X and y lengths differ")
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError("weights length differs from X")
    if (w < 0).any() or not w.sum() > 0:
        raise ValueError("weights must be non-negative with a positive sum")
    if max_depth < 0 or min_leaf < 1:
        raise ValueError("max_depth must be >= 0 and min_leaf >= 1")

    feature, threshold, left, right, value, proba, gain = [], [], [], [], [], [], []

    def new_node(rows):
        pw = float(w[rows][y[rows] > 0].sum())
        nw = float(w[rows].sum()) - pw
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(1 if pw > nw else -1)
        proba.append(pw / (pw + nw) if pw + nw > 0 else 0.0)
        gain.append(0.0)
        return len(feature) - 1, pw, nw

    root, pw, nw = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0, pw, nw)]
    while stack:
        node, rows, depth, pw, nw = stack.pop()
        if depth >= max_depth or pw <= 0 or nw <= 0 or rows.size < 2 * min_leaf:
            continue
        split = _best_split(X, y, w, rows, min_leaf)
        if split is None:
            continue
        g, f, thr = split
        go_left = X[rows, f] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node], threshold[node], gain[node] = f, thr, max(g, 0.0)
        lnode, lpw, lnw = new_node(lrows)
        rnode, rpw, rnw = new_node(rrows)
        left[node], right[node] = lnode, rnode
        stack.append((rnode, rrows, depth + 1, rpw, rnw))
        stack.append((lnode, lrows, depth + 1, lpw, lnw))

    return DecisionTree(
        np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64), np.array(value, dtype=np.int64), np.array(proba),
        np.array(gain), X.shape[1], max_depth,
    )


@dataclass
class AdaBoostModel:
    trees: list[DecisionTree]
    alphas: list[float]
    errors: list[float] = field(default_factory=list)
    weight_history: list[np.ndarray] = field(default_factory=list)
    n_features: int = 0
    max_depth: int = 5
    n_estimators: int = 40

    @property
    def stages(self) -> list[tuple[DecisionTree, float]]:
        return list(zip(self.trees, self.alphas))

    def margin(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"model expects {self.n_features} features, got shape {X.shape}")
        out = np.zeros(X.shape[0])
        for tree, alpha in zip(self.trees, self.alphas):
            out += alpha * tree.predict(X)
        return out

    def predict_labels(self, X: np.ndarray) -> np.ndarray:
        """+1 where the vote margin is strictly positive, else -1."""
        return np.where(self.margin(X) > 0, 1, -1)

    def feature_importances(self) -> np.ndarray:
        total = np.zeros(self.n_features)
        for tree, alpha in zip(self.trees, self.alphas):
            imp = tree.feature_importances()
            s = imp.sum()
            if s > 0 and alpha > 0:
                total += alpha * imp / s
        s = total.sum()
        return total / s if s > 0 else total

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "n_features": self.n_features, "max_depth": self.max_depth,
            "n_estimators": self.n_estimators,
            "alphas": self.alphas, "errors": self.errors,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdaBoostModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        return cls([DecisionTree.from_dict(t) for t in d["trees"]], list(d["alphas"]),
                   list(d["errors"]), [], int(d["n_features"]), int(d["max_depth"]),
                   int(d["n_estimators"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AdaBoostModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def stage_weight(error: float) -> float:
    """alpha = 1/2 ln((1 - eps) / eps), capped for eps = 0."""
    if error <= 0.0:
        return ALPHA_CAP
    return 0.5 * math.log((1.0 - error) / error)


def train_adaboost(X: np.ndarray, y: np.ndarray, n_estimators: int = 40, max_depth: int = 5,
                   seed: int | None = None, min_leaf: int = 1) -> AdaBoostModel:
    """Two-class discrete AdaBoost over weighted-Gini trees.

    After each stage the sample weights become ``w * exp(-alpha * y * h(x))``
    renormalised. Training stops early on a perfect stage (kept, alpha capped)
    or on a stage with error >= 0.5 after the first (dropped). Tree induction
    is deterministic, so ``seed`` is accepted only for interface symmetry.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if set(np.unique(y).tolist()) != {-1, 1}:
        raise ValueError("AdaBoost needs both classes in the training labels")
    if n_estimators < 1:
        raise ValueError("n_estimators must be >= 1")
    n = X.shape[0]
    w = np.full(n, 1.0 / n)
    model = AdaBoostModel([], [], [], [], X.shape[1], max_depth, n_estimators)
    for m in range(n_estimators):
        tree = train_decision_tree(X, y, w, max_depth=max_depth, min_leaf=min_leaf)
        h = tree.predict(X)
        err = float(w[h != y].sum())
        if err >= 0.5 and m > 0:
            break
        alpha = stage_weight(err)
        model.trees.append(tree)
        model.alphas.append(alpha)
        model.errors.append(err)
        model.weight_history.append(w.copy())
        if err <= 0.0 or err >= 0.5:
            break
        w = w * np.exp(-alpha * y * h)
        w /= w.sum()
    model.weight_history.append(w.copy())
    return model


@dataclass
class Prediction:
    ids: list
    laundering: np.ndarray     # bool per id
    margin: np.ndarray

    def __post_init__(self):
        self.laundering = np.asarray(self.laundering, dtype=bool)
        self.margin = np.asarray(self.margin, dtype=np.float64)
        self._pos = {k: i for i, k in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def label(self, key) -> str:
        return LAUNDERING if self.laundering[self._pos[key]] else REGULAR

    def as_dict(self) -> dict:
        return {k: (LAUNDERING if f else REGULAR) for k, f in zip(self.ids, self.laundering.tolist())}

    def reindex(self, ids: Sequence) -> "Prediction":
        idx = [self._pos[k] for k in ids]
        return Prediction(list(ids), self.laundering[idx], self.margin[idx])

    def write_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["txid", "label", "margin"])
            for k, f, m in zip(self.ids, self.laundering.tolist(), self.margin.tolist()):
                w.writerow([k, LAUNDERING if f else REGULAR, repr(m)])

    @classmethod
    def read_csv(cls, path: str | Path) -> "Prediction":
        with open(path, encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        body = rows[1:]
        return cls([r[0] for r in body], [r[1] == LAUNDERING for r in body],
                   [float(r[2]) for r in body])


def predict(model: AdaBoostModel, X: np.ndarray, ids: Sequence | None = None) -> Prediction:
    margin = model.margin(X)
    ids = list(range(len(margin))) if ids is None else list(ids)
    if len(ids) != len(margin):
        raise ValueError("ids and rows differ in length")
    return Prediction(ids, margin > 0, margin)


def neighbour_classifier(view: UndirectedView, labels_train: Mapping[int, str],
                         test_ids: Sequence[int]) -> Prediction:
    """Immediate-neighbour majority rule over training labels only.

    Laundering when laundering neighbours >= regular neighbours and at least
    one labelled neighbour exists; otherwise regular. Margin is the count
    difference (laundering minus regular) shifted by +0.5 when any neighbour is
    labelled and set to -0.5 otherwise, so its sign always agrees with the label.
    """
    flags, margins = [], []
    for u in test_ids:
        nb = view.neighbors(u)
        n_l = n_r = 0
        for v in nb.tolist():
            lab = labels_train.get(v)
            if lab == LAUNDERING:
                n_l += 1
            elif lab == REGULAR:
                n_r += 1
        flags.append(n_l + n_r > 0 and n_l >= n_r)
        margins.append(n_l - n_r + 0.5 if n_l + n_r > 0 else -0.5)
    return Prediction(list(test_ids), flags, margins)


def ensemble(a: Prediction, b: Prediction, mode: str) -> Prediction:
    """OR: laundering if either says so (margin max). AND: only if both (margin min)."""
    if set(a.ids) != set(b.ids) or len(a.ids) != len(b.ids):
        raise ValueError("ensemble inputs cover different id sets")
    b = b.reindex(a.ids)
    mode = mode.upper()
    if mode == "OR":
        return Prediction(list(a.ids), a.laundering | b.laundering, np.maximum(a.margin, b.margin))
    if mode == "AND":
        return Prediction(list(a.ids), a.laundering & b.laundering, np.minimum(a.margin, b.margin))
    raise ValueError(f"ensemble mode must be OR or AND, got {mode!r}")
