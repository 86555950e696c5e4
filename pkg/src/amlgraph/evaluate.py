"""Experimental protocols: temporal and leave-one-service-out splits, the
classification pipeline for each method, metrics, and parameter sweeps."""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._rng import stable_hash, sub_seed
from .classify import (Prediction, encode_labels, ensemble, neighbour_classifier, predict,
                       train_adaboost)
from .embed import EmbeddingTable, SkipGramConfig, train_embeddings
from .features import FeatureTable, extract_daily_features
from .graphcore import build_graph, giant_component_subgraph
from .ingest import LAUNDERING, REGULAR, Dataset, LabelSet, Transaction, window_filter
from .walks import (DEEPWALK, DEFAULT_ALIAS_BUDGET, NODE2VEC, WalkConfig, WalkCorpus,
                    generate_walks, select_start_nodes)

DAY = 86_400
TEMPORAL = "temporal"
LOSO = "loso"
NEIGHBOUR = "neighbour"
CURATED = "curated"
OR = "OR"
AND = "AND"
METHODS = (NEIGHBOUR, CURATED, DEEPWALK, NODE2VEC, OR, AND)
MIN_TRAIN_LAUNDERING = 150

METRICS_SCHEMA = "amlgraph.metrics/1"
REPORT_COLUMNS = ("week", "method", "params_hash", "acc", "precision", "recall", "f1",
                  "tp", "fp", "tn", "fn", "n_train_pos", "n_train_neg", "skipped")


def normalize_method(method: str) -> str:
    m = method.strip()
    if m.upper() in (OR, AND):
        return m.upper()
    m = m.lower()
    if m == "neighbor":
        m = NEIGHBOUR
    if m not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    return m


def day_floor(ts: int) -> int:
    return int(ts) - int(ts) % DAY


def week_label(ts: int) -> str:
    return dt.datetime.fromtimestamp(ts, dt.timezone.utc).strftime("%Y-%m-%d")


@dataclass(frozen=True)
class SplitSpec:
    mode: str = TEMPORAL
    week_start: int | None = None      # floored to UTC midnight; None = first day of the data
    train_days: int = 5
    test_days: int = 2
    held_out: str | None = None

    def __post_init__(self):
        if self.mode not in (TEMPORAL, LOSO):
            raise ValueError(f"split mode must be {TEMPORAL!r} or {LOSO!r}")
        if self.train_days < 1 or self.test_days < 1:
            raise ValueError("train_days and test_days must be >= 1")
        if self.mode == LOSO and not self.held_out:
            raise ValueError("leave-one-service-out split needs a held-out service")

    def resolve(self, transactions: Sequence[Transaction]) -> "SplitSpec":
        if self.week_start is not None:
            return replace(self, week_start=day_floor(self.week_start))
        if not transactions:
            raise ValueError("cannot infer week start from an empty dataset")
        return replace(self, week_start=day_floor(min(tx.timestamp for tx in transactions)))

    def bounds(self) -> tuple[int, int, int]:
        if self.week_start is None:
            raise ValueError("unresolved week start")
        start = day_floor(self.week_start)
        mid = start + self.train_days * DAY
        return start, mid, mid + self.test_days * DAY


@dataclass
class Split:
    spec: SplitSpec
    train_ids: list[str]               # labelled
    test_ids: list[str]                # labelled
    test_unlabelled_ids: list[str]     # unlabelled window transactions on the test side
    truth: dict[str, str]              # labels of train and test ids

    def __post_init__(self):
        overlap = set(self.train_ids) & (set(self.test_ids) | set(self.test_unlabelled_ids))
        if overlap:
            raise AssertionError(f"{len(overlap)} transaction(s) on both sides of the split")

    @property
    def test_counts(self) -> tuple[int, int]:
        pos = sum(1 for t in self.test_ids if self.truth[t] == LAUNDERING)
        return pos, len(self.test_ids) - pos

    @property
    def test_ratio(self) -> float:
        pos, neg = self.test_counts
        return pos / neg if neg else math.inf


def temporal_split(transactions: Sequence[Transaction], labels: LabelSet, spec: SplitSpec) -> Split:
    """Labelled transactions in the first ``train_days`` days train; the rest of
    the week tests. Days are half-open UTC intervals."""
    spec = spec.resolve(transactions)
    start, mid, end = spec.bounds()
    train, test, unl = [], [], []
    for tx in window_filter(transactions, start, end):
        lab = labels.label(tx.txid)
        if lab is None:
            if tx.timestamp >= mid:
                unl.append(tx.txid)
        elif tx.timestamp < mid:
            train.append(tx.txid)
        else:
            test.append(tx.txid)
    if not train:
        raise ValueError("empty training set: no labelled transactions before "
                         f"{week_label(mid)}")
    if not test:
        raise ValueError("empty test set: no labelled transactions in the test days")
    truth = labels.labels_only(train + test)
    return Split(spec, train, test, unl, truth)


def loso_split(transactions: Sequence[Transaction], labels: LabelSet, held_out: str,
               week_start: int | None = None, train_days: int = 5, test_days: int = 2) -> Split:
    """Train on other services' labels in the training days; test on the held-out
    service plus regular transactions of the test days.

    The held-out service's own training-day transactions are left out of both sides.
    """
    if held_out not in labels.services:
        raise KeyError(f"unknown service {held_out!r}")
    spec = SplitSpec(LOSO, week_start, train_days, test_days, held_out).resolve(transactions)
    start, mid, end = spec.bounds()
    train, test, unl = [], [], []
    present = False
    for tx in window_filter(transactions, start, end):
        entry = labels.get(tx.txid)
        if entry is None:
            if tx.timestamp >= mid:
                unl.append(tx.txid)
            continue
        service, lab = entry
        if service == held_out:
            present = True
            if tx.timestamp >= mid:
                test.append(tx.txid)
        elif tx.timestamp < mid:
            train.append(tx.txid)
        elif lab == REGULAR:
            test.append(tx.txid)
    if not present:
        raise ValueError(f"service {held_out!r} has no transactions in the week of {week_label(start)}")
    if not train:
        raise ValueError("empty training set")
    if not test:
        raise ValueError("empty test set")
    truth = labels.labels_only(train + test)
    return Split(spec, train, test, unl, truth)


def make_split(dataset: Dataset, spec: SplitSpec) -> Split:
    if spec.mode == LOSO:
        return loso_split(dataset.transactions, dataset.labels, spec.held_out, spec.week_start,
                          spec.train_days, spec.test_days)
    return temporal_split(dataset.transactions, dataset.labels, spec)


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    week: str = ""
    method: str = ""
    params_hash: str = ""
    n_train_pos: int = 0
    n_train_neg: int = 0
    skipped: str = ""

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def n_test_pos(self) -> int:
        return self.tp + self.fn

    @property
    def n_test_neg(self) -> int:
        return self.tn + self.fp

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else math.nan

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def row(self) -> dict:
        if self.skipped:
            acc = prec = rec = f1 = math.nan
        else:
            acc, prec, rec, f1 = self.accuracy, self.precision, self.recall, self.f1
        return {"week": self.week, "method": self.method, "params_hash": self.params_hash,
                "acc": acc, "precision": prec, "recall": rec, "f1": f1,
                "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "n_train_pos": self.n_train_pos, "n_train_neg": self.n_train_neg,
                "skipped": self.skipped}

    def to_dict(self) -> dict:
        d = self.row()
        d["n_test_pos"], d["n_test_neg"] = self.n_test_pos, self.n_test_neg
        return d

    @classmethod
    def from_row(cls, row: Mapping[str, str]) -> "MetricsReport":
        return cls(int(row["tp"]), int(row["fp"]), int(row["tn"]), int(row["fn"]),
                   row["week"], row["method"], row["params_hash"],
                   int(row["n_train_pos"]), int(row["n_train_neg"]), row.get("skipped", ""))


def compute_metrics(pred: Prediction | Mapping[str, str], truth: Mapping[str, str | None],
                    **meta) -> MetricsReport:
    """Confusion counts with laundering as the positive class."""
    pred_map = pred.as_dict() if isinstance(pred, Prediction) else dict(pred)
    if set(pred_map) != set(truth):
        missing = len(set(truth) - set(pred_map))
        extra = len(set(pred_map) - set(truth))
        raise ValueError(f"prediction and truth id sets differ ({missing} missing, {extra} extra)")
    tp = fp = tn = fn = 0
    for k, t in truth.items():
        if t not in (LAUNDERING, REGULAR):
            raise ValueError(f"truth for {k!r} is not a class label: {t!r}")
        p = pred_map[k] == LAUNDERING
        if t == LAUNDERING:
            tp, fn = (tp + 1, fn) if p else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if p else (fp, tn + 1)
    return MetricsReport(tp, fp, tn, fn, **meta)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_reports(reports: Iterable[MetricsReport], path: str | Path, config_hash: str = "",
                  extra: Sequence[Mapping[str, object]] | None = None) -> None:
    """Versioned report CSV; ``extra`` adds per-row leading columns (sweep parameters)."""
    reports = list(reports)
    extra_cols = list(dict.fromkeys(k for e in extra or () for k in e))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema={METRICS_SCHEMA} config={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(extra_cols + list(REPORT_COLUMNS))
        for i, rep in enumerate(reports):
            row = rep.row()
            lead = [_fmt(extra[i][c]) if c in extra[i] else "" for c in extra_cols] if extra else []
            w.writerow(lead + [_fmt(row[c]) for c in REPORT_COLUMNS])


def read_reports(path: str | Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Header metadata (schema, config) and raw rows."""
    meta: dict[str, str] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            for part in line[1:].split():
                k, _, v = part.partition("=")
                meta[k] = v
        elif line:
            body.append(line)
    return meta, list(csv.DictReader(body))


def aggregate(reports: Iterable[MetricsReport]) -> dict[str, dict[str, float]]:
    """Per-method arithmetic mean of accuracy, precision, recall and F1 over non-skipped runs."""
    by_method: dict[str, list[MetricsReport]] = {}
    for r in reports:
        if not r.skipped:
            by_method.setdefault(r.method, []).append(r)
    out = {}
    for method, rs in sorted(by_method.items()):
        out[method] = {k: math.fsum(getattr(r, k) for r in rs) / len(rs)
                       for k in ("accuracy", "precision", "recall", "f1")}
        out[method]["n_runs"] = len(rs)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    walks: WalkConfig = WalkConfig()
    embed: SkipGramConfig = SkipGramConfig()
    max_depth: int = 5
    n_estimators: int = 40
    frac_labelled_test: float = 1.0
    frac_unlabelled_test: float = 1.0
    min_train_laundering: int = MIN_TRAIN_LAUNDERING
    alias_budget: int = DEFAULT_ALIAS_BUDGET
    threads: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        d = dict(d)
        walks = WalkConfig(**d.pop("walks", {}))
        embed = SkipGramConfig(**d.pop("embed", {}))
        return cls(walks=walks, embed=embed, **d)

    def fingerprint(self) -> str:
        return stable_hash(self.to_dict())

    def with_params(self, **params) -> "ExperimentConfig":
        """Apply flat sweep parameters (walk, embedding or classifier names)."""
        walk_keys = {f.name for f in fields(WalkConfig)}
        embed_keys = {f.name for f in fields(SkipGramConfig)}
        top_keys = {f.name for f in fields(ExperimentConfig)} - {"walks", "embed"}
        w, e, t = {}, {}, {}
        for k, v in params.items():
            if k in top_keys:
                t[k] = v
            elif k in walk_keys:
                w[k] = v
            elif k in embed_keys:
                e[k] = v
            else:
                raise KeyError(f"unknown parameter {k!r}")
        return replace(self, walks=replace(self.walks, **w), embed=replace(self.embed, **e), **t)


class _Membership:
    """Exposes only set membership of labelled ids, never label values."""

    def __init__(self, ids: Iterable[str]):
        self._ids = frozenset(ids)

    def __contains__(self, item) -> bool:
        return item in self._ids

    def __len__(self) -> int:
        return len(self._ids)


class Experiment:
    """One week of one dataset, with graph, features and embeddings cached across runs.

    Every method is evaluated on the labelled test transactions that lie on the
    giant component of the week graph, so all methods share one test population.
    """

    def __init__(self, dataset: Dataset, spec: SplitSpec, seed: int = 0):
        self.dataset = dataset
        self.seed = int(seed)
        self.split = make_split(dataset, spec)
        self.spec = self.split.spec
        start, _, end = self.spec.bounds()
        self.window = window_filter(dataset.transactions, start, end)
        self.graph = build_graph(self.window)
        self.giant = giant_component_subgraph(self.graph)
        on_giant = self.giant.index
        self.train_ids = [t for t in self.split.train_ids if t in on_giant]
        self.test_ids = [t for t in self.split.test_ids if t in on_giant]
        self.test_unlabelled_ids = [t for t in self.split.test_unlabelled_ids if t in on_giant]
        self.truth_train = {t: self.split.truth[t] for t in self.train_ids}
        self.truth_test = {t: self.split.truth[t] for t in self.test_ids}
        self._features: FeatureTable | None = None
        self._embeddings: dict[str, EmbeddingTable] = {}
        self._corpora: dict[str, WalkCorpus] = {}
        self._predictions: dict[str, Prediction] = {}

    @property
    def week(self) -> str:
        return week_label(self.spec.week_start)

    @property
    def train_counts(self) -> tuple[int, int]:
        pos = sum(1 for v in self.truth_train.values() if v == LAUNDERING)
        return pos, len(self.truth_train) - pos

    # curated features are computed on daily graphs
    def features(self) -> FeatureTable:
        if self._features is None:
            self._features = extract_daily_features(self.window, self.dataset.output_lookup())
        return self._features

    def walk_config(self, mode: str, config: ExperimentConfig) -> WalkConfig:
        wc = config.walks
        if mode == DEEPWALK:
            wc = replace(wc, mode=DEEPWALK, p=1.0, q=1.0)
        else:
            wc = replace(wc, mode=NODE2VEC)
        return replace(wc, rng_seed=sub_seed(self.seed, f"walks/{mode}"))

    def start_nodes(self, config: ExperimentConfig) -> np.ndarray:
        labelled = _Membership(list(self.truth_train) + list(self.truth_test))
        return select_start_nodes(self.giant, labelled, self.train_ids,
                                  self.test_ids + self.test_unlabelled_ids,
                                  config.frac_labelled_test, config.frac_unlabelled_test,
                                  seed=sub_seed(self.seed, "starts"))

    def _corpus_key(self, mode: str, config: ExperimentConfig) -> str:
        return stable_hash([self.walk_config(mode, config).fingerprint(),
                            config.frac_labelled_test, config.frac_unlabelled_test])

    def embed_config(self, mode: str, config: ExperimentConfig) -> SkipGramConfig:
        return replace(config.embed, rng_seed=sub_seed(self.seed, f"embed/{mode}"),
                       threads=config.threads, deterministic=config.threads == 1)

    def _embed_key(self, mode: str, config: ExperimentConfig) -> str:
        return stable_hash([self._corpus_key(mode, config), asdict(self.embed_config(mode, config))])

    def corpus(self, mode: str, config: ExperimentConfig) -> WalkCorpus:
        key = self._corpus_key(mode, config)
        if key not in self._corpora:
            wc = self.walk_config(mode, config)
            self._corpora[key] = generate_walks(self.giant.undirected(), wc, self.start_nodes(config),
                                                alias_budget=config.alias_budget,
                                                threads=config.threads)
        return self._corpora[key]

    def embeddings(self, mode: str, config: ExperimentConfig) -> EmbeddingTable:
        key = self._embed_key(mode, config)
        if key not in self._embeddings:
            corpus = self.corpus(mode, config)
            self._embeddings[key] = train_embeddings(corpus, self.embed_config(mode, config))
        return self._embeddings[key]

    def preload(self, mode: str, config: ExperimentConfig, *, corpus: WalkCorpus | None = None,
                embeddings: EmbeddingTable | None = None) -> None:
        """Seed the caches with stage artifacts produced earlier (e.g. read from disk)."""
        if corpus is not None:
            self._corpora[self._corpus_key(mode, config)] = corpus
        if embeddings is not None:
            self._embeddings[self._embed_key(mode, config)] = embeddings

    def preload_features(self, table: FeatureTable) -> None:
        self._features = table

    def design(self, method: str, config: ExperimentConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(X_train, y_train, X_test) for a feature-based method."""
        method = normalize_method(method)
        y = encode_labels(self.truth_train[t] for t in self.train_ids)
        if method == CURATED:
            f = self.features()
            return f.rows(self.train_ids), y, f.rows(self.test_ids)
        if method in (DEEPWALK, NODE2VEC):
            emb = self.embeddings(method, config)
            idx = self.giant.index
            return (emb.matrix([idx[t] for t in self.train_ids]), y,
                    emb.matrix([idx[t] for t in self.test_ids]))
        raise ValueError(f"method {method!r} has no feature matrix")

    def prediction(self, method: str, config: ExperimentConfig | None = None) -> Prediction:
        config = config or ExperimentConfig()
        method = normalize_method(method)
        key = stable_hash([method, self.params(method, config)])
        if key in self._predictions:
            return self._predictions[key]
        if method == NEIGHBOUR:
            g = self.giant
            train = {g.index[t]: lab for t, lab in self.truth_train.items()}
            p = neighbour_classifier(g.undirected(), train, [g.index[t] for t in self.test_ids])
            pred = Prediction(list(self.test_ids), p.laundering, p.margin)
        elif method in (CURATED, DEEPWALK, NODE2VEC):
            X_train, y, X_test = self.design(method, config)
            model = train_adaboost(X_train, y, n_estimators=config.n_estimators,
                                   max_depth=config.max_depth)
            pred = predict(model, X_test, self.test_ids)
        else:
            pred = ensemble(self.prediction(CURATED, config), self.prediction(NODE2VEC, config), method)
        self._predictions[key] = pred
        return pred

    def params(self, method: str, config: ExperimentConfig) -> dict:
        d = {"method": method, "seed": self.seed, "split": asdict(self.spec)}
        if method in (CURATED, DEEPWALK, NODE2VEC, OR, AND):
            d["classifier"] = [config.max_depth, config.n_estimators]
        if method in (DEEPWALK, NODE2VEC, OR, AND):
            d["walks"] = asdict(self.walk_config(NODE2VEC if method in (OR, AND) else method, config))
            d["embed"] = asdict(config.embed)
            d["starts"] = [config.frac_labelled_test, config.frac_unlabelled_test]
        return d

    def run(self, method: str, config: ExperimentConfig | None = None) -> MetricsReport:
        config = config or ExperimentConfig()
        method = normalize_method(method)
        pos, neg = self.train_counts
        meta = dict(week=self.week, method=method,
                    params_hash=stable_hash(self.params(method, config)),
                    n_train_pos=pos, n_train_neg=neg)
        if method != NEIGHBOUR and pos < config.min_train_laundering:
            return MetricsReport(0, 0, 0, 0, skipped=f"{pos} laundering training samples "
                                 f"< {config.min_train_laundering}", **meta)
        if not self.test_ids:
            return MetricsReport(0, 0, 0, 0, skipped="no labelled test nodes on the giant component",
                                 **meta)
        return compute_metrics(self.prediction(method, config), self.truth_test, **meta)


def run_experiment(dataset: Dataset, spec: SplitSpec, method: str,
                   config: ExperimentConfig | None = None, seed: int = 0) -> MetricsReport:
    return Experiment(dataset, spec, seed).run(method, config)


@dataclass
class SweepCell:
    params: dict
    report: MetricsReport | None = None
    error: str = ""


APPENDIX_A_GRID = (
    (50, 50, 1, 1), (50, 50, 2, 0.5), (50, 50, 4, 0.5), (50, 50, 0.5, 2), (50, 50, 0.5, 4),
    (100, 100, 1, 1), (100, 100, 2, 0.5), (100, 100, 4, 0.5),
)


def named_grid(name: str) -> tuple[list[dict], str]:
    """(grid cells, method) for the built-in grids."""
    if name == "appendix-a":
        return [dict(walks_per_node=w, walk_length=l, p=float(p), q=float(q))
                for w, l, p, q in APPENDIX_A_GRID], NODE2VEC
    if name == "walk-start":
        return [dict(frac_labelled_test=x / 100, frac_unlabelled_test=y / 100)
                for x in (100, 80) for y in (100, 80, 50, 20, 0)], NODE2VEC
    if name == "adaboost":
        return [dict(max_depth=d, n_estimators=n)
                for d in (5, 10, 20, 30, 40, 50) for n in (10, 20, 40, 60, 80)], CURATED
    raise ValueError(f"unknown grid {name!r}; expected appendix-a, walk-start or adaboost")


def sweep(experiment: Experiment, grid: Sequence[Mapping[str, object]], method: str = NODE2VEC,
          base: ExperimentConfig | None = None) -> list[SweepCell]:
    """One report per grid cell, in grid order. Cell failures are recorded, not raised."""
    if not grid:
        raise ValueError("empty grid")
    base = base or ExperimentConfig()
    cells = []
    for params in grid:
        cell = SweepCell(dict(params))
        try:
            cell.report = experiment.run(method, base.with_params(**params))
        except Exception as exc:  # recorded per cell
            cell.error = f"{type(exc).__name__}: {exc}"
        cells.append(cell)
    return cells


def write_sweep(cells: Sequence[SweepCell], path: str | Path, config_hash: str = "") -> None:
    reports, extra = [], []
    for c in cells:
        rep = c.report or MetricsReport(0, 0, 0, 0, skipped=f"error: {c.error}")
        reports.append(rep)
        extra.append(c.params)
    write_reports(reports, path, config_hash, extra)


def select_weeks(dataset: Dataset, period_days: int = 30, seed: int = 0,
                 week_days: int = 7) -> list[int]:
    """One seeded random week start per period, covering the dataset's time range."""
    if period_days < week_days:
        raise ValueError("period must be at least one week long")
    t0, t1 = dataset.time_range
    start, last = day_floor(t0), day_floor(t1)
    rng = np.random.default_rng(seed)
    weeks = []
    p = start
    while p + week_days * DAY <= last + DAY:
        room = min(period_days, (last + DAY - p) // DAY) - week_days
        weeks.append(p + int(rng.integers(0, room + 1)) * DAY)
        p += period_days * DAY
    return weeks
