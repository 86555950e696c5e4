"""Synthetic labelled UTXO transaction streams.

Each service keeps a private UTXO pool (its own change / deposit addresses).
Inputs come from that pool with probability ``linkage`` and otherwise from the
shared public pool; outputs land in the private pool with the same
probability. This reuse is what links same-service transactions in the graph.
Unlabelled background traffic and coinbase payouts circulate through the
public pool only.

Mixers draw many inputs and emit a few near-equal outputs; regular services
draw and emit with higher variance.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .ingest import (LAUNDERING, REGULAR, DatasetManifest, LabelSet, OutputRef, Transaction,
                     write_labels, write_transactions)

DAY = 86_400
# Monday 2014-11-03 00:00 UTC
DEFAULT_START = 1_414_972_800


class InfeasibleScenario(ValueError):
    pass


@dataclass(frozen=True)
class ServiceProfile:
    name: str
    label: str | None                   # laundering / regular; None for background traffic
    tx_per_day: float
    inputs_mean: float = 2.0            # input count ~ 1 + Poisson(mean - 1)
    outputs_mean: float = 2.0
    fixed_outputs: bool = False         # exactly round(outputs_mean) outputs
    value_mean: float = 10.0            # per-output value, log-normal
    value_cv: float = 1.0               # spread of outputs within one transaction
    tx_value_cv: float = 0.5            # spread of the per-transaction value scale
    linkage: float = 0.6
    pool_size: int = 200                # private pool capacity; overflow is released
    active_days: tuple[int, int] | None = None
    arrivals: str = "poisson"           # or "fixed": deterministic daily counts
    upstream: tuple[str, ...] = ()      # services whose private outputs this one may spend
    upstream_rate: float = 0.0          # per-input probability of spending an upstream output

    def __post_init__(self):
        if self.label not in (LAUNDERING, REGULAR, None):
            raise ValueError(f"invalid label {self.label!r}")
        if self.tx_per_day < 0 or self.inputs_mean < 1 or self.outputs_mean < 1:
            raise ValueError(f"{self.name}: rates must be >= 0 and count means >= 1")
        if self.value_mean <= 0 or self.value_cv < 0 or self.tx_value_cv < 0:
            raise ValueError(f"{self.name}: value parameters must be positive")
        if not 0.0 <= self.linkage <= 1.0 or self.pool_size < 1:
            raise ValueError(f"{self.name}: linkage in [0, 1] and pool_size >= 1 required")
        if self.active_days is not None and self.active_days[0] >= self.active_days[1]:
            raise ValueError(f"{self.name}: empty active period")
        if self.arrivals not in ("poisson", "fixed"):
            raise ValueError(f"{self.name}: arrivals must be 'poisson' or 'fixed'")
        if not 0.0 <= self.upstream_rate <= 1.0 or (self.upstream_rate > 0 and not self.upstream):
            raise ValueError(f"{self.name}: upstream_rate in [0, 1] needs upstream services")

    def active(self, day: int) -> bool:
        return self.active_days is None or self.active_days[0] <= day < self.active_days[1]

    @property
    def expected_value(self) -> float:
        return self.value_mean * (round(self.outputs_mean) if self.fixed_outputs else self.outputs_mean)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    services: tuple[ServiceProfile, ...]
    background: ServiceProfile
    days: int = 7
    rng_seed: int = 0
    start_ts: int = DEFAULT_START
    coinbase_per_day: float = 50.0
    coinbase_outputs: int = 10
    initial_utxos: int = 2000
    target_service: str | None = None     # service whose ratio to regular traffic is tracked
    target_ratio: float | None = None     # expected target : regular transaction ratio
    description: str = ""

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("days must be >= 1")
        labels = {s.label for s in self.services}
        if not {LAUNDERING, REGULAR} <= labels:
            raise ValueError("scenario needs at least one laundering and one regular service")
        names = [s.name for s in self.services]
        if len(set(names)) != len(names):
            raise ValueError("service names must be unique")
        for s in self.services:
            bad = [u for u in s.upstream if u not in names or u == s.name]
            if bad:
                raise ValueError(f"{s.name}: invalid upstream service(s) {bad}")
        if self.target_service is not None and self.target_service not in names:
            raise ValueError(f"unknown target service {self.target_service!r}")

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, rng_seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)


class _Pool:
    """Unordered UTXO bag with O(1) uniform removal."""

    def __init__(self):
        self.items: list[tuple[str, int, float]] = []

    def __len__(self):
        return len(self.items)

    def add(self, item):
        self.items.append(item)

    def pop_random(self, rng):
        i = int(rng.integers(len(self.items)))
        items = self.items
        items[i], items[-1] = items[-1], items[i]
        return items.pop()


def _lognormal(rng, mean, cv, size=None):
    if cv == 0:
        return np.full(size, mean) if size is not None else mean
    s2 = math.log1p(cv * cv)
    return rng.lognormal(math.log(mean) - s2 / 2, math.sqrt(s2), size)


def _daily_counts(profile: ServiceProfile, days: int, rng) -> list[int]:
    out = []
    for d in range(days):
        if not profile.active(d):
            out.append(0)
        elif profile.arrivals == "fixed":
            out.append(math.floor(profile.tx_per_day * (d + 1) + 0.5)
                       - math.floor(profile.tx_per_day * d + 0.5))
        else:
            out.append(int(rng.poisson(profile.tx_per_day)))
    return out


@dataclass
class GenerationReport:
    scenario: str
    seed: int
    n_transactions: int
    class_counts: dict[str, int]
    service_counts: dict[str, int]
    mean_daily_value: dict[str, float]
    value_ratio: float
    target_service: str | None = None
    target_ratio: float | None = None
    realized_target_ratio: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def generate(config: ScenarioConfig) -> tuple[list[Transaction], LabelSet, GenerationReport]:
    """Generate a chronologically ordered, causally valid labelled dataset."""
    rng = np.random.default_rng(config.rng_seed)
    salt = f"{config.name}:{config.rng_seed}"
    counter = 0

    def new_txid():
        nonlocal counter
        counter += 1
        return hashlib.sha256(f"{salt}:{counter}".encode()).hexdigest()[:24]

    public = _Pool()
    private = {s.name: _Pool() for s in config.services}
    txs: list[Transaction] = []
    entries: dict[str, tuple[str, str]] = {}

    def emit(txid, ts, inputs, values, profile):
        txs.append(Transaction(txid, ts, tuple(inputs), tuple(float(v) for v in values)))
        own = private.get(profile.name) if profile is not None else None
        for k, v in enumerate(values):
            item = (txid, k, float(v))
            if own is not None and rng.random() < profile.linkage:
                own.add(item)
                if len(own) > profile.pool_size:
                    public.add(own.pop_random(rng))
            else:
                public.add(item)

    # genesis payouts seed the public pool
    per_genesis = 20
    for i in range(math.ceil(config.initial_utxos / per_genesis)):
        values = _lognormal(rng, 5.0, 1.0, per_genesis)
        emit(new_txid(), config.start_ts, [], values, None)

    profiles = [*config.services, config.background]
    counts = [_daily_counts(prof, config.days, rng) for prof in profiles]
    for day in range(config.days):
        day_start = config.start_ts + day * DAY
        events = []
        for p_idx in range(len(profiles)):
            n = counts[p_idx][day]
            events.extend((int(t), p_idx) for t in rng.integers(0, DAY, size=n))
        n_cb = int(rng.poisson(config.coinbase_per_day))
        events.extend((int(t), -1) for t in rng.integers(0, DAY, size=n_cb))
        events.sort()
        for offset, p_idx in events:
            ts = day_start + offset
            if p_idx < 0:
                emit(new_txid(), ts, [], _lognormal(rng, 2.5, 0.3, config.coinbase_outputs), None)
                continue
            prof = profiles[p_idx]
            own = private.get(prof.name)
            n_in = 1 + int(rng.poisson(prof.inputs_mean - 1))
            n_out = round(prof.outputs_mean) if prof.fixed_outputs else \
                1 + int(rng.poisson(prof.outputs_mean - 1))
            inputs = []
            for _ in range(n_in):
                if prof.upstream_rate > 0 and rng.random() < prof.upstream_rate:
                    up = private[prof.upstream[int(rng.integers(len(prof.upstream)))]]
                    if len(up):
                        src = up.pop_random(rng)
                        inputs.append(OutputRef(src[0], src[1]))
                        continue
                use_own = own is not None and len(own) > 0 and rng.random() < prof.linkage
                if use_own:
                    src = own.pop_random(rng)
                elif len(public):
                    src = public.pop_random(rng)
                elif own is not None and len(own):
                    src = own.pop_random(rng)
                else:
                    raise InfeasibleScenario(
                        f"UTXO pool exhausted on day {day} while generating {prof.name!r}")
                inputs.append(OutputRef(src[0], src[1]))
            scale = _lognormal(rng, 1.0, prof.tx_value_cv)
            values = scale * _lognormal(rng, prof.value_mean, prof.value_cv, n_out)
            txid = new_txid()
            emit(txid, ts, inputs, values, prof if own is not None else None)
            if prof.label is not None and own is not None:
                entries[txid] = (prof.name, prof.label)

    labels = LabelSet(entries)
    return txs, labels, _report(config, txs, labels)


def _report(config: ScenarioConfig, txs, labels: LabelSet) -> GenerationReport:
    class_counts = {LAUNDERING: 0, REGULAR: 0, "unlabelled": 0}
    service_counts = {s.name: 0 for s in config.services}
    daily: dict[str, dict[int, list[float]]] = {LAUNDERING: {}, REGULAR: {}}
    for tx in txs:
        entry = labels.get(tx.txid)
        if entry is None:
            class_counts["unlabelled"] += 1
            continue
        service, label = entry
        class_counts[label] += 1
        service_counts[service] += 1
        day = (tx.timestamp - config.start_ts) // DAY
        daily[label].setdefault(day, []).append(tx.value)
    mean_daily = {}
    for label, by_day in daily.items():
        means = [math.fsum(v) / len(v) for v in by_day.values() if v]
        mean_daily[label] = math.fsum(means) / len(means) if means else 0.0
    ratio = mean_daily[LAUNDERING] / mean_daily[REGULAR] if mean_daily[REGULAR] else float("nan")
    realized = None
    if config.target_service is not None and class_counts[REGULAR]:
        realized = service_counts[config.target_service] / class_counts[REGULAR]
    return GenerationReport(config.name, config.rng_seed, len(txs), class_counts, service_counts,
                            mean_daily, ratio, config.target_service, config.target_ratio, realized)


def write_dataset(directory: str | Path, txs, labels: LabelSet, report: GenerationReport,
                  unit: str = "BTC") -> dict[str, Path]:
    """Write transactions, labels, manifest and generation report in ingest formats."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "transactions": d / "transactions.jsonl",
        "labels": d / "labels.csv",
        "manifest": d / "manifest.json",
        "report": d / "gen_report.json",
    }
    write_transactions(txs, paths["transactions"])
    write_labels(labels, paths["labels"])
    known = {tx.txid for tx in txs}
    dangling = sum(1 for tx in txs for r in tx.inputs if r.source_txid not in known)
    DatasetManifest(unit=unit, count=len(txs), dangling_inputs=dangling,
                    label_conflicts=labels.conflicts).write(paths["manifest"])
    paths["report"].write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n",
                               encoding="utf-8")
    return paths


# share of exchange inputs that are deposits of laundering-service outputs
EXCHANGE_DEPOSIT_RATE = 0.15

# Per-output value means are chosen so that laundering transactions average
# about 38.8 BTC and regular ones about 29.1 BTC.


def _mixer(name, rate, **kw):
    base = dict(label=LAUNDERING, inputs_mean=3.0, outputs_mean=2, fixed_outputs=True,
                value_mean=19.4, value_cv=0.15, tx_value_cv=0.6, linkage=0.97, pool_size=10000)
    base.update(kw)
    return ServiceProfile(name, tx_per_day=rate, **base)


def _shadow(name, rate, **kw):
    # laundering service whose transactions look like regular exchange traffic
    base = dict(label=LAUNDERING, inputs_mean=1.8, outputs_mean=2.2, value_mean=17.6,
                value_cv=1.2, tx_value_cv=0.8, linkage=0.97, pool_size=10000)
    base.update(kw)
    return ServiceProfile(name, tx_per_day=rate, **base)


def _regular(name, rate, **kw):
    base = dict(label=REGULAR, inputs_mean=1.8, outputs_mean=2.4, value_mean=12.1,
                value_cv=1.2, tx_value_cv=0.8, linkage=0.97, pool_size=10000)
    base.update(kw)
    return ServiceProfile(name, tx_per_day=rate, **base)


def _background(rate):
    return ServiceProfile("background", None, rate, inputs_mean=1.5, outputs_mean=3.0,
                          value_mean=4.0, value_cv=1.5, tx_value_cv=1.0, linkage=0.0)


def preset_scenarios(scale: float = 1.0, seed: int = 0) -> dict[str, ScenarioConfig]:
    """Named scenarios.

    balanced-demo    ~7,000 tx/day, laundering and regular labelled volumes equal.
    alphabay-like    target:regular = 10,485 : 18,727 (laundering share 0.359).
    helixmixer-like  target:regular = 2,287 : 24,842.
    bitmixer-like    target:regular = 66 : 24,428 (extreme imbalance).

    The last three use per-day volumes equal to half the reference two-day
    counts, times ``0.1 * scale``.
    """
    s = scale
    presets = {}
    presets["balanced-demo"] = ScenarioConfig(
        name="balanced-demo",
        services=(
            _mixer("MixerA", 1500 * s),
            _shadow("ShadowX", 1500 * s),
            _regular("ExchangeA", 1200 * s, upstream=("MixerA", "ShadowX"),
                     upstream_rate=EXCHANGE_DEPOSIT_RATE),
            _regular("WalletB", 900 * s, inputs_mean=1.7, outputs_mean=2.2, value_mean=13.2),
            _regular("PaymentC", 900 * s, inputs_mean=1.6, outputs_mean=2.8, value_mean=10.4),
        ),
        background=_background(1000 * s),
        rng_seed=seed,
        coinbase_per_day=100 * s,
        initial_utxos=int(3000 * s) + 200,
        description="balanced laundering/regular volumes",
    )

    def imbalanced(name, target, target_rate, regular_rate, ratio, extra_laundering):
        fs = 0.1 * scale
        reg = regular_rate * fs
        laundering = (target(1).name, *(n for n, _, _ in extra_laundering))
        regs = (
            _regular("ExchangeA", reg * 0.45, arrivals="fixed", upstream=laundering,
                     upstream_rate=EXCHANGE_DEPOSIT_RATE),
            _regular("WalletB", reg * 0.30, inputs_mean=1.7, outputs_mean=2.2, value_mean=13.2,
                     arrivals="fixed"),
            _regular("PaymentC", reg * 0.25, inputs_mean=1.6, outputs_mean=2.8, value_mean=10.4,
                     arrivals="fixed"),
        )
        others = tuple(p(n, r * fs) for n, r, p in extra_laundering)
        return ScenarioConfig(
            name=name,
            services=(replace(target(target_rate * fs), arrivals="fixed"), *others, *regs),
            background=_background(0.1 * (reg + target_rate * fs)),
            rng_seed=seed,
            coinbase_per_day=0.04 * (reg + target_rate * fs),
            initial_utxos=int(0.5 * (reg + target_rate * fs)) + 200,
            target_service=target(1).name,
            target_ratio=ratio,
            description=f"target:regular ratio {ratio:.5f}",
        )

    others = (("MarketB", 2500, _mixer), ("ShadowX", 2500, _shadow))
    presets["alphabay-like"] = imbalanced(
        "alphabay-like", lambda r: _mixer("AlphaBay", r, inputs_mean=2.0),
        10485 / 2, 18727 / 2, 10485 / 18727, others)
    presets["helixmixer-like"] = imbalanced(
        "helixmixer-like", lambda r: _mixer("HelixMixer", r), 2287 / 2, 24842 / 2,
        2287 / 24842, others)
    presets["bitmixer-like"] = imbalanced(
        "bitmixer-like", lambda r: _mixer("Bitmixer", r), 66 / 2, 24428 / 2,
        66 / 24428, others)
    return presets
