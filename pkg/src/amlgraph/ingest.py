"""On-disk data model: transaction records, ground-truth labels, manifests.

Transaction file: one JSON object per line::

    {"txid": "...", "ts": <int>, "in": [["<src_txid>", <vout>], ...], "out": [<value>, ...]}

Label file: CSV with header ``txid,service,label`` (label is ``laundering`` or
``regular``). Transactions absent from the label file are unlabelled.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

LAUNDERING = "laundering"
REGULAR = "regular"
LABELS = (LAUNDERING, REGULAR)
UNITS = ("BTC", "sat")


class IngestError(ValueError):
    """Malformed or invalid input record."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class OutputRef(NamedTuple):
    source_txid: str
    output_index: int


@dataclass(frozen=True, slots=True)
class Transaction:
    txid: str
    timestamp: int
    inputs: tuple[OutputRef, ...]
    outputs: tuple[float, ...]

    @property
    def value(self) -> float:
        """Transaction value: the sum of all output values."""
        return math.fsum(self.outputs)


@dataclass
class DatasetManifest:
    unit: str = "BTC"
    count: int = 0
    dangling_inputs: int = 0
    label_conflicts: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "DatasetManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(data) - {"unit", "count", "dangling_inputs", "label_conflicts"}
        if unknown:
            raise IngestError(f"unknown manifest keys: {sorted(unknown)}")
        return cls(**data)


def _parse_record(obj: object, line: int) -> Transaction:
    if not isinstance(obj, dict):
        raise IngestError("record is not a JSON object", line)
    keys = set(obj)
    if keys != {"txid", "ts", "in", "out"}:
        raise IngestError(f"expected keys txid, ts, in, out; got {sorted(keys)}", line)
    txid = obj["txid"]
    if not isinstance(txid, str) or not txid:
        raise IngestError("txid must be a nonempty string", line)
    ts = obj["ts"]
    if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
        raise IngestError(f"ts must be a non-negative integer, got {ts!r}", line)

    raw_in = obj["in"]
    if not isinstance(raw_in, list):
        raise IngestError("'in' must be a list", line)
    inputs = []
    for ref in raw_in:
        if not (isinstance(ref, list) and len(ref) == 2):
            raise IngestError(f"input reference must be [txid, vout], got {ref!r}", line)
        src, vout = ref
        if not isinstance(src, str) or not src:
            raise IngestError("input source txid must be a nonempty string", line)
        if isinstance(vout, bool) or not isinstance(vout, int) or vout < 0:
            raise IngestError(f"input output index must be a non-negative integer, got {vout!r}", line)
        if src == txid:
            raise IngestError(f"transaction {txid!r} spends its own output", line)
        inputs.append(OutputRef(src, vout))

    raw_out = obj["out"]
    if not isinstance(raw_out, list) or not raw_out:
        raise IngestError("'out' must be a nonempty list", line)
    outputs = []
    for v in raw_out:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise IngestError(f"output value must be a number, got {v!r}", line)
        v = float(v)
        if not math.isfinite(v):
            raise IngestError(f"output value must be finite, got {v!r}", line)
        if v < 0:
            raise IngestError(f"negative output value {v!r}", line)
        outputs.append(v)
    return Transaction(txid, ts, tuple(inputs), tuple(outputs))


def parse_transactions(lines: Iterable[str], unit: str = "BTC") -> tuple[list[Transaction], DatasetManifest]:
    if unit not in UNITS:
        raise IngestError(f"unit must be one of {UNITS}, got {unit!r}")
    txs: list[Transaction] = []
    first_seen: dict[str, int] = {}
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise IngestError(f"malformed JSON ({exc.msg})", lineno) from None
        tx = _parse_record(obj, lineno)
        if tx.txid in first_seen:
            raise IngestError(
                f"duplicate txid {tx.txid!r} (lines {first_seen[tx.txid]} and {lineno})", lineno
            )
        first_seen[tx.txid] = lineno
        txs.append(tx)

    n_outputs = {tx.txid: len(tx.outputs) for tx in txs}
    dangling = 0
    for tx in txs:
        for ref in tx.inputs:
            n = n_outputs.get(ref.source_txid)
            if n is None:
                dangling += 1
            elif ref.output_index >= n:
                raise IngestError(
                    f"input {ref.source_txid}:{ref.output_index} out of range "
                    f"({ref.source_txid!r} has {n} outputs)",
                    first_seen[tx.txid],
                )
    return txs, DatasetManifest(unit=unit, count=len(txs), dangling_inputs=dangling)


def load_transactions(path: str | Path, unit: str = "BTC") -> tuple[list[Transaction], DatasetManifest]:
    """Load and validate a transaction file, returning records in file order."""
    with open(path, encoding="utf-8") as fh:
        return parse_transactions(fh, unit=unit)


def format_transaction(tx: Transaction) -> str:
    record = {
        "txid": tx.txid,
        "ts": tx.timestamp,
        "in": [[ref.source_txid, ref.output_index] for ref in tx.inputs],
        "out": list(tx.outputs),
    }
    return json.dumps(record, separators=(",", ":"))


def write_transactions(transactions: Iterable[Transaction], path: str | Path) -> None:
    """Canonical writer; write(load(write(x))) is byte-identical to write(x)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tx in transactions:
            fh.write(format_transaction(tx))
            fh.write("\n")


class LabelSet(Mapping):
    """Immutable map txid -> (service, label).

    Conflicting rows are dropped at construction; ``conflicts`` and ``unknown``
    count the txids removed for each reason.
    """

    def __init__(self, entries: Mapping[str, tuple[str, str]] | None = None,
                 conflicts: int = 0, unknown: int = 0):
        entries = dict(entries or {})
        service_label: dict[str, str] = {}
        for txid, (service, label) in entries.items():
            if label not in LABELS:
                raise IngestError(f"invalid label {label!r} for {txid!r}")
            prev = service_label.setdefault(service, label)
            if prev != label:
                raise IngestError(f"service {service!r} carries both {prev!r} and {label!r} labels")
        self._entries = MappingProxyType(entries)
        self._services = MappingProxyType(service_label)
        self.conflicts = conflicts
        self.unknown = unknown

    def __getitem__(self, txid: str) -> tuple[str, str]:
        return self._entries[txid]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def label(self, txid: str) -> str | None:
        entry = self._entries.get(txid)
        return entry[1] if entry else None

    def service(self, txid: str) -> str | None:
        entry = self._entries.get(txid)
        return entry[0] if entry else None

    @property
    def services(self) -> Mapping[str, str]:
        """service name -> label class."""
        return self._services

    def labels_only(self, txids: Iterable[str] | None = None) -> dict[str, str]:
        ids = self._entries if txids is None else txids
        return {t: self._entries[t][1] for t in ids if t in self._entries}

    def restrict(self, txids: Iterable[str]) -> "LabelSet":
        keep = {t: self._entries[t] for t in txids if t in self._entries}
        return LabelSet(keep)

    def __repr__(self) -> str:
        return f"LabelSet({len(self)} entries, {self.conflicts} conflicts)"


def parse_labels(rows: Iterable[Sequence[str]], known_txids: Iterable[str] | None) -> LabelSet:
    rows = iter(rows)
    header = next(rows, None)
    if header is None:
        return LabelSet()
    if [h.strip() for h in header] != ["txid", "service", "label"]:
        raise IngestError(f"label header must be txid,service,label; got {header!r}", 1)
    known = set(known_txids) if known_txids is not None else None

    seen: dict[str, tuple[str, str]] = {}
    conflicted: set[str] = set()
    unknown: set[str] = set()
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise IngestError(f"expected 3 columns, got {len(row)}", lineno)
        txid, service, label = (c.strip() for c in row)
        if not txid or not service:
            raise IngestError("empty txid or service", lineno)
        if label not in LABELS:
            raise IngestError(f"label must be laundering or regular, got {label!r}", lineno)
        if known is not None and txid not in known:
            unknown.add(txid)
            continue
        prev = seen.get(txid)
        if prev is None:
            seen[txid] = (service, label)
        elif prev != (service, label):
            conflicted.add(txid)
    for txid in conflicted:
        del seen[txid]
    return LabelSet(seen, conflicts=len(conflicted), unknown=len(unknown))


def load_labels(path: str | Path, transactions: Iterable[Transaction] | None = None) -> LabelSet:
    """Load a label CSV, dropping conflicting rows and rows for unknown txids."""
    known = [tx.txid for tx in transactions] if transactions is not None else None
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_labels(csv.reader(fh), known)


def write_labels(labels: LabelSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["txid", "service", "label"])
        for txid, (service, label) in labels.items():
            writer.writerow([txid, service, label])


def window_filter(transactions: Iterable[Transaction], start_ts: int, end_ts: int) -> list[Transaction]:
    """Transactions with ``start_ts <= timestamp < end_ts``, order preserved."""
    if start_ts > end_ts:
        raise ValueError(f"inverted window [{start_ts}, {end_ts})")
    return [tx for tx in transactions if start_ts <= tx.timestamp < end_ts]


@dataclass
class Dataset:
    """Transactions plus labels, with an output-value lookup for input resolution."""

    transactions: list[Transaction]
    labels: LabelSet = field(default_factory=LabelSet)
    manifest: DatasetManifest = field(default_factory=DatasetManifest)

    def __post_init__(self):
        self._by_id = {tx.txid: tx for tx in self.transactions}

    def __len__(self) -> int:
        return len(self.transactions)

    def get(self, txid: str) -> Transaction | None:
        return self._by_id.get(txid)

    def output_lookup(self) -> Mapping[str, tuple[float, ...]]:
        return {txid: tx.outputs for txid, tx in self._by_id.items()}

    @property
    def time_range(self) -> tuple[int, int]:
        ts = [tx.timestamp for tx in self.transactions]
        return (min(ts), max(ts)) if ts else (0, 0)

    @classmethod
    def load(cls, tx_path: str | Path, label_path: str | Path | None = None,
             unit: str = "BTC") -> "Dataset":
        txs, manifest = load_transactions(tx_path, unit=unit)
        labels = load_labels(label_path, txs) if label_path is not None else LabelSet()
        manifest.label_conflicts = labels.conflicts
        return cls(txs, labels, manifest)
