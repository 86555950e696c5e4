"""``amlgraph`` command line: pipeline stages as subcommands over a work directory.

Every stage reads its inputs from ``--workdir`` under fixed names and writes its
artifact plus ``<stage>.manifest.json``. Failures print one JSON object on
stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .classify import AdaBoostModel, Prediction, ensemble, predict, train_adaboost
from .config import ConfigError, RunConfig, load_config
from .embed import export_embeddings, import_embeddings, train_embeddings
from .evaluate import (AND, CURATED, LOSO, METHODS, METRICS_SCHEMA, NEIGHBOUR, OR, Experiment,
                       MetricsReport, SplitSpec, aggregate, named_grid, normalize_method,
                       read_reports, sweep, write_reports, write_sweep)
from .features import (FEATURE_NAMES, FeatureTable, feature_cdf_report, feature_importance,
                       write_cdf_report)
from .graphcore import (build_graph, evolution_series, giant_component_subgraph, graph_density,
                    weak_components)
from .ingest import Dataset, load_labels, load_transactions, write_labels, write_transactions
from .synthgen import generate, preset_scenarios, write_dataset
from .walks import DEEPWALK, NODE2VEC, WalkCorpus

PREDICTIONS_SCHEMA = "amlgraph.predictions/1"
FEATURES_SCHEMA = "amlgraph.features/1"
REPORT_SCHEMA = "amlgraph.report/1"
EMBED_METHODS = (DEEPWALK, NODE2VEC)

EXIT_RUNTIME, EXIT_CONFIG, EXIT_MISSING, EXIT_SCHEMA = 1, 2, 3, 4


class CLIError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_RUNTIME, **extra):
        super().__init__(message)
        self.kind, self.code, self.extra = kind, code, extra

    def payload(self) -> dict:
        return {"error": self.kind, "message": str(self), **self.extra}


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise CLIError("missing_input", f"expected {path} (run `amlgraph {produced_by}` first)",
                       EXIT_MISSING, path=str(path))
    return path


class Workdir:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def __truediv__(self, name: str) -> Path:
        return self.root / name

    def manifest(self, stage: str, cfg: RunConfig, outputs: list[Path], **extra) -> None:
        body = {"stage": stage, "version": __version__, "config_hash": cfg.fingerprint(),
                "config": cfg.data, "outputs": [p.name for p in outputs], **extra}
        (self.root / f"{stage}.manifest.json").write_text(
            json.dumps(body, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    def dataset(self, cfg: RunConfig) -> Dataset:
        txs = _require(self / "transactions.jsonl", "gen` or `amlgraph ingest")
        labels = _require(self / "labels.csv", "gen` or `amlgraph ingest")
        return Dataset.load(txs, labels, unit=cfg["unit"])


def _header(schema: str, cfg: RunConfig) -> str:
    return f"schema={schema} config={cfg.fingerprint()}"


def _experiment(wd: Workdir, cfg: RunConfig, spec: SplitSpec | None = None) -> Experiment:
    return Experiment(wd.dataset(cfg), spec or cfg.split_spec(), seed=cfg.seed)


def _load_features(wd: Workdir, ex: Experiment) -> None:
    path = wd / "features.csv"
    if path.exists():
        ex.preload_features(FeatureTable.read_csv(path))


def _load_embeddings(wd: Workdir, ex: Experiment, cfg: RunConfig, method: str) -> None:
    path = _require(wd / f"embeddings_{method}.txt", f"embed --method {method}")
    ex.preload(method, cfg.experiment(), embeddings=import_embeddings(path))


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# ---- stages ---------------------------------------------------------------

def cmd_gen(args, cfg: RunConfig, wd: Workdir) -> None:
    presets = preset_scenarios(scale=float(cfg["gen"]["scale"]), seed=cfg.seed)
    name = cfg["gen"]["preset"]
    if name not in presets:
        raise CLIError("invalid_config", f"unknown preset {name!r}; choose from {sorted(presets)}",
                       EXIT_CONFIG)
    txs, labels, report = generate(presets[name])
    paths = write_dataset(wd.root, txs, labels, report, unit=cfg["unit"])
    wd.manifest("gen", cfg, list(paths.values()))
    _emit(report.to_dict())


def cmd_ingest(args, cfg: RunConfig, wd: Workdir) -> None:
    txs, manifest = load_transactions(_require(Path(args.transactions), "ingest"), unit=cfg["unit"])
    labels = load_labels(_require(Path(args.labels), "ingest"), txs) if args.labels else None
    write_transactions(txs, wd / "transactions.jsonl")
    outputs = [wd / "transactions.jsonl", wd / "manifest.json"]
    if labels is not None:
        write_labels(labels, wd / "labels.csv")
        manifest.label_conflicts = labels.conflicts
        outputs.append(wd / "labels.csv")
    manifest.write(wd / "manifest.json")
    wd.manifest("ingest", cfg, outputs)
    _emit({**manifest.to_dict(), "labels": len(labels) if labels is not None else 0,
           "unknown_label_txids": labels.unknown if labels is not None else 0})


def cmd_graph_stats(args, cfg: RunConfig, wd: Workdir) -> None:
    txs, _ = load_transactions(_require(wd / "transactions.jsonl", "gen` or `amlgraph ingest"),
                               unit=cfg["unit"])
    g = build_graph(txs)
    comp = weak_components(g)
    giant = giant_component_subgraph(g) if g.n_nodes else None
    stats = {"nodes": g.n_nodes, "edges": g.n_edges,
             "density": graph_density(g) if g.n_nodes > 1 else 0.0,
             "components": len(comp), "giant_nodes": giant.n_nodes if giant else 0,
             "giant_edges": giant.n_edges if giant else 0}
    out = wd / "graph_stats.json"
    out.write_text(json.dumps({"config_hash": cfg.fingerprint(), **stats}, sort_keys=True,
                              indent=2) + "\n", encoding="utf-8")
    evo = wd / "evolution.csv"
    with open(evo, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {_header('amlgraph.evolution/1', cfg)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_start", "nodes", "edges", "density"])
        for rec in evolution_series(txs, args.window_seconds):
            w.writerow([rec.window_start, rec.n_nodes, rec.n_edges, repr(rec.density)])
    wd.manifest("graph-stats", cfg, [out, evo])
    _emit(stats)


def cmd_features(args, cfg: RunConfig, wd: Workdir) -> None:
    ex = _experiment(wd, cfg)
    table = ex.features()
    out = wd / "features.csv"
    table.write_csv(out, _header(FEATURES_SCHEMA, cfg))
    outputs = [out]
    if args.analysis:
        labelled = ex.dataset.labels.labels_only(table.txids)
        ranking = feature_importance(table, labelled)
        imp = wd / "importance.json"
        body = {"config_hash": cfg.fingerprint(), "order": ranking.order,
                "scores": ranking.as_dict()}
        imp.write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
        cdf = wd / "feature_cdf.csv"
        write_cdf_report(feature_cdf_report(table, labelled, ranking.top(5)), cdf,
                         _header("amlgraph.cdf/1", cfg))
        outputs += [imp, cdf]
    wd.manifest("features", cfg, outputs)
    _emit({"rows": len(table), "features": list(FEATURE_NAMES)})


def cmd_walk(args, cfg: RunConfig, wd: Workdir) -> None:
    ex = _experiment(wd, cfg)
    corpus = ex.corpus(args.method, cfg.experiment())
    out = wd / f"walks_{args.method}.txt"
    corpus.write(out, _header("amlgraph.walks/1", cfg))
    wd.manifest(f"walk-{args.method}", cfg, [out])
    _emit({"walks": len(corpus), "tokens": corpus.n_tokens})


def cmd_embed(args, cfg: RunConfig, wd: Workdir) -> None:
    ex = _experiment(wd, cfg)
    exp = cfg.experiment()
    corpus = WalkCorpus.read(_require(wd / f"walks_{args.method}.txt", f"walk --method {args.method}"))
    if corpus.config_hash != ex.walk_config(args.method, exp).fingerprint():
        raise CLIError("schema_mismatch", "walk corpus was produced under a different walk config",
                       EXIT_SCHEMA, path=str(wd / f"walks_{args.method}.txt"))
    table = train_embeddings(corpus, ex.embed_config(args.method, exp))
    out = wd / f"embeddings_{args.method}.txt"
    export_embeddings(table, out, _header("amlgraph.embeddings/1", cfg))
    wd.manifest(f"embed-{args.method}", cfg, [out])
    _emit({"nodes": len(table), "dim": table.dim, "epoch_loss": table.metadata["epoch_loss"]})


def _prepare(wd: Workdir, cfg: RunConfig, ex: Experiment, method: str) -> None:
    if method in EMBED_METHODS:
        _load_embeddings(wd, ex, cfg, method)
    elif method in (OR, AND):
        _load_embeddings(wd, ex, cfg, NODE2VEC)
    if method in (CURATED, OR, AND):
        _load_features(wd, ex)


def cmd_train(args, cfg: RunConfig, wd: Workdir) -> None:
    ex = _experiment(wd, cfg)
    _prepare(wd, cfg, ex, args.method)
    exp = cfg.experiment()
    X, y, _ = ex.design(args.method, exp)
    model = train_adaboost(X, y, n_estimators=exp.n_estimators, max_depth=exp.max_depth)
    out = wd / f"model_{args.method}.json"
    out.write_text(json.dumps({"config_hash": cfg.fingerprint(), "model": model.to_dict()}) + "\n",
                   encoding="utf-8")
    wd.manifest(f"train-{args.method}", cfg, [out])
    _emit({"stages": len(model.alphas), "train_rows": int(X.shape[0])})


def _predict(wd: Workdir, cfg: RunConfig, ex: Experiment, method: str) -> Prediction:
    if method == NEIGHBOUR:
        return ex.prediction(NEIGHBOUR)
    if method in (OR, AND):
        parts = [_predict(wd, cfg, ex, m) for m in (CURATED, NODE2VEC)]
        return ensemble(parts[0], parts[1], method)
    path = _require(wd / f"model_{method}.json", f"train --method {method}")
    model = AdaBoostModel.from_dict(json.loads(path.read_text(encoding="utf-8"))["model"])
    _prepare(wd, cfg, ex, method)
    _, _, X_test = ex.design(method, cfg.experiment())
    return predict(model, X_test, ex.test_ids)


def cmd_predict(args, cfg: RunConfig, wd: Workdir) -> None:
    ex = _experiment(wd, cfg)
    pred = _predict(wd, cfg, ex, args.method)
    out = wd / f"predictions_{args.method}.csv"
    pred.write_csv(out, _header(PREDICTIONS_SCHEMA, cfg))
    wd.manifest(f"predict-{args.method}", cfg, [out])
    _emit({"rows": len(pred), "laundering": int(pred.laundering.sum())})


def cmd_eval(args, cfg: RunConfig, wd: Workdir) -> None:
    ex = _experiment(wd, cfg)
    _prepare(wd, cfg, ex, args.method)
    report = ex.run(args.method, cfg.experiment())
    out = wd / f"metrics_{args.method}.csv"
    write_reports([report], out, cfg.fingerprint())
    wd.manifest(f"eval-{args.method}", cfg, [out])
    _emit(report.to_dict())


def cmd_loso(args, cfg: RunConfig, wd: Workdir) -> None:
    ds = wd.dataset(cfg)
    split = cfg["split"]
    spec = SplitSpec(LOSO, split["week_start"], int(split["train_days"]), int(split["test_days"]),
                     args.service)
    ex = Experiment(ds, spec, seed=cfg.seed)
    exp = cfg.experiment()
    methods = [normalize_method(m) for m in args.methods.split(",")]
    reports = [ex.run(m, exp) for m in methods]
    out = wd / f"metrics_loso_{args.service}.csv"
    pos, neg = ex.split.test_counts
    write_reports(reports, out, cfg.fingerprint(), [{"service": args.service}] * len(reports))
    wd.manifest(f"loso-{args.service}", cfg, [out], test_laundering=pos, test_regular=neg)
    _emit({"service": args.service, "test_laundering": pos, "test_regular": neg,
           "reports": [r.to_dict() for r in reports]})


def cmd_sweep(args, cfg: RunConfig, wd: Workdir) -> None:
    grid, method = named_grid(args.grid)
    if args.method:
        method = normalize_method(args.method)
    ex = _experiment(wd, cfg)
    cells = sweep(ex, grid, method, cfg.experiment())
    out = wd / f"sweep_{args.grid}.csv"
    write_sweep(cells, out, cfg.fingerprint())
    wd.manifest(f"sweep-{args.grid}", cfg, [out])
    _emit({"cells": len(cells), "errors": sum(1 for c in cells if c.error)})


def cmd_report(args, cfg: RunConfig, wd: Workdir) -> None:
    paths = [Path(p) for p in args.inputs] if args.inputs else \
        sorted(list(wd.root.glob("metrics_*.csv")) + list(wd.root.glob("sweep_*.csv")))
    if not paths:
        raise CLIError("missing_input", f"no report CSVs found in {wd.root}", EXIT_MISSING,
                       path=str(wd.root))
    rows: list[dict] = []
    for p in paths:
        meta, body = read_reports(_require(p, "eval"))
        if meta.get("schema") != METRICS_SCHEMA:
            raise CLIError("schema_mismatch", f"{p} has schema {meta.get('schema')!r}, "
                           f"expected {METRICS_SCHEMA!r}", EXIT_SCHEMA, path=str(p))
        rows.extend(body)
    reports = [MetricsReport.from_row(r) for r in rows]
    header = f"# {_header(REPORT_SCHEMA, cfg)}\n"

    summary = wd / "report_summary.csv"
    with open(summary, "w", encoding="utf-8", newline="") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "n_runs", "accuracy", "precision", "recall", "f1"])
        for method, agg in aggregate(reports).items():
            w.writerow([method, agg["n_runs"], *(repr(agg[k]) for k in
                                                  ("accuracy", "precision", "recall", "f1"))])
    weeks = wd / "report_weeks.csv"
    with open(weeks, "w", encoding="utf-8", newline="") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["week", "method", "acc", "f1", "skipped"])
        for r in sorted(reports, key=lambda r: (r.week, r.method)):
            row = r.row()
            w.writerow([r.week, r.method, repr(row["acc"]), repr(row["f1"]), r.skipped])
    services = wd / "report_services.csv"
    by_service: dict[str, list[MetricsReport]] = {}
    for raw, rep in zip(rows, reports):
        if raw.get("service"):
            by_service.setdefault(raw["service"], []).append(rep)
    with open(services, "w", encoding="utf-8", newline="") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["service", "method", "n_runs", "accuracy", "f1"])
        for service, reps in sorted(by_service.items()):
            for method, agg in aggregate(reps).items():
                w.writerow([service, method, agg["n_runs"], repr(agg["accuracy"]), repr(agg["f1"])])
    wd.manifest("report", cfg, [summary, weeks, services], inputs=[str(p) for p in paths])
    _emit({"inputs": len(paths), "rows": len(reports)})


# ---- argument parsing -----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", default=".", help="directory holding stage artifacts")
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. walks.p=1.0 (repeatable)")
    common.add_argument("--seed", type=int, help="run seed (overrides config)")
    common.add_argument("--threads", type=int,
                        help="worker threads; 1 is fully deterministic (overrides config)")

    parser = argparse.ArgumentParser(prog="amlgraph", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic labelled dataset")
    p.add_argument("--preset", help="balanced-demo, alphabay-like, helixmixer-like, bitmixer-like")
    p.add_argument("--scale", type=float, help="volume scale factor")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ingest", parents=[common], help="validate and import a dataset")
    p.add_argument("--transactions", required=True, help="JSON-lines transaction file")
    p.add_argument("--labels", help="label CSV with header txid,service,label")
    p.add_argument("--unit", choices=["BTC", "sat"], help="value unit of the transaction file")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("graph-stats", parents=[common], help="graph size, density and components")
    p.add_argument("--window-seconds", type=int, default=86_400,
                   help="window length for the evolution series (default one day)")
    p.set_defaults(func=cmd_graph_stats)

    p = sub.add_parser("features", parents=[common], help="14 curated features for the split week")
    p.add_argument("--analysis", action="store_true",
                   help="also write feature importance and class-wise CDFs")
    p.set_defaults(func=cmd_features)

    for name, func, choices, text in (
            ("walk", cmd_walk, EMBED_METHODS, "random-walk corpus on the giant component"),
            ("embed", cmd_embed, EMBED_METHODS, "skip-gram embeddings from a walk corpus"),
            ("train", cmd_train, (CURATED, *EMBED_METHODS), "fit AdaBoost on training nodes"),
            ("predict", cmd_predict, METHODS, "predict labels for test nodes"),
            ("eval", cmd_eval, METHODS, "train, predict and score one method")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--method", required=True, type=normalize_method, choices=choices)
        p.set_defaults(func=func)

    p = sub.add_parser("loso", parents=[common], help="leave one service out")
    p.add_argument("--service", required=True, help="laundering service to hold out")
    p.add_argument("--methods", default="neighbour,curated,node2vec,OR,AND",
                   help="comma-separated methods")
    p.set_defaults(func=cmd_loso)

    p = sub.add_parser("sweep", parents=[common], help="parameter grid over one split")
    p.add_argument("--grid", required=True, choices=["appendix-a", "walk-start", "adaboost"])
    p.add_argument("--method", help="override the grid's default method")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="aggregate metric CSVs")
    p.add_argument("inputs", nargs="*", help="report CSVs (default: all in the workdir)")
    p.set_defaults(func=cmd_report)
    return parser


def _resolve_config(args) -> RunConfig:
    direct = {"seed": args.seed, "threads": args.threads}
    if args.command == "gen":
        direct.update({"gen.preset": args.preset, "gen.scale": args.scale})
    if args.command == "ingest":
        direct["unit"] = args.unit
    return load_config(args.config, args.set, **direct)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        args.func(args, cfg, Workdir(args.workdir))
    except CLIError as exc:
        print(json.dumps(exc.payload(), sort_keys=True), file=sys.stderr)
        return exc.code
    except (ConfigError, FileNotFoundError) as exc:
        kind = "missing_input" if isinstance(exc, FileNotFoundError) else "invalid_config"
        code = EXIT_MISSING if isinstance(exc, FileNotFoundError) else EXIT_CONFIG
        extra = {"path": str(exc.filename or exc.args[0])} if isinstance(exc, FileNotFoundError) else {}
        print(json.dumps({"error": kind, "message": str(exc), **extra}, sort_keys=True),
              file=sys.stderr)
        return code
    except (ValueError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}, sort_keys=True),
              file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
