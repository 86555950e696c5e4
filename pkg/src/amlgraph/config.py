"""Run configuration: defaults, YAML/JSON loading, dotted overrides, validation."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import yaml

from ._rng import stable_hash
from .embed import SkipGramConfig
from .evaluate import ExperimentConfig, SplitSpec
from .walks import DEFAULT_ALIAS_BUDGET, WalkConfig

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "threads": 1,
    "unit": "BTC",
    "gen": {"preset": "balanced-demo", "scale": 1.0},
    "split": {"mode": "temporal", "week_start": None, "train_days": 5, "test_days": 2,
              "held_out": None},
    "walks": {"walks_per_node": 100, "walk_length": 100, "p": 2.0, "q": 0.5,
              "frac_labelled_test": 1.0, "frac_unlabelled_test": 1.0,
              "alias_budget": DEFAULT_ALIAS_BUDGET},
    "embed": {"dim": 25, "window": 10, "negatives": 5, "epochs": 5, "lr": 0.025,
              "min_lr": 1e-4, "subsample": 0.0},
    "classifier": {"max_depth": 5, "n_estimators": 40},
    "experiment": {"min_train_laundering": 150},
}


class ConfigError(ValueError):
    pass


def _check_keys(cfg: dict, ref: dict, prefix: str = "") -> None:
    for k, v in cfg.items():
        path = f"{prefix}{k}"
        if k not in ref:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(ref[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path!r} must be a mapping")
            _check_keys(v, ref[k], path + ".")


def _merge(base: dict, upd: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(item: str) -> dict:
    """``a.b=value`` -> {"a": {"b": value}}; the value is parsed as YAML."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key.path=value, got {item!r}")
    value = yaml.safe_load(raw) if raw.strip() else None
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


@dataclass(frozen=True)
class RunConfig:
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def threads(self) -> int:
        return int(self.data["threads"])

    def fingerprint(self) -> str:
        return stable_hash(self.data)

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2)

    def split_spec(self) -> SplitSpec:
        s = self.data["split"]
        return SplitSpec(s["mode"], s["week_start"], int(s["train_days"]), int(s["test_days"]),
                         s["held_out"])

    def experiment(self) -> ExperimentConfig:
        w, e = self.data["walks"], self.data["embed"]
        walks = WalkConfig(int(w["walks_per_node"]), int(w["walk_length"]), float(w["p"]),
                           float(w["q"]))
        embed = SkipGramConfig(dim=int(e["dim"]), window=int(e["window"]),
                               negatives=int(e["negatives"]), epochs=int(e["epochs"]),
                               lr=float(e["lr"]), min_lr=float(e["min_lr"]),
                               subsample=float(e["subsample"]))
        c = self.data["classifier"]
        return ExperimentConfig(walks=walks, embed=embed, max_depth=int(c["max_depth"]),
                                n_estimators=int(c["n_estimators"]),
                                frac_labelled_test=float(w["frac_labelled_test"]),
                                frac_unlabelled_test=float(w["frac_unlabelled_test"]),
                                min_train_laundering=int(self.data["experiment"]["min_train_laundering"]),
                                alias_budget=int(w["alias_budget"]), threads=self.threads)


def load_config(path: str | Path | None = None, overrides: Sequence[str] = (),
                **direct: Any) -> RunConfig:
    """Defaults <- config file <- ``--set`` overrides <- direct keyword values (None skipped).

    Unknown keys are rejected at every level; the resolved values are validated
    by building the stage configurations once.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(p)
        loaded = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        _check_keys(loaded, DEFAULTS)
        cfg = _merge(cfg, loaded)
    for item in overrides:
        upd = parse_override(item)
        _check_keys(upd, DEFAULTS)
        cfg = _merge(cfg, upd)
    for k, v in direct.items():
        if v is None:
            continue
        upd = parse_override(f"{k}=null")
        node = upd
        parts = k.split(".")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = v
        _check_keys(upd, DEFAULTS)
        cfg = _merge(cfg, upd)
    run = RunConfig(cfg)
    try:
        run.split_spec()
        run.experiment()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return run
