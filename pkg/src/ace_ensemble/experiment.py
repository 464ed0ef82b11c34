"""Config-driven sweeps over the diversity strength, with CSV/JSON reports.

A config is a flat ``key = value`` text file (``#`` starts a comment).
Lists are comma-separated.  Every key has a default; the resolved values
are embedded in JSON reports and written next to CSV reports, so a run can
be repeated from its output alone.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .data import Dataset, load_mnist_dir, synth_blobs, synth_regression
from .ensemble import (make_ensemble, make_regressor_ensemble, member_outputs,
                       member_probs, train_ensemble, train_regressors)
from .errors import ConfigError, NumericError
from .losses import AceCoefficients, NclCoefficients
from .metrics import bias_var_cov, evaluate_members, mse
from .models import MlpSpec, Optimizer
from .numerics import SeededRng
from .smoc import added_param_count, make_smoc, smoc_member_probs, train_smoc

MODES = ("ace-ensemble", "smoc", "ncl")
DATASETS = ("mnist", "blobs", "regression")
CLASSIFICATION_COLUMNS = ("lambda", "ens_acc", "ens_ce", "single_acc", "single_ce", "seeds", "wall_s")
REGRESSION_COLUMNS = ("gamma_ncl", "ens_mse", "single_mse", "bias2", "variance",
                      "covariance", "seeds", "wall_s")
VALIDATION_ROWS = 5000


def _floats(text) -> Tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _ints(text) -> Tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    mode: str = "ace-ensemble"
    dataset: str = "mnist"
    mnist_dir: str = "data/mnist"
    eval_split: str = "test"            # "test" or "validation" (last 5000 train rows)
    n_train: int = 2000                 # synthetic datasets only
    n_test: int = 1000
    n_features: int = 20
    n_classes: int = 5
    spread: float = 2.0
    noise_sd: float = 0.1
    hidden: Tuple[int, ...] = (128,)    # member hidden widths (ace-ensemble, ncl)
    trunk: Tuple[int, ...] = (64,)      # trunk widths (smoc)
    K: int = 5
    lambdas: Tuple[float, ...] = (0.0,)
    gammas: Tuple[float, ...] = (0.0,)  # ncl penalty strengths
    alpha: Tuple[float, ...] = ()
    independent_baseline: bool = False  # lambda = 0 members draw separate shuffles
    optimizer: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 64
    seeds: Tuple[int, ...] = (0,)
    report: str = ""
    format: str = "csv"
    workers: int = 1
    deterministic: bool = True

    _parsers = {
        "hidden": _ints, "trunk": _ints, "seeds": _ints,
        "lambdas": _floats, "gammas": _floats, "alpha": _floats,
        "independent_baseline": _bool, "deterministic": _bool,
    }

    @classmethod
    def from_mapping(cls, values: Dict[str, object]) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls) if not f.name.startswith("_")}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            parse = cls._parsers.get(key) or type(known[key].default)
            try:
                kwargs[key] = parse(raw.strip() if isinstance(raw, str) else raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_mapping(self) -> Dict[str, object]:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_mapping().items():
            if isinstance(v, list):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode: expected one of {MODES}, got {self.mode!r}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset: expected one of {DATASETS}, got {self.dataset!r}")
        if (self.mode == "ncl") != (self.dataset == "regression"):
            raise ConfigError("dataset: ncl mode needs dataset=regression and vice versa")
        if self.eval_split not in ("test", "validation"):
            raise ConfigError("eval_split: expected 'test' or 'validation'")
        if not self.seeds:
            raise ConfigError("seeds: at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds: values must be distinct")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds: must be non-negative")
        for name in ("epochs", "batch_size", "workers", "n_train", "n_test", "n_features"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("n_classes: must be >= 2")
        if self.format not in ("csv", "json"):
            raise ConfigError("format: expected 'csv' or 'json'")
        if any(h < 1 for h in self.hidden + self.trunk) or not self.trunk:
            raise ConfigError("hidden/trunk: widths must be >= 1 and trunk non-empty")
        try:
            self.optimizer_factory()()
        except ConfigError as exc:
            raise ConfigError(f"optimizer: {exc}") from exc
        if self.mode == "ncl":
            if not self.gammas:
                raise ConfigError("gammas: at least one value is required")
            for g in self.gammas:
                try:
                    NclCoefficients(self.K, g)
                except ConfigError as exc:
                    raise ConfigError(f"gammas: {exc}") from exc
        else:
            if not self.lambdas:
                raise ConfigError("lambdas: at least one value is required")
            for lam in self.lambdas:
                try:
                    AceCoefficients(self.K, lam, self.alpha or None)
                except ConfigError as exc:
                    field_name = "alpha" if "alpha" in str(exc) else ("K" if "K" in str(exc) else "lambdas")
                    raise ConfigError(f"{field_name}: {exc}") from exc

    def optimizer_factory(self):
        kw = dict(mode=self.optimizer, lr=self.lr, momentum=self.momentum,
                  beta1=self.beta1, beta2=self.beta2, eps=self.adam_eps)
        return lambda: Optimizer(**kw)


def parse_config_text(text: str) -> Dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path=None, overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    values.update(overrides or {})
    return ExperimentConfig.from_mapping(values)


def load_datasets(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    """(train, eval) according to the dataset and eval_split settings."""
    if cfg.dataset == "mnist":
        train = load_mnist_dir(cfg.mnist_dir, "train")
        test = None if cfg.eval_split == "validation" else load_mnist_dir(cfg.mnist_dir, "test")
    else:
        rng = SeededRng(0).child(f"dataset:{cfg.dataset}")
        if cfg.dataset == "blobs":
            full = synth_blobs(cfg.n_train + cfg.n_test, cfg.n_classes, cfg.n_features,
                               cfg.spread, rng)
        else:
            full = synth_regression(cfg.n_train + cfg.n_test, cfg.noise_sd, rng)
        train, test = full.split_tail(cfg.n_test)
        if cfg.eval_split == "validation":
            test = None
    if test is None:
        n_val = VALIDATION_ROWS if cfg.dataset == "mnist" else max(1, train.n // 5)
        train, test = train.split_tail(n_val)
    return train, test


@dataclass
class SweepRow:
    key: float
    metrics: Dict[str, float]
    per_seed: Dict[str, List[float]]
    seeds: Tuple[int, ...]
    wall_s: float
    extra: Dict[str, object] = field(default_factory=dict)


@dataclass
class SweepReport:
    mode: str
    config: Dict[str, object]
    rows: List[SweepRow]

    @property
    def key_name(self) -> str:
        return "gamma_ncl" if self.mode == "ncl" else "lambda"

    @property
    def columns(self) -> Tuple[str, ...]:
        return REGRESSION_COLUMNS if self.mode == "ncl" else CLASSIFICATION_COLUMNS

    def row(self, key: float) -> SweepRow:
        for r in self.rows:
            if r.key == key:
                return r
        raise KeyError(key)


_DATA: Dict[str, Dataset] = {}


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite {what}")


def run_cell(cfg: ExperimentConfig, key: float, seed: int, train: Dataset, test: Dataset) -> Dict[str, object]:
    """Train and evaluate one (lambda or gamma, seed) combination."""
    rng = SeededRng(seed)
    opt = cfg.optimizer_factory()
    if cfg.mode == "ncl":
        coeff = NclCoefficients(cfg.K, key)
        spec = MlpSpec((train.d,) + cfg.hidden + (1,))
        state = make_regressor_ensemble(spec, coeff, rng, opt)
        train_regressors(state, train, cfg.epochs, cfg.batch_size, seed)
        _check_finite(state.last_losses, "training loss")
        F = member_outputs(state.models, test.features)
        return {"member_outputs": F, "ens_mse": mse(F.mean(axis=0), test.y),
                "single_mse": float(np.mean([mse(f, test.y) for f in F])), "steps": state.step}

    coeff = AceCoefficients(cfg.K, key, cfg.alpha or None)
    L = train.n_classes
    if cfg.mode == "ace-ensemble":
        spec = MlpSpec((train.d,) + cfg.hidden + (L,))
        state = make_ensemble(spec, coeff, rng, opt)
        independent = cfg.independent_baseline and key == 0
        train_ensemble(state, train, cfg.epochs, cfg.batch_size, seed, independent_batches=independent)
        q_all = member_probs(state.models, test.features)
        extra = {"steps": state.step}
    else:
        state = make_smoc((train.d,) + cfg.trunk, L, coeff, rng, opt)
        train_smoc(state, train, cfg.epochs, cfg.batch_size, seed)
        extra = {"steps": state.step, "trunk_forward_calls": state.trunk_forward_calls,
                 "trunk_backward_calls": state.trunk_backward_calls,
                 "added_params": added_param_count(state)}
        q_all = smoc_member_probs(state, test.features)
    _check_finite(state.last_losses, "training loss")
    rep = evaluate_members(q_all, test.y, coeff.weights())
    return {"ens_acc": rep.ensemble_accuracy, "ens_ce": rep.ensemble_ce,
            "single_acc": rep.single_accuracy, "single_ce": rep.single_ce, **extra}


def _cell_worker(args):
    cfg, key, seed = args
    t0 = time.perf_counter()
    out = run_cell(cfg, key, seed, _DATA["train"], _DATA["test"])
    out["wall_s"] = time.perf_counter() - t0
    return out


def run_experiment(cfg: ExperimentConfig, log=None) -> SweepReport:
    cfg.validate()
    train, test = load_datasets(cfg)
    keys = cfg.gammas if cfg.mode == "ncl" else cfg.lambdas
    cells = [(cfg, key, seed) for key in keys for seed in cfg.seeds]
    _DATA["train"], _DATA["test"] = train, test
    workers = 1 if cfg.deterministic else min(cfg.workers, len(cells))
    if workers > 1:
        import multiprocessing
        with ProcessPoolExecutor(workers, mp_context=multiprocessing.get_context("fork")) as pool:
            results = list(pool.map(_cell_worker, cells))
    else:
        results = []
        for cell in cells:
            results.append(_cell_worker(cell))
            if log:
                log(f"{'gamma_ncl' if cfg.mode == 'ncl' else 'lambda'}={cell[1]} seed={cell[2]} "
                    + " ".join(f"{k}={v:.6g}" for k, v in results[-1].items()
                               if isinstance(v, float)))

    rows = []
    n_seeds = len(cfg.seeds)
    for i, key in enumerate(keys):
        chunk = results[i * n_seeds:(i + 1) * n_seeds]
        names = ("ens_mse", "single_mse") if cfg.mode == "ncl" else ("ens_acc", "ens_ce", "single_acc", "single_ce")
        per_seed = {name: [c[name] for c in chunk] for name in names}
        metrics = {name: float(np.mean(vals)) for name, vals in per_seed.items()}
        extra = {k: [c[k] for c in chunk] for k in chunk[0]
                 if k not in names and k not in ("wall_s", "member_outputs")}
        if cfg.mode == "ncl":
            if n_seeds >= 2:
                bvc = bias_var_cov(np.stack([c["member_outputs"] for c in chunk]), test.y)
                metrics.update(bias2=bvc.bias2, variance=bvc.variance, covariance=bvc.covariance)
            else:
                metrics.update(bias2=math.nan, variance=math.nan, covariance=math.nan)
        rows.append(SweepRow(float(key), metrics, per_seed, tuple(cfg.seeds),
                             float(sum(c["wall_s"] for c in chunk)), extra))
    return SweepReport(cfg.mode, cfg.to_mapping(), rows)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(report: SweepReport, path, fmt: str = "csv"):
    """CSV: one row per lambda (or gamma_ncl) with seed means; ``seeds`` is a
    space-separated list.  JSON adds the resolved config and per-seed values.
    Floats are written with repr, i.e. shortest round-trip precision."""
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(report.columns)
            for r in report.rows:
                values = {report.key_name: r.key, **r.metrics,
                          "seeds": " ".join(str(s) for s in r.seeds), "wall_s": r.wall_s}
                w.writerow([_fmt(values[c]) for c in report.columns])
    elif fmt == "json":
        doc = {
            "mode": report.mode,
            "config": report.config,
            "columns": list(report.columns),
            "rows": [{report.key_name: r.key, **r.metrics, "seeds": list(r.seeds),
                      "wall_s": r.wall_s, "per_seed": r.per_seed, "extra": r.extra}
                     for r in report.rows],
        }
        with open(path, "w") as f:
            json.dump(doc, f, indent=2, allow_nan=True)
            f.write("\n")
    else:
        raise ConfigError(f"format: expected 'csv' or 'json', got {fmt!r}")


def read_report_json(path) -> SweepReport:
    doc = json.loads(Path(path).read_text())
    key_name = "gamma_ncl" if doc["mode"] == "ncl" else "lambda"
    rows = []
    for r in doc["rows"]:
        metrics = {c: r[c] for c in doc["columns"] if c not in (key_name, "seeds", "wall_s")}
        rows.append(SweepRow(r[key_name], metrics, r["per_seed"], tuple(r["seeds"]),
                             r["wall_s"], r["extra"]))
    return SweepReport(doc["mode"], doc["config"], rows)
