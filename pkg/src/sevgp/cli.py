"""``sevgp`` command line: soundness, bench, fit, predict, explain.

Settings come from an optional JSON config file whose keys mirror
:class:`RunConfig`; command-line flags override file values. Exit status
is 0 on success, 2 for configuration, schema or file errors and 3 for
numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import data as D
from . import experiments as E
from . import kernels
from .gaussian import NotPSDError
from .model import Variant, coefficients, contributions, init_model, load_model, predict_f_diag, save_model
from .training import NonFiniteObjectiveError, TrainConfig, fit

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("soundness", "bench", "fit", "predict", "explain")
DEFAULT_ITERATIONS = {"soundness": 3000, "bench": 2000, "fit": 2000}

log = logging.getLogger("sevgp")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = ""
    dataset: Optional[str] = None
    target_column: Optional[str] = None
    feature_columns: Optional[list] = None
    model: Optional[str] = None
    out_dir: str = "."
    variant: str = "41"
    seed: int = 0
    folds: int = 10
    sizes: list = dataclasses.field(default_factory=lambda: [25, 100])
    variants: list = dataclasses.field(default_factory=lambda: ["41", "42", "43"])
    kernel: Optional[str] = None
    full_prior_kernel: Optional[str] = None
    n_inducing: Optional[int] = None
    include_bias: bool = False
    sigma2: float = 0.1
    prior_jitter: Optional[float] = None
    optimizer: Optional[str] = None
    learning_rate: float = 1e-2
    iterations: Optional[int] = None
    batch_size: int = 100
    n_aug: int = 20
    lam: Optional[float] = None
    train_inducing: bool = True
    correction: str = "trace"
    log_every: int = 0


_TYPES = {
    str: (str,),
    int: (int,),
    float: (int, float),
    bool: (bool,),
    list: (list,),
}


def _expected_type(f: dataclasses.Field):
    text = str(f.type)
    for name, t in (("bool", bool), ("int", int), ("float", float), ("list", list), ("str", str)):
        if name in text:
            return t
    return str


def validate(values: dict) -> RunConfig:
    """Build a RunConfig from raw key/values, rejecting unknown keys and wrong types."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for key, val in values.items():
        if val is None:
            continue
        t = _expected_type(fields[key])
        ok = isinstance(val, _TYPES[t]) and not (t in (int, float) and isinstance(val, bool))
        if not ok:
            raise ConfigError(f"config key {key!r} expects {t.__name__}, got {type(val).__name__}")
    cfg = RunConfig(**values)
    if cfg.command not in COMMANDS:
        raise ConfigError(f"command must be one of {', '.join(COMMANDS)}")
    try:
        cfg.variant = Variant.parse(cfg.variant).value
        cfg.variants = [Variant.parse(v).value for v in cfg.variants]
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if cfg.folds < 2 or any(n < 2 for n in cfg.sizes):
        raise ConfigError("folds and synthetic sizes must be at least 2")
    if cfg.iterations is not None and cfg.iterations < 0:
        raise ConfigError("iterations must be nonnegative")
    if cfg.command in ("bench", "fit") and not (cfg.dataset and cfg.target_column):
        raise ConfigError(f"{cfg.command} needs dataset and target_column")
    if cfg.command in ("predict", "explain") and not (cfg.dataset and cfg.model):
        raise ConfigError(f"{cfg.command} needs dataset and model")
    return cfg


def train_config(cfg: RunConfig, optimizer: str) -> TrainConfig:
    try:
        return TrainConfig(
            optimizer=cfg.optimizer or optimizer,
            learning_rate=cfg.learning_rate,
            iterations=cfg.iterations if cfg.iterations is not None else DEFAULT_ITERATIONS[cfg.command],
            batch_size=cfg.batch_size,
            n_aug=cfg.n_aug,
            lam=cfg.lam,
            seed=cfg.seed,
            train_inducing=cfg.train_inducing,
            correction=cfg.correction,
            log_every=cfg.log_every,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _parse_kernel(text):
    try:
        return kernels.parse_kernel(text)
    except ValueError as e:
        raise ConfigError(f"bad kernel {text!r}: {e}") from None


# -- commands ---------------------------------------------------------------------------


def cmd_soundness(cfg: RunConfig) -> list:
    s = E.SoundnessSettings(
        sizes=tuple(cfg.sizes),
        variants=tuple(cfg.variants),
        n_inducing=cfg.n_inducing or 4,
        sigma2=cfg.sigma2,
        prior_jitter=1e-3 if cfg.prior_jitter is None else cfg.prior_jitter,
        train=train_config(cfg, "adam"),
    )
    grid, sample, summary = E.run_soundness(s, cfg.seed, progress=_report)
    out = Path(cfg.out_dir)
    return [
        E.write_csv(out / "soundness_grid.csv", grid),
        E.write_csv(out / "soundness_sample.csv", sample),
        E.write_csv(out / "soundness_summary.csv", summary),
    ]


def cmd_bench(cfg: RunConfig) -> list:
    raw = D.load_csv(cfg.dataset, cfg.target_column, cfg.feature_columns)
    s = E.BenchSettings(
        folds=cfg.folds,
        variant=cfg.variant,
        n_inducing=cfg.n_inducing or 3,
        sigma2=cfg.sigma2,
        include_bias=cfg.include_bias,
        train=train_config(cfg, "rmsprop"),
    )
    if s.variant != "41":
        raise ConfigError("bench runs variant 41 (coefficient priors only)")
    rows = E.run_bench(raw, s, cfg.seed, name=Path(cfg.dataset).stem, progress=_report)
    return [E.write_csv(Path(cfg.out_dir) / "bench.csv", rows)]


def cmd_fit(cfg: RunConfig) -> list:
    raw = D.load_csv(cfg.dataset, cfg.target_column, cfg.feature_columns)
    train = D.standardize(raw)
    variant = Variant.parse(cfg.variant)
    kern = _parse_kernel(cfg.kernel) if cfg.kernel else kernels.const_ard(train.k, 2.0)
    full = None
    if variant is not Variant.V41:
        if not cfg.full_prior_kernel:
            raise ConfigError(f"variant {variant.value} needs full_prior_kernel")
        full = _parse_kernel(cfg.full_prior_kernel)
    if kernels.input_dim(kern) not in (None, train.k):
        raise ConfigError(f"kernel input dimension does not match the {train.k} features")
    model = init_model(
        train.X,
        variant,
        kern,
        cfg.n_inducing or 3,
        full_prior_kernel=full,
        include_bias=cfg.include_bias,
        prior_jitter=cfg.prior_jitter,
        sigma2=cfg.sigma2,
        seed=cfg.seed,
    )
    res = fit(model, train, train_config(cfg, "adam"))
    meta = {
        "feature_names": list(train.feature_names),
        "target_name": train.target_name,
        "x_mean": train.x_mean.tolist(),
        "x_sd": train.x_sd.tolist(),
        "y_mean": train.y_mean,
        "y_sd": train.y_sd,
        "elbo_final": float(res.trace[-1]) if res.trace.size else None,
        "seed": cfg.seed,
    }
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "model.json"
    save_model(path, res.model, meta)
    return [path]


def _load_inputs(cfg: RunConfig):
    try:
        model, meta = load_model(cfg.model)
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ConfigError(f"{cfg.model} is not a valid model file: {e}") from None
    for key in ("feature_names", "x_mean", "x_sd", "y_mean", "y_sd"):
        if key not in meta:
            raise ConfigError(f"model file lacks standardization metadata {key!r}")
    names = meta["feature_names"]
    X = _read_features(cfg.dataset, names)
    Xs = (X - np.asarray(meta["x_mean"])) / np.asarray(meta["x_sd"])
    return model, meta, Xs


def _read_features(path, names):
    """Feature matrix by column name; the target column may be absent."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    text = path.read_text()
    reader = csv.reader(text.splitlines(), delimiter=D._sniff_delimiter(text[:4096]))
    header = [h.strip().strip('"') for h in next(reader, [])]
    missing = [n for n in names if n not in header]
    if missing:
        raise KeyError(f"columns missing from {path.name}: {missing}")
    cols = [header.index(n) for n in names]
    rows = []
    for i, rec in enumerate(reader, start=2):
        if not rec or all(not f.strip() for f in rec):
            continue
        try:
            rows.append([float(rec[j]) for j in cols])
        except (ValueError, IndexError):
            raise ValueError(f"{path.name}, line {i}: non-numeric or missing feature value") from None
    if not rows:
        raise ValueError(f"{path} has no rows")
    return np.array(rows)


def cmd_predict(cfg: RunConfig) -> list:
    model, meta, Xs = _load_inputs(cfg)
    mean, var = predict_f_diag(model, Xs)
    y_mean, y_sd = meta["y_mean"], meta["y_sd"]
    rows = [
        {
            "row": i,
            "mean": float(m * y_sd + y_mean),
            "variance": float(v * y_sd**2),
            "variance_y": float((v + model.sigma2) * y_sd**2),
        }
        for i, (m, v) in enumerate(zip(mean, var))
    ]
    return [E.write_csv(Path(cfg.out_dir) / "predictions.csv", rows)]


def cmd_explain(cfg: RunConfig) -> list:
    model, meta, Xs = _load_inputs(cfg)
    coef = coefficients(model, Xs)
    contrib = contributions(model, Xs)
    mean, _ = predict_f_diag(model, Xs)
    names = (["bias"] if model.include_bias else []) + list(meta["feature_names"])
    rows = []
    for i in range(Xs.shape[0]):
        row = {"row": i}
        row.update({f"coef_{n}": float(c) for n, c in zip(names, coef[i])})
        row.update({f"contrib_{n}": float(c) for n, c in zip(names, contrib[i])})
        row["mean_standardized"] = float(mean[i])
        row["mean"] = float(mean[i] * meta["y_sd"] + meta["y_mean"])
        rows.append(row)
    return [E.write_csv(Path(cfg.out_dir) / "explanations.csv", rows)]


HANDLERS = {
    "soundness": cmd_soundness,
    "bench": cmd_bench,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "explain": cmd_explain,
}


def _report(row):
    log.info("  ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sevgp", description="Self-explaining variational GP experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON file with RunConfig keys")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--variant", choices=["41", "42", "43"])
    p.add_argument("--dataset", help="CSV input (training data, or rows to predict/explain)")
    p.add_argument("--target-column")
    p.add_argument("--folds", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--model", help="model file for predict/explain")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args) -> RunConfig:
    values = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
    values["command"] = args.command
    for flag in ("seed", "out_dir", "variant", "dataset", "target_column", "folds", "iterations", "model"):
        val = getattr(args, flag)
        if val is not None:
            values[flag] = val
    return validate(values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
        paths = HANDLERS[cfg.command](cfg)
    except (NonFiniteObjectiveError, NotPSDError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"sevgp: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, OSError, KeyError, ValueError) as e:
        print(f"sevgp: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
