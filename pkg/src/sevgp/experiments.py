"""The two experiment protocols: posterior soundness and the CV benchmark.

Both return plain row dictionaries; writing them to CSV is left to
:func:`write_csv` so callers can also inspect results in memory.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import data as D
from . import kernels
from .model import Variant, coefficients, init_model, predict_f_diag
from .training import TrainConfig, fit

GRID = np.round(np.linspace(-2.0, 2.0, 201), 10)


@dataclass
class SoundnessSettings:
    """Synthetic-data run on y = 0.25 x^2 + noise.

    ``prior_jitter`` regularizes the Gram matrix of the full-function prior
    (x x')^2, which has rank one on any 1-D measurement set.
    """

    sizes: tuple = (25, 100)
    variants: tuple = ("41", "42", "43")
    n_inducing: int = 4
    se_amplitude: float = 0.5
    lengthscale: float = 1.0
    sigma2: float = 0.1
    prior_jitter: float = 1e-3
    train: TrainConfig = dataclasses.field(default_factory=lambda: TrainConfig(iterations=3000))


@dataclass
class BenchSettings:
    """10-fold CV of the coefficient-prior variant on a tabular dataset."""

    folds: int = 10
    variant: str = "41"
    n_inducing: int = 3
    ard_amplitude: float = 2.0
    lengthscale: float = 1.0
    sigma2: float = 0.1
    include_bias: bool = False
    stability_neighbours: int = 10
    train: TrainConfig = dataclasses.field(
        default_factory=lambda: TrainConfig(optimizer="rmsprop", learning_rate=1e-2, iterations=2000, batch_size=100)
    )


# -- soundness ------------------------------------------------------------------------


def soundness_model(d: D.Dataset, variant, s: SoundnessSettings, seed: int):
    variant = Variant.parse(variant)
    full = None if variant is Variant.V41 else kernels.Polynomial(2)
    return init_model(
        d.X,
        variant,
        kernels.const_se(s.se_amplitude, s.lengthscale),
        s.n_inducing,
        full_prior_kernel=full,
        prior_jitter=s.prior_jitter,
        sigma2=s.sigma2,
        seed=seed,
    )


def grid_errors(mean, x_train):
    """RMSE to the true mean over the whole grid and over the part outside the data range."""
    err = (np.asarray(mean) - D.true_mean(GRID)) ** 2
    outside = (GRID < np.min(x_train)) | (GRID > np.max(x_train))
    rmse_out = float(np.sqrt(err[outside].mean())) if outside.any() else float("nan")
    return float(np.sqrt(err.mean())), rmse_out, int(outside.sum())


def run_soundness(s: SoundnessSettings, seed: int = 0, progress=None):
    """Fit every (size, variant) pair; returns ``(grid_rows, sample_rows, summary_rows)``."""
    grid_rows, sample_rows, summary = [], [], []
    for n in s.sizes:
        d = D.gen_synthetic(n, seed)
        sample_rows += [{"n": n, "x": float(x), "y": float(y)} for x, y in zip(d.X[:, 0], d.y)]
        for v in s.variants:
            model = soundness_model(d, v, s, seed)
            res = fit(model, d, dataclasses.replace(s.train, seed=seed))
            mean, var = predict_f_diag(res.model, GRID[:, None])
            sd = np.sqrt(np.maximum(var, 0.0))
            for x, m, sdv in zip(GRID, mean, sd):
                grid_rows.append(
                    {
                        "n": n,
                        "variant": Variant.parse(v).value,
                        "x": float(x),
                        "mean": float(m),
                        "lower": float(m - 2 * sdv),
                        "upper": float(m + 2 * sdv),
                        "true_mean": float(D.true_mean(x)),
                    }
                )
            rmse, rmse_out, n_out = grid_errors(mean, d.X[:, 0])
            summary.append(
                {
                    "n": n,
                    "variant": Variant.parse(v).value,
                    "seed": seed,
                    "rmse_grid": rmse,
                    "rmse_outside": rmse_out,
                    "n_outside": n_out,
                    "sigma2": float(res.model.sigma2),
                    "elbo_final": float(res.trace[-1]) if res.trace.size else float("nan"),
                }
            )
            if progress:
                progress(summary[-1])
    return grid_rows, sample_rows, summary


# -- benchmark ------------------------------------------------------------------------


def bench_model(train: D.Dataset, s: BenchSettings, seed: int):
    return init_model(
        train.X,
        s.variant,
        kernels.const_ard(train.k, s.ard_amplitude, s.lengthscale),
        s.n_inducing,
        include_bias=s.include_bias,
        sigma2=s.sigma2,
        seed=seed,
    )


def run_fold(raw: D.Dataset, test_idx, s: BenchSettings, seed: int):
    """Train on the complement of ``test_idx``; MSE and stability in standardized units."""
    train_mask = np.ones(raw.n, dtype=bool)
    train_mask[test_idx] = False
    train = D.standardize(raw.subset(train_mask))
    test = D.apply_stats(raw.subset(test_idx), train)
    res = fit(bench_model(train, s, seed), train, dataclasses.replace(s.train, seed=seed))
    mean, _ = predict_f_diag(res.model, test.X)
    stab = D.stability(lambda Xq: coefficients(res.model, Xq), train.X, s.stability_neighbours)
    return D.mse(mean, test.y), stab, float(res.trace[-1]) if res.trace.size else float("nan")


def run_bench(raw: D.Dataset, s: BenchSettings, seed: int = 0, name: str = "data", progress=None):
    """Per-fold rows followed by ``mean`` and ``sd`` summary rows."""
    rows = []
    for i, test_idx in enumerate(D.kfold(raw.n, s.folds, seed)):
        mse, stab, elbo = run_fold(raw, test_idx, s, seed + i)
        rows.append(
            {"dataset": name, "variant": Variant.parse(s.variant).value, "fold": i,
             "mse": mse, "stability": stab, "elbo_final": elbo, "seed": seed}
        )
        if progress:
            progress(rows[-1])
    rows += summarize(rows)
    return rows


def summarize(rows):
    out = []
    for label, fn in (("mean", np.mean), ("sd", lambda a: np.std(a, ddof=1) if len(a) > 1 else 0.0)):
        row = dict(rows[0], fold=label)
        for key in ("mse", "stability", "elbo_final"):
            row[key] = float(fn(np.array([r[key] for r in rows])))
        out.append(row)
    return out


# -- output ---------------------------------------------------------------------------


def write_csv(path, rows, fields: Optional[list] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = fields or list(rows[0])
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in r.items()})
    return path
