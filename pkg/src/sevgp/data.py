"""Datasets, preprocessing, cross-validation folds and evaluation metrics."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple = ()
    target_name: str = "y"
    # standardization statistics; None until standardize() is applied
    x_mean: Optional[np.ndarray] = None
    x_sd: Optional[np.ndarray] = None
    y_mean: Optional[float] = None
    y_sd: Optional[float] = None
    domain: Optional[np.ndarray] = None  # known input box, overrides the data range
    n_dropped: int = 0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if X.shape[0] < 2:
            raise ValueError("a dataset needs at least two rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError(f"{len(names)} feature names for {X.shape[1]} columns")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def standardized(self) -> bool:
        return self.x_mean is not None

    @property
    def bounds(self) -> np.ndarray:
        """K x 2 array of (lo, hi) per input column."""
        if self.domain is not None:
            return np.asarray(self.domain, dtype=float)
        lo, hi = self.X.min(axis=0), self.X.max(axis=0)
        # degenerate (constant) columns get a tiny box so sampling stays valid
        hi = np.where(hi > lo, hi, lo + 1e-9)
        return np.stack([lo, hi], axis=1)

    def subset(self, idx) -> "Dataset":
        return dataclasses.replace(self, X=self.X[idx], y=self.y[idx], n_dropped=0)


# -- generation and loading ---------------------------------------------------------


def gen_synthetic(n: int, seed=0) -> Dataset:
    """x ~ U(-2, 2), y = 0.25 x^2 + eps with eps ~ N(0, 0.25) (variance)."""
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, size=n)
    y = 0.25 * x**2 + rng.normal(0.0, 0.5, size=n)
    return Dataset(x[:, None], y, ("x",), "y", domain=np.array([[-2.0, 2.0]]))


def true_mean(x):
    return 0.25 * np.asarray(x, dtype=float) ** 2


def _sniff_delimiter(sample: str) -> str:
    try:
        return csv.Sniffer().sniff(sample, delimiters=",;\t").delimiter
    except csv.Error:
        counts = {d: sample.count(d) for d in ",;\t"}
        return max(counts, key=counts.get)


def load_csv(path, target_column: str, feature_columns=None) -> Dataset:
    """Numeric CSV with a header row; delimiter detected among , ; and tab.

    Rows with missing or non-numeric entries are dropped and counted in
    ``n_dropped``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    text = path.read_text()
    delim = _sniff_delimiter(text[:4096])
    reader = csv.reader(text.splitlines(), delimiter=delim)
    try:
        header = [h.strip().strip('"') for h in next(reader)]
    except StopIteration:
        raise ValueError(f"{path} is empty") from None
    if target_column not in header:
        raise KeyError(f"target column {target_column!r} not in header {header}")
    if feature_columns is None:
        feature_columns = [h for h in header if h != target_column]
    missing = [c for c in feature_columns if c not in header]
    if missing:
        raise KeyError(f"feature columns not in header: {missing}")
    cols = [header.index(c) for c in feature_columns]
    t = header.index(target_column)

    rows, dropped = [], 0
    for record in reader:
        if not record or all(not field.strip() for field in record):
            continue
        try:
            values = [float(record[j]) for j in cols + [t]]
        except (ValueError, IndexError):
            dropped += 1
            continue
        if not all(math.isfinite(v) for v in values):
            dropped += 1
            continue
        rows.append(values)
    if dropped:
        log.warning("%s: dropped %d malformed row(s)", path.name, dropped)
    if not rows:
        raise ValueError(f"{path} has no usable rows")
    arr = np.array(rows)
    return Dataset(arr[:, :-1], arr[:, -1], tuple(feature_columns), target_column, n_dropped=dropped)


# -- preprocessing ---------------------------------------------------------------------


def fit_stats(train: Dataset):
    x_mean = train.X.mean(axis=0)
    x_sd = train.X.std(axis=0)
    const = x_sd == 0
    if np.any(const):
        names = [train.feature_names[j] for j in np.flatnonzero(const)]
        warnings.warn(f"constant column(s) passed through unscaled: {names}", stacklevel=3)
        x_mean = np.where(const, 0.0, x_mean)
        x_sd = np.where(const, 1.0, x_sd)
    y_sd = float(train.y.std())
    if y_sd == 0:
        raise ValueError("target is constant; cannot standardize")
    return x_mean, x_sd, float(train.y.mean()), y_sd


def standardize(train: Dataset, apply_to: Optional[Dataset] = None) -> Dataset:
    """Z-score features and target of ``apply_to`` with statistics fitted on ``train``."""
    if train.standardized:
        raise ValueError("training set is already standardized")
    target = train if apply_to is None else apply_to
    x_mean, x_sd, y_mean, y_sd = fit_stats(train)
    return dataclasses.replace(
        target,
        X=(target.X - x_mean) / x_sd,
        y=(target.y - y_mean) / y_sd,
        x_mean=x_mean,
        x_sd=x_sd,
        y_mean=y_mean,
        y_sd=y_sd,
        domain=None,
    )


def apply_stats(d: Dataset, stats: Dataset) -> Dataset:
    """Standardize raw ``d`` with the statistics stored on ``stats``."""
    return dataclasses.replace(
        d,
        X=(d.X - stats.x_mean) / stats.x_sd,
        y=(d.y - stats.y_mean) / stats.y_sd,
        x_mean=stats.x_mean,
        x_sd=stats.x_sd,
        y_mean=stats.y_mean,
        y_sd=stats.y_sd,
        domain=None,
    )


def unstandardize(d: Dataset) -> Dataset:
    if not d.standardized:
        return d
    return dataclasses.replace(
        d,
        X=d.X * d.x_sd + d.x_mean,
        y=d.y * d.y_sd + d.y_mean,
        x_mean=None,
        x_sd=None,
        y_mean=None,
        y_sd=None,
    )


# -- cross-validation and metrics -------------------------------------------------------


def kfold(n: int, k: int, seed=0) -> list:
    """Shuffled partition of range(n) into k folds whose sizes differ by at most one."""
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def mse(pred, y) -> float:
    pred = np.asarray(pred, dtype=float)
    y = np.asarray(y, dtype=float)
    if pred.shape != y.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {y.shape}")
    return float(np.mean((pred - y) ** 2))


def stability_per_instance(coef_at, X, m: int = 10, chunk: int = 512) -> np.ndarray:
    """Local Lipschitz estimate of the coefficient field at every row of X.

    For row i: max over its ``m`` nearest other rows j (Euclidean, ties
    broken by row index, exact duplicates skipped) of
    ``|F(x_i) - F(x_j)| / |x_i - x_j|``, where ``F = coef_at(X)`` stacks the
    coefficients row-wise. ``coef_at`` is called once with the whole matrix.
    """
    X = np.asarray(X, dtype=float)
    N = X.shape[0]
    if N <= m:
        raise ValueError(f"need more than m={m} rows, got {N}")
    F = np.asarray(coef_at(X), dtype=float).reshape(N, -1)
    out = np.empty(N)
    short = 0
    for start in range(0, N, chunk):
        rows = slice(start, min(start + chunk, N))
        dist = np.sqrt(((X[rows, None, :] - X[None, :, :]) ** 2).sum(-1))
        for r, i in enumerate(range(rows.start, rows.stop)):
            d = dist[r]
            order = np.argsort(d, kind="stable")
            order = order[d[order] > 0][:m]
            if order.size < m:
                short += 1
            if order.size == 0:
                out[i] = 0.0
                continue
            dF = np.sqrt(((F[order] - F[i]) ** 2).sum(-1))
            out[i] = np.max(dF / d[order])
    if short:
        warnings.warn(f"{short} row(s) had fewer than {m} distinct neighbours; used all available", stacklevel=2)
    return out


def stability(coef_at, X, m: int = 10) -> float:
    """Mean of :func:`stability_per_instance` over all rows."""
    return float(np.mean(stability_per_instance(coef_at, X, m)))
