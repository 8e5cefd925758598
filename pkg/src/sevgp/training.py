"""Parameter packing, gradients, optimizers and the training loop."""

from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np

from . import kernels
from .gaussian import JITTER_GROWTH, MAX_ESCALATIONS
from .model import CoefficientBlock, SevgpModel, Variant, concrete
from .objectives import elbo_41, felbo_42, felbo_43, sample_augmentation


class NonFiniteObjectiveError(FloatingPointError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ParamLayout:
    """Flat parameter vector <-> model.

    Order, per block: a (M), the lower triangle of L row by row with the
    diagonal stored as log values, Z (M x D, row-major) when inducing
    locations are trained, the block kernel's packed hyperparameters. Then
    log sigma2 when the noise is trained, then the full-prior kernel's
    packed hyperparameters when it is trained.
    """

    def __init__(self, model: SevgpModel, train_inducing=True, train_noise=True, train_full_prior=True):
        self.template = concrete(model)
        self.train_inducing = train_inducing
        self.train_noise = train_noise
        self.train_full_prior = train_full_prior and model.full_prior_kernel is not None
        self._tril = []
        self._slices = []
        pos = 0
        for b in self.template.blocks:
            M, D = b.Z.shape
            rows, cols = np.tril_indices(M)
            self._tril.append((rows, cols, rows == cols))
            sizes = {"a": M, "L": rows.size, "Z": M * D if train_inducing else 0, "kernel": kernels.n_params(b.kernel)}
            spans = {}
            for name, size in sizes.items():
                spans[name] = slice(pos, pos + size)
                pos += size
            self._slices.append(spans)
        self._noise = slice(pos, pos + int(train_noise))
        pos += int(train_noise)
        n_full = kernels.n_params(self.template.full_prior_kernel) if self.train_full_prior else 0
        self._full = slice(pos, pos + n_full)
        self.size = pos + n_full

    def pack(self, model: SevgpModel) -> np.ndarray:
        model = concrete(model)
        v = np.zeros(self.size)
        for b, spans, (rows, cols, diag) in zip(model.blocks, self._slices, self._tril):
            v[spans["a"]] = b.a
            entries = b.L[rows, cols].copy()
            entries[diag] = np.log(entries[diag])
            v[spans["L"]] = entries
            if self.train_inducing:
                v[spans["Z"]] = b.Z.ravel()
            v[spans["kernel"]] = np.asarray(kernels.pack_params(b.kernel))
        if self.train_noise:
            v[self._noise] = np.log(model.sigma2)
        if self.train_full_prior:
            v[self._full] = np.asarray(kernels.pack_params(model.full_prior_kernel))
        return v

    def unpack(self, v) -> SevgpModel:
        """Model from a parameter vector; works on traced vectors."""
        t = self.template
        blocks = []
        for b, spans, (rows, cols, diag) in zip(t.blocks, self._slices, self._tril):
            M, D = b.Z.shape
            entries = v[spans["L"]]
            entries = jnp.where(diag, jnp.exp(entries), entries)
            L = jnp.zeros((M, M)).at[rows, cols].set(entries)
            Z = v[spans["Z"]].reshape(M, D) if self.train_inducing else b.Z
            kern = kernels.unpack_params(b.kernel, v[spans["kernel"]])
            blocks.append(CoefficientBlock(Z, v[spans["a"]], L, kern, b.feature_index))
        sigma2 = jnp.exp(v[self._noise][0]) if self.train_noise else t.sigma2
        full = t.full_prior_kernel
        if self.train_full_prior:
            full = kernels.unpack_params(full, v[self._full])
        return t.replace(blocks=tuple(blocks), sigma2=sigma2, full_prior_kernel=full)

    def to_model(self, v, jitter=None) -> SevgpModel:
        m = concrete(self.unpack(jnp.asarray(v, dtype=float)))
        return m if jitter is None else m.replace(jitter=float(jitter))


def gradient(fn, p) -> np.ndarray:
    """Gradient of a scalar objective of the flat parameter vector."""
    value, grad = jax.value_and_grad(fn)(jnp.asarray(p, dtype=float))
    if not np.isfinite(float(value)) or not np.all(np.isfinite(np.asarray(grad))):
        raise NonFiniteObjectiveError(f"objective not finite at the given parameters (value {float(value)})")
    return np.asarray(grad)


def objective_fn(layout: ParamLayout, X, y, aug=None, lam=None, n_total=None, correction="trace"):
    """The model's variational objective as a function of the flat vector."""
    X = jnp.asarray(X, dtype=float)
    y = jnp.asarray(y, dtype=float)

    def fn(v):
        return _bound(layout.unpack(v), X, y, aug, lam, n_total, correction)

    return fn


def _bound(m, X, y, aug, lam, n_total, correction):
    if m.variant is Variant.V41:
        return elbo_41(m, X, y, n_total)
    if m.variant is Variant.V42:
        return felbo_42(m, X, y, aug, lam, n_total)
    return felbo_43(m, X, y, aug, lam, n_total, correction=correction)


# -- optimizers (ascent) --------------------------------------------------------------


class AdamState(NamedTuple):
    m: np.ndarray
    v: np.ndarray
    t: int = 0


class RMSPropState(NamedTuple):
    v: np.ndarray


def adam_init(n: int) -> AdamState:
    return AdamState(np.zeros(n), np.zeros(n), 0)


def rmsprop_init(n: int) -> RMSPropState:
    return RMSPropState(np.zeros(n))


def adam_step(params, state: AdamState, g, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step uphill; returns ``(params, state)``."""
    g = np.asarray(g, dtype=float)
    if g.shape != state.m.shape or np.shape(params) != g.shape:
        raise ValueError(f"shape mismatch: params {np.shape(params)}, grad {g.shape}, state {state.m.shape}")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * g
    v = beta2 * state.v + (1 - beta2) * g * g
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return params + lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


def rmsprop_step(params, state: RMSPropState, g, lr, decay=0.9, eps=1e-8):
    """One RMSProp step uphill; returns ``(params, state)``."""
    g = np.asarray(g, dtype=float)
    if g.shape != state.v.shape or np.shape(params) != g.shape:
        raise ValueError(f"shape mismatch: params {np.shape(params)}, grad {g.shape}, state {state.v.shape}")
    v = decay * state.v + (1 - decay) * g * g
    return params + lr * g / (np.sqrt(v) + eps), RMSPropState(v)


_OPTIMIZERS = {
    "adam": (adam_init, adam_step),
    "rmsprop": (rmsprop_init, rmsprop_step),
}


# -- training loop ----------------------------------------------------------------------


@dataclass
class TrainConfig:
    """Settings for :func:`fit`.

    The data term is estimated on minibatches of ``batch_size`` rows drawn
    without replacement each step; with ``batch_size >= N`` every step uses
    the full data and the objective is deterministic. ``lam=None`` means
    1/N for the process KL of variants 4.2 and 4.3.
    """

    optimizer: str = "adam"
    learning_rate: float = 1e-2
    iterations: int = 1000
    batch_size: int = 100
    n_aug: int = 20
    lam: Optional[float] = None
    seed: int = 0
    train_inducing: bool = True
    train_noise: bool = True
    train_full_prior: bool = True
    correction: str = "trace"
    log_every: int = 0
    variant: Optional[str] = None

    def __post_init__(self):
        if self.optimizer not in _OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {sorted(_OPTIMIZERS)}, got {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 0 or self.batch_size < 1 or self.n_aug < 0:
            raise ValueError("iterations, batch_size and n_aug must be non-negative counts (batch_size >= 1)")
        if self.lam is not None and not self.lam >= 0:
            raise ValueError("lam must be nonnegative")


class FitResult(NamedTuple):
    model: SevgpModel
    trace: np.ndarray
    jitter: float


def _compiled(layout, n_total, lam, correction):
    def loss(v, X, y, aug, jitter):
        return _bound(layout.unpack(v).replace(jitter=jitter), X, y, aug, lam, n_total, correction)

    return jax.jit(jax.value_and_grad(loss))


def fit(model: SevgpModel, data, config: TrainConfig, progress=None) -> FitResult:
    """Stochastic gradient ascent on the model's variational objective.

    ``data`` needs ``X``, ``y`` and ``bounds`` attributes (a
    :class:`sevgp.data.Dataset`). Returns the trained model and the
    objective value at every step. Same seed, same trace, bit for bit.
    """
    if config.variant is not None and Variant.parse(config.variant) is not model.variant:
        raise ValueError(f"config variant {config.variant} does not match model variant {model.variant.value}")
    X = np.asarray(data.X, dtype=float)
    y = np.asarray(data.y, dtype=float)
    N = X.shape[0]
    if X.shape[1] != model.n_features:
        raise ValueError(f"model expects {model.n_features} features, data has {X.shape[1]}")
    layout = ParamLayout(model, config.train_inducing, config.train_noise, config.train_full_prior)
    v = layout.pack(model)
    jitter = float(model.jitter)
    if config.iterations == 0:
        return FitResult(model, np.zeros(0), jitter)

    init, step = _OPTIMIZERS[config.optimizer]
    state = init(layout.size)
    rng = np.random.default_rng(config.seed)
    n = min(config.batch_size, N)
    uses_aug = model.variant is not Variant.V41
    bounds = getattr(data, "bounds", None)
    if uses_aug and config.n_aug > 0 and bounds is None:
        bounds = np.stack([X.min(axis=0), X.max(axis=0)], axis=1)
    value_and_grad = _compiled(layout, N, config.lam, config.correction)
    log = progress
    if log is None and config.log_every:
        def log(it, value, sigma2):
            print(f"{it}\t{value:.10g}\t{sigma2:.6g}", file=sys.stderr)

    trace = np.empty(config.iterations)
    for it in range(config.iterations):
        if n < N:
            idx = rng.choice(N, size=n, replace=False)
            Xb, yb = X[idx], y[idx]
        else:
            Xb, yb = X, y
        aug = None
        if uses_aug and config.n_aug > 0:
            aug = sample_augmentation(bounds, config.n_aug, rng)
        for _ in range(MAX_ESCALATIONS + 1):
            value, grad = value_and_grad(v, Xb, yb, aug, jitter)
            value = float(value)
            grad = np.asarray(grad)
            if np.isfinite(value) and np.all(np.isfinite(grad)):
                break
            jitter *= JITTER_GROWTH
        else:
            raise NonFiniteObjectiveError(
                f"objective not finite at iteration {it} even with jitter {jitter / JITTER_GROWTH:.1e}",
                iteration=it,
            )
        trace[it] = value
        v, state = step(v, state, grad, config.learning_rate)
        if log is not None and config.log_every and it % config.log_every == 0:
            log(it, value, float(np.exp(v[layout._noise][0])) if config.train_noise else float(model.sigma2))

    trained = layout.to_model(v, jitter)
    _check_positive(trained)
    return FitResult(trained, trace, jitter)


def _check_positive(model: SevgpModel):
    ok = float(model.sigma2) > 0 and all(np.all(np.diag(b.L) > 0) for b in model.blocks)
    if not ok:
        raise NonFiniteObjectiveError("training produced a non-positive variance parameter")
