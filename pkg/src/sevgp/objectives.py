"""Variational objectives for the three prior regimes.

``elbo_41``
    coefficient priors p(u_k) only; the model is a sparse variational GPX.
``felbo_42``
    a prior p(f) on the whole function, compared to q(f) on a measurement
    set (batch inputs plus uniformly drawn augmentation points).
``felbo_43``
    both of the above.

All three share the data term

    (N_total / n) * [sum_i log N(y_i | mu_i, sigma2) - tr(Sigma_batch) / (2 sigma2)]

and are pure functions of (model, data, augmentation points), so they can
be traced and differentiated by JAX.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import jax.numpy as jnp
import jax.scipy.linalg as jsl
import numpy as np

from . import kernels
from .gaussian import (
    GaussianDist,
    _expected_loglik,
    chol_logdet,
    jitter_cholesky,
    kl_chol,
    kl_mvn,
)
from .model import SevgpModel, Variant, f_moments


@dataclass(frozen=True)
class MeasurementSet:
    """Inputs on which process-level KLs are evaluated.

    The first ``n_train`` rows are the (batch) training inputs, the rest are
    augmentation points.
    """

    X_D: np.ndarray
    n_train: int

    @classmethod
    def from_batch(cls, X, aug=None) -> "MeasurementSet":
        X = jnp.asarray(X, dtype=float)
        if aug is None or np.shape(aug)[0] == 0:
            return cls(X, X.shape[0])
        return cls(jnp.concatenate([X, jnp.asarray(aug, dtype=float)], axis=0), X.shape[0])

    @property
    def n_aug(self) -> int:
        return self.X_D.shape[0] - self.n_train

    @property
    def X_train(self):
        return self.X_D[: self.n_train]


def sample_augmentation(bounds, A: int, rng_seed) -> np.ndarray:
    """``A`` points drawn uniformly from the box ``bounds = [(lo, hi), ...]``.

    ``rng_seed`` may be an int or a ``numpy.random.Generator``.
    """
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    lo, hi = bounds[:, 0], bounds[:, 1]
    if A < 0:
        raise ValueError(f"augmentation count must be >= 0, got {A}")
    if np.any(~np.isfinite(bounds)) or np.any(lo >= hi):
        raise ValueError("each bound needs finite lo < hi")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return lo + (hi - lo) * rng.random((A, lo.size))


# -- building blocks -----------------------------------------------------------------


def data_term(y, mean, var, sigma2, n_total=None):
    """Scaled expected log-likelihood of a batch under q(f)."""
    n = y.shape[0]
    scale = 1.0 if n_total is None else n_total / n
    return scale * _expected_loglik(y, mean, jnp.sum(var), sigma2)


def coefficient_kl(model: SevgpModel):
    """sum_k KL(N(a_k, S_k) || N(0, K_prior(Z_k, Z_k)))."""
    total = 0.0
    for i, b in enumerate(model.blocks):
        Kp = kernels.gram(model.prior_kernel(i), b.Z)
        Lp = jitter_cholesky(Kp, model.jitter)
        total = total + kl_chol(b.a, b.L, jnp.zeros(b.M), Lp)
    return total


def functional_kl(qD: GaussianDist, pD: GaussianDist) -> float:
    """KL(q(f^D) || p(f^D)) between process marginals on a measurement set."""
    return kl_mvn(qD, pD)


def _process_kl(model, mom, X_D):
    """KL(q(f^D) || p(f^D)) with p(f) = GP(0, full prior kernel), plus C_D's factor."""
    C = kernels.gram(model.full_prior_kernel, X_D)
    Lc = jitter_cholesky(C, model.full_prior_jitter)
    Lq = jitter_cholesky(mom.cov, model.jitter)
    return kl_chol(mom.mean, Lq, jnp.zeros_like(mom.mean), Lc), Lc, Lq


def _require(model, *variants):
    if model.variant not in variants:
        names = "/".join(v.value for v in variants)
        raise ValueError(f"objective needs variant {names}, model is {model.variant.value}")


def _as_measurement(X, aug):
    if isinstance(aug, MeasurementSet):
        return aug
    return MeasurementSet.from_batch(X, aug)


# -- objectives ------------------------------------------------------------------------


def elbo_41(model: SevgpModel, X, y, n_total: Optional[int] = None):
    """Evidence lower bound with coefficient priors (sparse GPX).

    With the full training set (``n_total`` None or equal to ``len(y)``) this
    is a lower bound on log N(y | 0, gpx_prior_cov + sigma2 I).
    """
    _require(model, Variant.V41)
    y = jnp.asarray(y, dtype=float)
    mom = f_moments(model, X, full_cov=False)
    return data_term(y, mom.mean, mom.cov, model.sigma2, n_total) - coefficient_kl(model)


def felbo_42(model: SevgpModel, X, y, aug=None, lam: Optional[float] = None, n_total: Optional[int] = None):
    """Functional lower bound against a full-process prior.

    ``aug`` holds augmentation points (A x K array) or a ready
    :class:`MeasurementSet` whose leading rows are ``X``. ``lam`` scales the
    process KL; ``lam=1`` is the proper bound, the default is ``1/n_total``.
    """
    _require(model, Variant.V42)
    y = jnp.asarray(y, dtype=float)
    meas = _as_measurement(X, aug)
    n = meas.n_train
    n_total = y.shape[0] if n_total is None else n_total
    lam = 1.0 / n_total if lam is None else lam
    mom = f_moments(model, meas.X_D, full_cov=True)
    var_n = jnp.diag(mom.cov)[:n]
    kl, _, _ = _process_kl(model, mom, meas.X_D)
    return data_term(y, mom.mean[:n], var_n, model.sigma2, n_total) - lam * kl


def felbo_43(
    model: SevgpModel,
    X,
    y,
    aug=None,
    lam: Optional[float] = None,
    n_total: Optional[int] = None,
    correction: str = "trace",
):
    """Functional lower bound with both a full-process and coefficient priors.

    The expected process KL E_{q(u)}[KL(q(f^D | u) || p(f^D))] is replaced by
    ``correction``:

    ``"trace"``
        KL(q(f^D) || p(f^D)) + tr(C_D^{-1} Sigma_D) / 2, with Sigma_D the
        covariance of q(f^D | u). This is the default.
    ``"logdet"``
        KL(q(f^D) || p(f^D)) + (log|Sigma_marg| - log|Sigma_D|) / 2, which is
        the exact value of that expectation (see ``expected_conditional_kl``).
    """
    _require(model, Variant.V43)
    if correction not in ("trace", "logdet"):
        raise ValueError(f"correction must be 'trace' or 'logdet', got {correction!r}")
    y = jnp.asarray(y, dtype=float)
    meas = _as_measurement(X, aug)
    n = meas.n_train
    n_total = y.shape[0] if n_total is None else n_total
    lam = 1.0 / n_total if lam is None else lam
    mom = f_moments(model, meas.X_D, full_cov=True)
    var_n = jnp.diag(mom.cov)[:n]
    kl, Lc, Lq = _process_kl(model, mom, meas.X_D)
    if correction == "trace":
        extra = 0.5 * trace_term(Lc, mom.cond)
    else:
        Ls = jitter_cholesky(mom.cond, model.jitter)
        extra = 0.5 * (chol_logdet(Lq) - chol_logdet(Ls))
    data = data_term(y, mom.mean[:n], var_n, model.sigma2, n_total)
    return data - lam * (kl + extra) - coefficient_kl(model)


def trace_term(Lc, Sigma):
    """tr(C^{-1} Sigma) given the lower factor of C."""
    W = jsl.solve_triangular(Lc, Sigma, lower=True)
    W = jsl.solve_triangular(Lc, W.T, lower=True)
    return jnp.trace(W)


def objective(model: SevgpModel, X, y, aug=None, lam=None, n_total=None):
    """Dispatch to the bound matching ``model.variant``."""
    if model.variant is Variant.V41:
        return elbo_41(model, X, y, n_total)
    if model.variant is Variant.V42:
        return felbo_42(model, X, y, aug, lam, n_total)
    return felbo_43(model, X, y, aug, lam, n_total)


# -- pieces of the variant-4.3 bound, exposed for checking ------------------------------


def process_marginals(model: SevgpModel, X_D):
    """(q(f^D), q(f^D | u) covariance, p(f^D)) as concrete arrays."""
    mom = f_moments(model, X_D, full_cov=True)
    C = np.asarray(kernels.gram(model.full_prior_kernel, X_D))
    cov = np.asarray(mom.cov)
    q = GaussianDist(np.asarray(mom.mean), 0.5 * (cov + cov.T), jitter=model.jitter)
    p = GaussianDist(np.zeros(C.shape[0]), C, jitter=model.full_prior_jitter)
    cond = np.asarray(mom.cond)
    return q, 0.5 * (cond + cond.T), p


def trace_expected_kl(model: SevgpModel, X_D) -> float:
    """KL(q(f^D) || p(f^D)) + tr(C_D^{-1} Sigma_D) / 2."""
    q, cond, p = process_marginals(model, X_D)
    return functional_kl(q, p) + 0.5 * float(np.trace(np.linalg.solve(p.chol.T, np.linalg.solve(p.chol, cond))))


def expected_conditional_kl(model: SevgpModel, X_D) -> float:
    """Closed form of E_{q(u)}[KL(q(f^D | u) || p(f^D))].

    The conditional mean is linear in u, so the expectation adds the
    covariance of that mean to the trace term; what remains is
    KL(q(f^D) || p(f^D)) + (log|Sigma_marg| - log|Sigma_D|) / 2.
    """
    q, cond, p = process_marginals(model, X_D)
    cond_dist = GaussianDist(np.zeros(cond.shape[0]), cond, jitter=model.jitter)
    logdet_marg = 2.0 * np.sum(np.log(np.diag(q.chol)))
    logdet_cond = 2.0 * np.sum(np.log(np.diag(cond_dist.chol)))
    return functional_kl(q, p) + 0.5 * (logdet_marg - logdet_cond)
