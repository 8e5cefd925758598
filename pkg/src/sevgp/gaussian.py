"""Multivariate normal machinery and the exact GP regression oracle.

Two flavours of Cholesky live here. :func:`cholesky_psd` works on concrete
arrays and escalates the jitter until the factorization succeeds.
:func:`jitter_cholesky` adds a fixed jitter and is safe to trace and
differentiate; a failed factorization shows up as NaN, which the trainer
detects and answers by retrying with a larger jitter.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import jax.numpy as jnp
import jax.scipy.linalg as jsl
import numpy as np

from . import kernels

LOG_2PI = float(np.log(2.0 * np.pi))
DEFAULT_JITTER = 1e-8
JITTER_GROWTH = 10.0
MAX_ESCALATIONS = 6


class NotPSDError(np.linalg.LinAlgError):
    """Cholesky failed even after jitter escalation."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


def cholesky_psd(M, jitter0: float = DEFAULT_JITTER, return_jitter: bool = False):
    """Lower Cholesky factor of ``M + j I``.

    ``j`` starts at ``jitter0`` and grows tenfold, at most
    ``MAX_ESCALATIONS`` times, until the factorization succeeds. With
    ``jitter0=0`` the exact factorization is tried first and escalation
    starts from ``DEFAULT_JITTER``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if not np.allclose(M, M.T, rtol=0, atol=1e-10 * scale):
        raise ValueError("matrix is not symmetric")
    eye = np.eye(M.shape[0])
    j = jitter0
    for _ in range(MAX_ESCALATIONS + 1):
        try:
            L = np.linalg.cholesky(M + j * eye)
        except np.linalg.LinAlgError:
            j = j * JITTER_GROWTH if j > 0 else DEFAULT_JITTER
            continue
        return (L, j) if return_jitter else L
    min_eig = float(np.linalg.eigvalsh(M)[0])
    raise NotPSDError(
        f"matrix not positive definite (min eigenvalue {min_eig:.3e}) "
        f"after jitter escalation to {j / JITTER_GROWTH:.1e}",
        min_eigenvalue=min_eig,
    )


def jitter_cholesky(M, jitter):
    """Traceable ``chol(M + jitter I)``; NaN on failure."""
    return jnp.linalg.cholesky(M + jitter * jnp.eye(M.shape[0]))


def chol_logdet(L):
    return 2.0 * jnp.sum(jnp.log(jnp.diag(L)))


def chol_solve(L, B):
    return jsl.cho_solve((L, True), B)


@dataclass(frozen=True)
class GaussianDist:
    """N(mean, cov) with a lazily cached Cholesky factor.

    The factor is exact when ``cov`` is positive definite; otherwise jitter
    is escalated as in :func:`cholesky_psd` and reported by
    ``applied_jitter``.
    """

    mean: np.ndarray
    cov: np.ndarray
    jitter: float = field(default=0.0, compare=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"inconsistent shapes: mean {mean.shape}, cov {cov.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @functools.cached_property
    def _factor(self):
        return cholesky_psd(self.cov, self.jitter, return_jitter=True)

    @property
    def chol(self) -> np.ndarray:
        return self._factor[0]

    @property
    def applied_jitter(self) -> float:
        return self._factor[1]

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov).copy()

    def sample(self, rng, size: int) -> np.ndarray:
        eps = rng.standard_normal((size, self.dim))
        return self.mean + eps @ self.chol.T


def mvn_logpdf(y, d: GaussianDist) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != d.mean.shape:
        raise ValueError(f"y has shape {y.shape}, distribution dim is {d.dim}")
    return float(_logpdf_chol(jnp.asarray(y - d.mean), jnp.asarray(d.chol)))


def _logpdf_chol(r, L):
    alpha = jsl.solve_triangular(L, r, lower=True)
    return -0.5 * (r.size * LOG_2PI + chol_logdet(L) + jnp.sum(alpha**2))


def kl_chol(m_q, L_q, m_p, L_p):
    """KL(N(m_q, L_q L_q^T) || N(m_p, L_p L_p^T)) from lower factors."""
    n = m_q.shape[0]
    A = jsl.solve_triangular(L_p, L_q, lower=True)
    r = jsl.solve_triangular(L_p, m_p - m_q, lower=True)
    return 0.5 * (
        chol_logdet(L_p) - chol_logdet(L_q) - n + jnp.sum(A**2) + jnp.sum(r**2)
    )


def kl_mvn(q: GaussianDist, p: GaussianDist) -> float:
    """Closed-form KL(q || p) between two multivariate normals."""
    if q.dim != p.dim:
        raise ValueError(f"dimension mismatch: {q.dim} vs {p.dim}")
    return float(kl_chol(q.mean, jnp.asarray(q.chol), p.mean, jnp.asarray(p.chol)))


def _expected_loglik(y, mean, var_sum, sigma2):
    r = y - mean
    n = y.shape[0]
    return -0.5 * n * (LOG_2PI + jnp.log(sigma2)) - 0.5 * jnp.sum(r**2) / sigma2 - 0.5 * var_sum / sigma2


def expected_gauss_loglik(y, m: GaussianDist, sigma2: float) -> float:
    """E_{M ~ m}[sum_i log N(y_i | M_i, sigma2)], exactly.

    Equals the plain log-likelihood at the mean minus tr(cov) / (2 sigma2).
    """
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    y = np.asarray(y, dtype=float)
    if y.shape != m.mean.shape:
        raise ValueError(f"y has shape {y.shape}, distribution dim is {m.dim}")
    return float(_expected_loglik(y, m.mean, np.trace(m.cov), sigma2))


def exact_gp_posterior(k, X, y, sigma2: float, Xstar, jitter: float = 0.0) -> GaussianDist:
    """Conjugate GP posterior over f at ``Xstar``.

    ``k`` is a kernel object or a callable ``(A, B) -> Gram matrix``; the
    latter lets composite priors such as the GPX covariance reuse this.
    """
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    cov_fn = k if callable(k) else functools.partial(kernels.gram, k)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] < 1 or y.shape != (X.shape[0],):
        raise ValueError("need at least one training point and matching y")
    Knn = np.asarray(cov_fn(X, X))
    Ksn = np.asarray(cov_fn(Xstar, X))
    Kss = np.asarray(cov_fn(Xstar, Xstar))
    L = cholesky_psd(Knn + sigma2 * np.eye(X.shape[0]), jitter0=jitter)
    V = np.linalg.solve(L, Ksn.T)
    mean = V.T @ np.linalg.solve(L, y)
    cov = Kss - V.T @ V
    return GaussianDist(mean, 0.5 * (cov + cov.T))


def gp_log_evidence(C, y, sigma2: float) -> float:
    """log N(y | 0, C + sigma2 I)."""
    C = np.asarray(C, dtype=float)
    y = np.asarray(y, dtype=float)
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    L = cholesky_psd(C + sigma2 * np.eye(y.size), jitter0=0.0)
    return float(_logpdf_chol(jnp.asarray(y), jnp.asarray(L)))
