"""The self-explaining variational posterior.

A model holds one :class:`CoefficientBlock` per feature column. Block ``k``
is a sparse variational GP over the coefficient function beta_k(x), with
inducing values ``u_k ~ N(a_k, L_k L_k^T)`` at locations ``Z_k``. The
target process is

    f(X) = sum_k beta_k(X) * X[:, k]

so every prediction splits exactly into per-feature contributions.

The moment functions are written in ``jax.numpy`` and accept models whose
array fields are tracers; the training objectives differentiate through
them.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import jax
import jax.numpy as jnp
import jax.scipy.linalg as jsl
import numpy as np

from . import kernels
from .gaussian import DEFAULT_JITTER, GaussianDist, jitter_cholesky

FORMAT_NAME = "sevgp-model"
FORMAT_VERSION = 1


class Variant(str, enum.Enum):
    """Which prior the variational posterior is fitted against."""

    V41 = "41"  # coefficient priors only (sparse GPX)
    V42 = "42"  # full-function prior, functional KL
    V43 = "43"  # both

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().lstrip("v").replace(".", "")
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown variant {value!r}; expected 41, 42 or 43") from None


def _concrete(x) -> bool:
    return not isinstance(x, jax.core.Tracer)


@dataclass(frozen=True)
class CoefficientBlock:
    """Variational unit for one varying coefficient."""

    Z: np.ndarray
    a: np.ndarray
    L: np.ndarray
    kernel: kernels.KernelSpec
    feature_index: int

    def __post_init__(self):
        if not all(_concrete(v) for v in (self.Z, self.a, self.L)):
            return
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        a = np.asarray(self.a, dtype=float).ravel()
        L = np.asarray(self.L, dtype=float)
        M = a.size
        if M < 1 or Z.shape[0] != M or L.shape != (M, M):
            raise ValueError(f"inconsistent block shapes: Z {Z.shape}, a {a.shape}, L {L.shape}")
        if np.any(np.triu(L, 1) != 0) or np.any(np.diag(L) <= 0):
            raise ValueError("L must be lower triangular with a positive diagonal")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "L", L)

    @property
    def M(self) -> int:
        return int(self.a.shape[0])

    @property
    def S(self):
        return self.L @ self.L.T


@dataclass(frozen=True)
class SevgpModel:
    blocks: tuple
    sigma2: float
    variant: Variant = Variant.V41
    full_prior_kernel: Optional[kernels.KernelSpec] = None
    # None ties p(u_k) to the block's own kernel (shared hyperparameters)
    coeff_prior_kernels: Optional[tuple] = None
    include_bias: bool = False
    jitter: float = DEFAULT_JITTER
    # diagonal regularizer for the full-prior Gram C_D; None means ``jitter``
    prior_jitter: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.coeff_prior_kernels is not None:
            object.__setattr__(self, "coeff_prior_kernels", tuple(self.coeff_prior_kernels))
            if len(self.coeff_prior_kernels) != len(self.blocks):
                raise ValueError("need one coefficient prior kernel per block")
        if not self.blocks:
            raise ValueError("model needs at least one block")
        if self.variant in (Variant.V42, Variant.V43) and self.full_prior_kernel is None:
            raise ValueError(f"variant {self.variant.value} needs a full_prior_kernel")
        if _concrete(self.sigma2) and not float(self.sigma2) >= 0:
            raise ValueError(f"sigma2 must be nonnegative, got {self.sigma2}")
        indices = sorted(b.feature_index for b in self.blocks)
        if indices != list(range(len(self.blocks))):
            raise ValueError(f"block feature indices must be 0..{len(self.blocks) - 1}, got {indices}")

    @property
    def n_features(self) -> int:
        """Number of raw input columns the model consumes."""
        return self.blocks[0].Z.shape[1]

    @property
    def full_prior_jitter(self):
        return self.jitter if self.prior_jitter is None else self.prior_jitter

    def prior_kernel(self, k: int) -> kernels.KernelSpec:
        if self.coeff_prior_kernels is None:
            return self.blocks[k].kernel
        return self.coeff_prior_kernels[k]

    def replace(self, **changes) -> "SevgpModel":
        return dataclasses.replace(self, **changes)


def design(model: SevgpModel, X):
    """Feature columns multiplied by the coefficients (ones prepended for a bias)."""
    X = jnp.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"expected an (N, {model.n_features}) input, got shape {X.shape}")
    if model.include_bias:
        X = jnp.concatenate([jnp.ones((X.shape[0], 1)), X], axis=1)
    if X.shape[1] != len(model.blocks):
        raise ValueError(f"{len(model.blocks)} blocks but {X.shape[1]} design columns")
    return X


class BlockTerms(NamedTuple):
    """Per-block quantities at a set of inputs X.

    A = Lm^{-1} K_MX with Lm = chol(K_MM + jitter I), lam_t = Lambda^T,
    B = L^T Lambda^T, so Lambda S Lambda^T = B^T B and
    Lambda (K_MM + jitter I) Lambda^T = A^T A.
    """

    A: jnp.ndarray
    lam_t: jnp.ndarray
    B: jnp.ndarray
    mean: jnp.ndarray


def block_terms(block: CoefficientBlock, X, jitter: float) -> BlockTerms:
    Kmm = kernels.gram(block.kernel, block.Z)
    Lm = jitter_cholesky(Kmm, jitter)
    Kmx = kernels.gram(block.kernel, block.Z, X)
    A = jsl.solve_triangular(Lm, Kmx, lower=True)
    lam_t = jsl.solve_triangular(Lm.T, A, lower=False)
    B = block.L.T @ lam_t
    return BlockTerms(A, lam_t, B, lam_t.T @ block.a)


def lambda_matrix(b: CoefficientBlock, X, jitter: float = DEFAULT_JITTER) -> np.ndarray:
    """Lambda = K_XM (K_MM + jitter I)^{-1}, through a Cholesky solve."""
    return np.asarray(block_terms(b, jnp.asarray(X, dtype=float), jitter).lam_t.T)


def coeff_moments(b: CoefficientBlock, X, jitter: float, full_cov: bool = True):
    """Mean and covariance (or variance) of q(beta_k) at X, plus the conditional part.

    Returns ``(mean, marginal, conditional)`` where ``conditional`` is
    K_XX - Lambda K_MM Lambda^T, the covariance left once u_k is known.
    """
    t = block_terms(b, X, jitter)
    if full_cov:
        cond = kernels.gram(b.kernel, X) - t.A.T @ t.A
        marg = cond + t.B.T @ t.B
    else:
        cond = kernels.gram_diag(b.kernel, X) - jnp.sum(t.A**2, axis=0)
        marg = cond + jnp.sum(t.B**2, axis=0)
    return t.mean, marg, cond


def coeff_posterior(b: CoefficientBlock, X, jitter: float = DEFAULT_JITTER) -> GaussianDist:
    mean, cov, _ = coeff_moments(b, jnp.asarray(X, dtype=float), jitter)
    cov = np.asarray(cov)
    return GaussianDist(np.asarray(mean), 0.5 * (cov + cov.T))


class FMoments(NamedTuple):
    mean: jnp.ndarray
    cov: jnp.ndarray  # marginal q(f); full matrix or diagonal
    cond: jnp.ndarray  # q(f | u) covariance; full matrix or diagonal
    coef: jnp.ndarray  # N x K coefficient means


def f_moments(model: SevgpModel, X, full_cov: bool = True) -> FMoments:
    """Moments of the composed target process at raw inputs X."""
    X = jnp.asarray(X, dtype=float)
    Phi = design(model, X)
    means, cov, cond = [], 0.0, 0.0
    for b in model.blocks:
        mu, marg, cnd = coeff_moments(b, X, model.jitter, full_cov)
        col = Phi[:, b.feature_index]
        scale = jnp.outer(col, col) if full_cov else col**2
        cov = cov + marg * scale
        cond = cond + cnd * scale
        means.append(mu)
    coef = jnp.stack([means[_order(model)[j]] for j in range(len(means))], axis=1)
    mean = jnp.sum(coef * Phi, axis=1)
    return FMoments(mean, cov, cond, coef)


def _order(model):
    # position in model.blocks of the block serving design column j
    return {b.feature_index: i for i, b in enumerate(model.blocks)}


def coefficients(model: SevgpModel, X) -> np.ndarray:
    """Posterior mean coefficient of every design column, N x K."""
    X = jnp.asarray(X, dtype=float)
    order = _order(model)
    cols = [block_terms(model.blocks[order[j]], X, model.jitter).mean for j in range(len(order))]
    return np.asarray(jnp.stack(cols, axis=1))


def _sym(C):
    C = np.asarray(C)
    return 0.5 * (C + C.T)


def predict_f(model: SevgpModel, X) -> GaussianDist:
    """Marginal q(f) at X (mean sum_k mu_k * X_k, cov sum_k Sigma_k * X_k X_k^T)."""
    mom = f_moments(model, X)
    return GaussianDist(np.asarray(mom.mean), _sym(mom.cov))


def predict_f_diag(model: SevgpModel, X):
    """Mean and pointwise variance of q(f), without the N x N covariance."""
    mom = f_moments(model, X, full_cov=False)
    return np.asarray(mom.mean), np.asarray(mom.cov)


def predict_y(model: SevgpModel, X) -> GaussianDist:
    d = predict_f(model, X)
    return GaussianDist(d.mean, d.cov + float(model.sigma2) * np.eye(d.dim))


def conditional_f_given_inducing(model: SevgpModel, X, u) -> GaussianDist:
    """q(f | u_1..u_K) at X, given inducing values for every block."""
    X = jnp.asarray(X, dtype=float)
    if len(u) != len(model.blocks):
        raise ValueError(f"need {len(model.blocks)} inducing vectors, got {len(u)}")
    Phi = design(model, X)
    mean, cov = 0.0, 0.0
    for b, u_k in zip(model.blocks, u):
        u_k = jnp.asarray(u_k, dtype=float)
        if u_k.shape != (b.M,):
            raise ValueError(f"inducing vector for block {b.feature_index} must have length {b.M}")
        t = block_terms(b, X, model.jitter)
        col = Phi[:, b.feature_index]
        mean = mean + (t.lam_t.T @ u_k) * col
        cov = cov + (kernels.gram(b.kernel, X) - t.A.T @ t.A) * jnp.outer(col, col)
    return GaussianDist(np.asarray(mean), _sym(cov))


def gpx_prior_cov(model: SevgpModel, X) -> np.ndarray:
    """Prior covariance of f under independent coefficient GPs: sum_k K_k * X_k X_k^T."""
    X = jnp.asarray(X, dtype=float)
    Phi = design(model, X)
    C = 0.0
    for i, b in enumerate(model.blocks):
        col = Phi[:, b.feature_index]
        C = C + kernels.gram(model.prior_kernel(i), X) * jnp.outer(col, col)
    return _sym(C)


class Contribution(NamedTuple):
    feature: int
    coeff_mean: float
    coeff_var: float
    contribution: float


def explain(model: SevgpModel, x) -> list:
    """Per-feature decomposition of the predictive mean at a single point."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {x.size}")
    mom = f_moments(model, x[None, :], full_cov=False)
    phi = np.asarray(design(model, x[None, :]))[0]
    coef = np.asarray(mom.coef)[0]
    order = _order(model)
    out = []
    for j in range(len(model.blocks)):
        b = model.blocks[order[j]]
        _, var, _ = coeff_moments(b, x[None, :], model.jitter, full_cov=False)
        out.append(Contribution(j, float(coef[j]), float(var[0]), float(coef[j] * phi[j])))
    return out


def contributions(model: SevgpModel, X) -> np.ndarray:
    """Row-wise contributions coef_k(x) * x_k, N x K; rows sum to the mean."""
    coef = coefficients(model, X)
    return coef * np.asarray(design(model, X))


# -- initialization ------------------------------------------------------------


def init_model(
    X,
    variant,
    kernel,
    n_inducing: int = 3,
    *,
    full_prior_kernel=None,
    coeff_prior_kernels=None,
    include_bias: bool = False,
    prior_jitter: Optional[float] = None,
    sigma2: float = 0.1,
    jitter: float = DEFAULT_JITTER,
    seed: int = 0,
) -> SevgpModel:
    """Model whose q(u_k) equals the coefficient prior, so initial KLs vanish.

    Inducing locations are drawn per block as a uniform subsample of the
    rows of X without replacement. ``kernel`` is a single kernel shared by all
    blocks or a sequence with one per block; ``n_inducing`` likewise.
    """
    X = np.asarray(X, dtype=float)
    n_blocks = X.shape[1] + int(include_bias)
    kern_list = list(kernel) if isinstance(kernel, (list, tuple)) else [kernel] * n_blocks
    m_list = list(n_inducing) if isinstance(n_inducing, (list, tuple)) else [n_inducing] * n_blocks
    if len(kern_list) != n_blocks or len(m_list) != n_blocks:
        raise ValueError(f"need {n_blocks} kernels and inducing counts")
    rng = np.random.default_rng(seed)
    blocks = []
    for k in range(n_blocks):
        M = m_list[k]
        if M > X.shape[0]:
            raise ValueError(f"block {k}: {M} inducing points but only {X.shape[0]} rows")
        Z = X[rng.choice(X.shape[0], size=M, replace=False)]
        prior = kern_list[k] if coeff_prior_kernels is None else coeff_prior_kernels[k]
        Kmm = np.asarray(kernels.gram(prior, Z))
        L = np.linalg.cholesky(Kmm + jitter * np.eye(M))
        blocks.append(CoefficientBlock(Z, np.zeros(M), L, kern_list[k], k))
    return SevgpModel(
        tuple(blocks),
        sigma2,
        Variant.parse(variant),
        full_prior_kernel=full_prior_kernel,
        coeff_prior_kernels=coeff_prior_kernels,
        include_bias=include_bias,
        jitter=jitter,
        prior_jitter=prior_jitter,
    )


def concrete(model: SevgpModel) -> SevgpModel:
    """Copy with every array and hyperparameter as a plain numpy/float value."""
    blocks = tuple(
        CoefficientBlock(
            np.asarray(b.Z, dtype=float),
            np.asarray(b.a, dtype=float),
            np.tril(np.asarray(b.L, dtype=float)),
            kernels.concrete(b.kernel),
            b.feature_index,
        )
        for b in model.blocks
    )
    full = None if model.full_prior_kernel is None else kernels.concrete(model.full_prior_kernel)
    return model.replace(blocks=blocks, sigma2=float(np.asarray(model.sigma2)), full_prior_kernel=full)


# -- persistence -----------------------------------------------------------------


def model_to_dict(model: SevgpModel) -> dict:
    model = concrete(model)
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "variant": model.variant.value,
        "sigma2": model.sigma2,
        "jitter": model.jitter,
        "include_bias": model.include_bias,
        "prior_jitter": model.prior_jitter,
        "full_prior_kernel": None if model.full_prior_kernel is None else kernels.format_kernel(model.full_prior_kernel),
        "coeff_prior_kernels": None
        if model.coeff_prior_kernels is None
        else [kernels.format_kernel(k) for k in model.coeff_prior_kernels],
        "blocks": [
            {
                "feature_index": b.feature_index,
                "kernel": kernels.format_kernel(b.kernel),
                "Z": b.Z.tolist(),
                "a": b.a.tolist(),
                "L": b.L.tolist(),
            }
            for b in model.blocks
        ],
    }


def model_from_dict(data: dict) -> SevgpModel:
    if data.get("format") != FORMAT_NAME:
        raise ValueError(f"not a {FORMAT_NAME} document")
    if data.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {data.get('version')!r}")
    blocks = tuple(
        CoefficientBlock(
            np.array(b["Z"], dtype=float),
            np.array(b["a"], dtype=float),
            np.array(b["L"], dtype=float),
            kernels.parse_kernel(b["kernel"]),
            int(b["feature_index"]),
        )
        for b in data["blocks"]
    )
    full = data.get("full_prior_kernel")
    coeff = data.get("coeff_prior_kernels")
    return SevgpModel(
        blocks,
        float(data["sigma2"]),
        Variant.parse(data["variant"]),
        full_prior_kernel=None if full is None else kernels.parse_kernel(full),
        coeff_prior_kernels=None if coeff is None else tuple(kernels.parse_kernel(k) for k in coeff),
        include_bias=bool(data.get("include_bias", False)),
        jitter=float(data.get("jitter", DEFAULT_JITTER)),
        prior_jitter=data.get("prior_jitter"),
    )


def save_model(path, model: SevgpModel, meta: Optional[dict] = None) -> None:
    """Write the model as JSON. Floats use shortest round-trip repr, so load is exact."""
    doc = model_to_dict(model)
    if meta:
        doc["meta"] = meta
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path):
    """Read a model file; returns ``(model, meta)``."""
    doc = json.loads(Path(path).read_text())
    return model_from_dict(doc), doc.get("meta", {})
