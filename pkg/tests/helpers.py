"""Random instances and explicit-inverse oracles shared by the tests."""

import numpy as np

from sevgp import kernels
from sevgp.model import CoefficientBlock, SevgpModel


def random_block(rng, X, M, k, kernel=None):
    Z = X[rng.choice(X.shape[0], size=M, replace=False)] + 0.1 * rng.standard_normal((M, X.shape[1]))
    L = np.tril(0.3 * rng.standard_normal((M, M)), -1) + np.diag(rng.uniform(0.2, 1.0, M))
    kern = kernel or kernels.Sum((kernels.Constant(1.0), kernels.SqExp(rng.uniform(0.3, 1.5), rng.uniform(0.5, 2.0))))
    return CoefficientBlock(Z, rng.standard_normal(M), L, kern, k)


def random_model(rng, N=8, K=2, M=3, variant="41", full=None, sigma2=None, **kw):
    X = rng.uniform(-2, 2, (N, K))
    blocks = tuple(random_block(rng, X, M, k) for k in range(K + int(kw.get("include_bias", False))))
    if variant != "41" and full is None:
        full = kernels.SqExp(1.0, 1.5)
    s2 = rng.uniform(0.1, 0.5) if sigma2 is None else sigma2
    model = SevgpModel(blocks, s2, variant, full_prior_kernel=full, **kw)
    y = np.sin(X).sum(1) + 0.3 * rng.standard_normal(N)
    return model, X, y


def gram(k, A, B=None):
    """Kernel matrix by explicit double loop over kernels.eval."""
    B = A if B is None else B
    return np.array([[kernels.eval(k, a, b) for b in B] for a in A])


def block_oracle(b, X, jitter):
    """Mean, marginal and conditional covariance of q(beta) via explicit inverses."""
    Kmm = gram(b.kernel, b.Z) + jitter * np.eye(b.M)
    Kxm = gram(b.kernel, X, b.Z)
    Kxx = gram(b.kernel, X)
    Lam = Kxm @ np.linalg.inv(Kmm)
    S = b.L @ b.L.T
    cond = Kxx - Lam @ Kmm @ Lam.T
    return Lam @ b.a, cond + Lam @ S @ Lam.T, cond


def f_oracle(model, X):
    Phi = np.hstack([np.ones((X.shape[0], 1)), X]) if model.include_bias else X
    mean, cov, cond = 0.0, 0.0, 0.0
    for b in model.blocks:
        mu, marg, cnd = block_oracle(b, X, model.jitter)
        col = Phi[:, b.feature_index]
        mean = mean + mu * col
        cov = cov + marg * np.outer(col, col)
        cond = cond + cnd * np.outer(col, col)
    return mean, cov, cond


def kl_oracle(m0, S0, m1, S1):
    """KL(N(m0,S0) || N(m1,S1)) with explicit inverse and slogdet."""
    S1i = np.linalg.inv(S1)
    d = m1 - m0
    return 0.5 * (np.trace(S1i @ S0) + d @ S1i @ d - m0.size + np.linalg.slogdet(S1)[1] - np.linalg.slogdet(S0)[1])
