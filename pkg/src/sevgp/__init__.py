"""Self-explaining variational Gaussian processes.

Importing the package switches JAX to 64-bit floats; the Cholesky-heavy
objectives are not usable in single precision.
"""

import jax

jax.config.update("jax_enable_x64", True)

from .gaussian import (  # noqa: E402
    GaussianDist,
    NotPSDError,
    cholesky_psd,
    exact_gp_posterior,
    expected_gauss_loglik,
    gp_log_evidence,
    kl_mvn,
    mvn_logpdf,
)
from .model import (  # noqa: E402
    CoefficientBlock,
    SevgpModel,
    Variant,
    coeff_posterior,
    conditional_f_given_inducing,
    explain,
    gpx_prior_cov,
    init_model,
    lambda_matrix,
    load_model,
    predict_f,
    predict_y,
    save_model,
)
from .objectives import MeasurementSet, elbo_41, felbo_42, felbo_43, functional_kl, sample_augmentation  # noqa: E402
from .training import TrainConfig, fit  # noqa: E402

__version__ = "0.1.0"
