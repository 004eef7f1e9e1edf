"""Gaussian processes constrained to arbitrarily-shaped 2D domains.

The prior is expanded in Laplacian eigenfunctions of the domain with zero
boundary values (harmonic features), computed numerically from a sparse
finite-difference stencil. The expansion both enforces the boundary
constraint and yields a reduced-rank model: O(n m^2) regression setup,
O(m^3) marginal-likelihood evaluations, and variational inference for
non-Gaussian likelihoods over the same features.
"""

from .domain import DomainGrid, boundary_points, load_mask, star_mask, star_mask_path, write_pgm
from .eigenbasis import (
    HarmonicBasis,
    correct_eigenvalues,
    evaluate_basis,
    load_basis,
    normalize_and_build,
    save_basis,
    solve_basis,
    solve_eigen,
)
from .errors import EigenSolveError, EmptyDomainError, MaskParseError, NumericalError
from .fullgp import DenseGP, gp_predict_full, nlml_full
from .kernels import KernelSpec, covariance, gram, spectral_density, spectral_density_grad
from .regression import (
    ReducedRankModel,
    approx_covariance,
    fit_hyperparameters,
    nlml,
    predict,
    prior_coefficients,
    prior_draw,
)
from .stencil import StencilMatrix, assemble_stencil
from .variational import (
    BernoulliLikelihood,
    FitOptions,
    GaussianLikelihood,
    GaussianVariational,
    PoissonLikelihood,
    bernoulli_probability,
    elbo,
    expected_loglik,
    expected_loglik_quadrature,
    fit_variational,
    kl_to_prior,
    latent_marginals,
    optimal_gaussian_q,
    predict_latent,
    prior_variational,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
