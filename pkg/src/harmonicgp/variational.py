"""Gaussian variational posterior over harmonic-feature coefficients.

The latent function is f(x) = Phi(x) u with prior u ~ N(0, Lambda), so the
features play the role of inducing variables. The posterior q(u) = N(m, LL^T)
is optimized by maximizing the ELBO

    sum_i E_q[log p(y_i | f_i)] - KL[q(u) || p(u)],

which is available in closed form for Gaussian likelihoods and via
Gauss-Hermite quadrature otherwise. The covariance factor is parameterized
as a lower triangle with a softplus-positive diagonal, so the optimization
is unconstrained while Sigma stays symmetric positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky
from scipy.optimize import minimize
from scipy.special import expit, gammaln, log_ndtr, ndtr

from .eigenbasis import evaluate_basis
from .errors import NumericalError
from .kernels import spectral_density, spectral_density_grad

_GH_NODES = 20
_gh_x, _gh_w = np.polynomial.hermite.hermgauss(_GH_NODES)
_gh_w = _gh_w / np.sqrt(np.pi)


@dataclass(frozen=True, eq=False)
class GaussianVariational:
    """Mean vector and lower-triangular covariance factor of q(u)."""

    mean: np.ndarray
    cov_factor: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        L = np.asarray(self.cov_factor, dtype=float)
        m = mean.shape[0]
        if L.shape != (m, m):
            raise ValueError(f"cov_factor shape {L.shape} does not match mean length {m}")
        if np.any(np.triu(L, 1) != 0):
            raise ValueError("cov_factor must be lower triangular")
        if np.any(np.diag(L) <= 0):
            raise ValueError("cov_factor must have a strictly positive diagonal")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov_factor", L)
        mean.setflags(write=False)
        L.setflags(write=False)

    @property
    def m(self):
        return self.mean.shape[0]

    def covariance(self):
        return self.cov_factor @ self.cov_factor.T


def prior_variational(prior_diag):
    """q equal to the prior N(0, diag(prior_diag))."""
    lam = np.asarray(prior_diag, dtype=float)
    return GaussianVariational(np.zeros(lam.shape[0]), np.diag(np.sqrt(lam)))


# ---------------------------------------------------------------------------
# Likelihoods
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianLikelihood:
    noise_variance: float

    def __post_init__(self):
        if not self.noise_variance > 0:
            raise ValueError("noise variance must be positive")

    def validate(self, y):
        return np.asarray(y, dtype=float).reshape(-1)

    def log_density(self, y, f):
        s2 = self.noise_variance
        return -0.5 * np.log(2.0 * np.pi * s2) - (y - f) ** 2 / (2.0 * s2)

    def point_expectation(self, y, mu, v):
        s2 = self.noise_variance
        return -0.5 * np.log(2.0 * np.pi * s2) - ((y - mu) ** 2 + v) / (2.0 * s2)

    def point_expectation_grads(self, y, mu, v):
        s2 = self.noise_variance
        e = self.point_expectation(y, mu, v)
        return e, (y - mu) / s2, np.full_like(mu, -0.5 / s2)


@dataclass(frozen=True)
class BernoulliLikelihood:
    """Binary labels in {0, 1}; logit link by default, probit available."""

    link: str = "logit"

    def __post_init__(self):
        if self.link not in ("logit", "probit"):
            raise ValueError(f"link must be 'logit' or 'probit', got {self.link!r}")

    def validate(self, y):
        y = np.asarray(y, dtype=float).reshape(-1)
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("Bernoulli labels must be 0 or 1")
        return y

    def log_density(self, y, f):
        z = np.where(y > 0.5, f, -f)
        if self.link == "logit":
            return -np.logaddexp(0.0, -z)
        return log_ndtr(z)

    def _gprime(self, y, f):
        sign = np.where(y > 0.5, 1.0, -1.0)
        z = sign * f
        if self.link == "logit":
            return sign * expit(-z)
        ratio = np.exp(_norm_logpdf(z) - log_ndtr(z))
        return sign * ratio

    def _gsecond(self, y, f):
        sign = np.where(y > 0.5, 1.0, -1.0)
        z = sign * f
        if self.link == "logit":
            return -expit(z) * expit(-z)
        ratio = np.exp(_norm_logpdf(z) - log_ndtr(z))
        return -ratio * (z + ratio)

    def point_expectation(self, y, mu, v):
        f = mu[:, None] + np.sqrt(2.0 * np.maximum(v, 0.0))[:, None] * _gh_x[None, :]
        return self.log_density(y[:, None], f) @ _gh_w

    def point_expectation_grads(self, y, mu, v):
        v = np.maximum(v, 0.0)
        root = np.sqrt(2.0 * v)
        f = mu[:, None] + root[:, None] * _gh_x[None, :]
        yb = y[:, None]
        e = self.log_density(yb, f) @ _gh_w
        gp = self._gprime(yb, f)
        dmu = gp @ _gh_w
        # exact derivative of the quadrature value; at v = 0 the chain factor
        # dv/dL vanishes, so the heat-equation form just keeps things finite
        small = root < 1e-14
        with np.errstate(divide="ignore", invalid="ignore"):
            dv = (gp * _gh_x[None, :]) @ _gh_w / root
        if small.any():
            dv[small] = 0.5 * (self._gsecond(yb, f) @ _gh_w)[small]
        return e, dmu, dv


@dataclass(frozen=True, eq=False)
class PoissonLikelihood:
    """Counts with log link: y ~ Poisson(exposure * exp(f)).

    ``exposure`` is the per-observation offset (bin area for gridded
    point-process counts); scalar or per-point array.
    """

    exposure: float | np.ndarray = 1.0

    def __post_init__(self):
        exp_arr = np.asarray(self.exposure, dtype=float)
        if (exp_arr <= 0).any():
            raise ValueError("exposure must be positive")

    def validate(self, y):
        y = np.asarray(y, dtype=float).reshape(-1)
        if (y < 0).any() or not np.equal(np.mod(y, 1), 0).all():
            raise ValueError("Poisson counts must be non-negative integers")
        return y

    def log_density(self, y, f):
        a = np.asarray(self.exposure, dtype=float)
        if a.ndim == 1 and f.ndim == 2:
            a = a[:, None]
        return y * (f + np.log(a)) - a * np.exp(f) - gammaln(y + 1.0)

    def point_expectation(self, y, mu, v):
        a = np.broadcast_to(np.asarray(self.exposure, dtype=float), mu.shape)
        return y * (mu + np.log(a)) - a * np.exp(mu + 0.5 * v) - gammaln(y + 1.0)

    def point_expectation_grads(self, y, mu, v):
        a = np.broadcast_to(np.asarray(self.exposure, dtype=float), mu.shape)
        rate = a * np.exp(mu + 0.5 * v)
        e = y * (mu + np.log(a)) - rate - gammaln(y + 1.0)
        return e, y - rate, -0.5 * rate


def _norm_logpdf(z):
    return -0.5 * (z * z + np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# ELBO building blocks
# ---------------------------------------------------------------------------


def latent_marginals(q, phi):
    """Per-point mean and variance of f = Phi u under q(u)."""
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    if phi.shape[1] != q.m:
        raise ValueError(f"feature matrix has {phi.shape[1]} columns, q has {q.m}")
    mu = phi @ q.mean
    zl = phi @ q.cov_factor
    v = np.einsum("ij,ij->i", zl, zl)
    return mu, v


def expected_loglik(lik, y, mu, v):
    """Sum over points of E_q[log p(y_i | f_i)].

    Closed form for Gaussian and Poisson likelihoods; 20-node Gauss-Hermite
    quadrature for Bernoulli.
    """
    y = lik.validate(y)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    if (v < 0).any():
        raise ValueError("latent variances must be non-negative")
    return float(np.sum(lik.point_expectation(y, mu, v)))


def expected_loglik_quadrature(lik, y, mu, v, num_nodes=_GH_NODES):
    """Generic Gauss-Hermite evaluation of the expected log-likelihood.

    Independent of the closed forms in :func:`expected_loglik`; useful as a
    cross-check for any likelihood exposing ``log_density``.
    """
    y = lik.validate(y)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    if (v < 0).any():
        raise ValueError("latent variances must be non-negative")
    x, w = np.polynomial.hermite.hermgauss(num_nodes)
    w = w / np.sqrt(np.pi)
    f = mu[:, None] + np.sqrt(2.0 * v)[:, None] * x[None, :]
    return float(np.sum(lik.log_density(y[:, None], f) @ w))


def kl_to_prior(q, prior_diag):
    """KL[q(u) || N(0, diag(prior_diag))], always >= 0."""
    lam = np.asarray(prior_diag, dtype=float).reshape(-1)
    if (lam <= 0).any():
        raise ValueError("prior variances must be positive")
    L = q.cov_factor
    sigma_diag = np.einsum("ij,ij->i", L, L)
    return float(
        0.5
        * (
            np.sum(sigma_diag / lam)
            + np.sum(q.mean**2 / lam)
            - q.m
            + np.sum(np.log(lam))
            - 2.0 * np.sum(np.log(np.diag(L)))
        )
    )


def elbo(q, phi, y, lik, prior_diag):
    """Evidence lower bound: expected log-likelihood minus KL to the prior."""
    mu, v = latent_marginals(q, phi)
    return expected_loglik(lik, y, mu, v) - kl_to_prior(q, prior_diag)


def optimal_gaussian_q(phi, y, noise_variance, prior_diag):
    """Closed-form ELBO maximizer for a Gaussian likelihood.

    Sigma = (Lambda^-1 + Phi^T Phi / noise)^-1 and
    mean = Sigma Phi^T y / noise, computed in whitened form so huge
    Lambda^-1 entries cannot overflow.
    """
    if not noise_variance > 0:
        raise ValueError("noise variance must be positive")
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    lam = np.asarray(prior_diag, dtype=float).reshape(-1)
    m = lam.shape[0]
    d = np.sqrt(lam)
    B = d[:, None] * (phi.T @ phi) * d[None, :]
    B[np.diag_indices_from(B)] += noise_variance
    try:
        cho = cho_factor(B, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"posterior factorization failed; condition estimate {np.linalg.cond(B):.3e}"
        ) from exc
    mean = d * cho_solve(cho, d * (phi.T @ y))
    sigma = noise_variance * (d[:, None] * cho_solve(cho, np.eye(m)) * d[None, :])
    sigma = 0.5 * (sigma + sigma.T)
    try:
        L = cholesky(sigma, lower=True)
    except np.linalg.LinAlgError:
        sigma[np.diag_indices_from(sigma)] += 1e-10 * np.trace(sigma) / m
        try:
            L = cholesky(sigma, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("posterior covariance is not positive definite") from exc
    return GaussianVariational(mean, L)


def predict_latent(q, basis, Xs):
    """Posterior mean and variance of f at arbitrary points.

    Rows of the feature matrix vanish identically on and outside the
    boundary, so predictions there are exactly (0, 0).
    """
    phis = evaluate_basis(basis, Xs)
    return latent_marginals(q, phis)


def bernoulli_probability(mu, v, link="logit"):
    """Predictive class-1 probability E_q[link(f)] by quadrature.

    Points with zero latent variance get link(mu) exactly, so boundary
    nodes (mu = v = 0) report exactly 0.5.
    """
    mu = np.asarray(mu, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    linkfun = expit if link == "logit" else ndtr
    out = linkfun(mu)
    spread = v > 0
    if spread.any():
        f = mu[spread, None] + np.sqrt(2.0 * v[spread])[:, None] * _gh_x[None, :]
        out[spread] = linkfun(f) @ _gh_w
    return out


# ---------------------------------------------------------------------------
# ELBO optimization
# ---------------------------------------------------------------------------


@dataclass
class FitOptions:
    """Options for :func:`fit_variational`.

    With ``learn_hyperparameters`` the kernel's (log variance,
    log lengthscale) join the optimization vector and the prior variances
    are re-derived from the spectral density at ``frequencies`` each step.
    """

    max_iters: int = 1000
    gtol: float = 1e-5
    learn_hyperparameters: bool = False
    kernel: object = None
    frequencies: np.ndarray = None


@dataclass(frozen=True)
class VariationalFit:
    q: GaussianVariational
    kernel: object
    elbo: float
    converged: bool
    n_iters: int


def _softplus(x):
    return np.logaddexp(0.0, x)


def _inv_softplus(y):
    out = np.empty_like(y)
    big = y > 30
    out[big] = y[big] + np.log1p(-np.exp(-y[big]))
    with np.errstate(divide="ignore"):
        out[~big] = np.log(np.expm1(y[~big]))
    return out


class _ElboProblem:
    """Unconstrained ELBO objective over (m_u, packed L, optional theta).

    The covariance factor is packed row-major over the lower triangle with
    the diagonal passed through a softplus. Exposed separately from
    :func:`fit_variational` so gradient checks can probe the exact
    objective the optimizer sees.
    """

    def __init__(self, phi, y, lik, prior_diag, opts):
        self.phi = np.atleast_2d(np.asarray(phi, dtype=float))
        self.m = self.phi.shape[1]
        self.lik = lik
        self.opts = opts
        self.y = lik.validate(y)
        if self.y.shape[0] != self.phi.shape[0]:
            raise ValueError(f"{self.phi.shape[0]} feature rows vs {self.y.shape[0]} observations")
        if self.y.shape[0] < 1:
            raise ValueError("fitting requires at least one observation")
        if opts.learn_hyperparameters:
            if opts.kernel is None or opts.frequencies is None:
                raise ValueError("hyperparameter learning needs opts.kernel and opts.frequencies")
            self.freq = np.asarray(opts.frequencies, dtype=float)
            self.lam0 = np.maximum(spectral_density(opts.kernel, self.freq), 1e-300)
        else:
            self.freq = None
            self.lam0 = np.maximum(np.asarray(prior_diag, dtype=float).reshape(-1), 1e-300)
        self.tril = np.tril_indices(self.m)
        self.diag_slots = np.nonzero(self.tril[0] == self.tril[1])[0]
        self.n_tri = self.tril[0].size

    def initial_point(self):
        """q = prior (m_u = 0, L = chol(Lambda)) and the current kernel."""
        p0 = np.zeros(self.m + self.n_tri + (2 if self.opts.learn_hyperparameters else 0))
        packed0 = np.zeros(self.n_tri)
        packed0[self.diag_slots] = _inv_softplus(np.sqrt(self.lam0))
        p0[self.m:self.m + self.n_tri] = packed0
        if self.opts.learn_hyperparameters:
            p0[self.m + self.n_tri] = np.log(self.opts.kernel.variance)
            p0[self.m + self.n_tri + 1] = np.log(self.opts.kernel.lengthscale)
        return p0

    def unpack(self, p):
        m = self.m
        mu_u = p[:m]
        packed = p[m:m + self.n_tri].copy()
        L = np.zeros((m, m))
        L[self.tril] = packed
        L[np.diag_indices(m)] = _softplus(packed[self.diag_slots])
        if self.opts.learn_hyperparameters:
            theta = p[m + self.n_tri:]
            kernel = self.opts.kernel.with_log_params(theta[0], theta[1])
            lam = np.maximum(spectral_density(kernel, self.freq), 1e-300)
        else:
            kernel, lam = self.opts.kernel, self.lam0
        return mu_u, packed, L, kernel, lam

    def negative_elbo(self, p):
        """(-ELBO, gradient) at the packed parameter vector."""
        m = self.m
        mu_u, packed, L, kernel, lam = self.unpack(p)
        mu = self.phi @ mu_u
        zl = self.phi @ L
        v = np.einsum("ij,ij->i", zl, zl)
        e, gmu, gv = self.lik.point_expectation_grads(self.y, mu, v)
        sigma_diag = np.einsum("ij,ij->i", L, L)
        ldiag = np.diag(L)
        kl = 0.5 * (
            np.sum(sigma_diag / lam)
            + np.sum(mu_u**2 / lam)
            - m
            + np.sum(np.log(lam))
            - 2.0 * np.sum(np.log(ldiag))
        )
        value = np.sum(e) - kl

        grad_mu = self.phi.T @ gmu - mu_u / lam
        grad_L = 2.0 * (self.phi.T @ (gv[:, None] * zl)) - L / lam[:, None]
        grad_L[np.diag_indices(m)] += 1.0 / ldiag
        packed_grad = grad_L[self.tril]
        packed_grad[self.diag_slots] *= expit(packed[self.diag_slots])

        pieces = [grad_mu, packed_grad]
        if self.opts.learn_hyperparameters:
            s, ds_dl = spectral_density_grad(kernel, self.freq)
            glog = np.stack([np.ones(m), ds_dl / s])
            dkl_dloglam = 0.5 * (1.0 - (sigma_diag + mu_u**2) / lam)
            pieces.append(glog @ (-dkl_dloglam))
        return -value, -np.concatenate(pieces)


def fit_variational(phi, y, lik, prior_diag, opts=None):
    """Maximize the ELBO over q (and optionally kernel hyperparameters).

    Deterministic L-BFGS with analytic gradients; init is q = prior.
    Stops when the gradient infinity-norm falls below ``opts.gtol`` or
    after ``opts.max_iters`` iterations. The ELBO never decreases across
    accepted steps.

    Returns
    -------
    VariationalFit with the optimized q, the (possibly updated) kernel,
    and the final ELBO.
    """
    opts = opts or FitOptions()
    problem = _ElboProblem(phi, y, lik, prior_diag, opts)
    p0 = problem.initial_point()

    f0, _ = problem.negative_elbo(p0)
    if not np.isfinite(f0):
        raise ValueError(f"ELBO is not finite at the initial point ({-f0})")

    result = minimize(
        problem.negative_elbo,
        p0,
        jac=True,
        method="L-BFGS-B",
        options={"gtol": opts.gtol, "maxiter": opts.max_iters, "ftol": 1e-14},
    )
    p = result.x if result.fun <= f0 else p0
    mu_u, _, L, kernel, _ = problem.unpack(p)
    return VariationalFit(
        q=GaussianVariational(mu_u, L),
        kernel=kernel,
        elbo=float(-min(result.fun, f0)),
        converged=bool(result.success),
        n_iters=int(result.nit),
    )
