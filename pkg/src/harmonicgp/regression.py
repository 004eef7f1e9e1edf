"""Reduced-rank GP regression with harmonic features.

The covariance is approximated by sum_j s(lbar_j) phi_j(x) phi_j(x'), i.e.
K ~= Phi Lambda Phi^T with Lambda_jj the kernel's spectral density at the
j-th corrected eigenfrequency. Training products Phi^T Phi and Phi^T y are
cached once per dataset (O(n m^2)); every likelihood or prediction
evaluation afterwards costs O(m^3).

All m x m solves run in the whitened form B = D Phi^T Phi D + noise * I
with D = sqrt(Lambda), which stays well-posed even when high-frequency
spectral weights underflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize

from .eigenbasis import evaluate_basis
from .errors import NumericalError
from .kernels import KernelSpec, spectral_density, spectral_density_grad

_LOG_2PI = np.log(2.0 * np.pi)


class ReducedRankModel:
    """Harmonic-feature GP with Gaussian observation noise.

    Parameters
    ----------
    basis : HarmonicBasis
    kernel : KernelSpec
    noise_variance : float, > 0
    """

    def __init__(self, basis, kernel, noise_variance):
        if not noise_variance > 0:
            raise ValueError(f"noise variance must be positive, got {noise_variance}")
        self.basis = basis
        self.kernel = kernel
        self.noise_variance = float(noise_variance)

    def spectral_weights(self):
        """Prior coefficient variances Lambda_jj = s(lbar_j)."""
        return spectral_density(self.kernel, self.basis.frequencies())

    def bind(self, X, y):
        """Cache training products for a dataset; returns a bound model."""
        return BoundReducedRank(self, X, y)

    def with_theta(self, theta):
        """New model with (log variance, log lengthscale, log noise) = theta."""
        kernel = self.kernel.with_log_params(theta[0], theta[1])
        return ReducedRankModel(self.basis, kernel, float(np.exp(theta[2])))

    @property
    def theta(self):
        """Current hyperparameters as (log variance, log lengthscale, log noise)."""
        return np.array(
            [
                np.log(self.kernel.variance),
                np.log(self.kernel.lengthscale),
                np.log(self.noise_variance),
            ]
        )


class BoundReducedRank:
    """A :class:`ReducedRankModel` bound to a training set.

    Immutable; holds the dataset-dependent caches (Phi, Phi^T Phi, Phi^T y)
    that do not depend on hyperparameters, so hyperparameter search rebuilds
    only m x m quantities.
    """

    def __init__(self, model, X, y, _cache=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.size == 0:
            X = X.reshape(0, 2)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs vs {y.shape[0]} targets")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValueError("training inputs and targets must be finite")
        self.model = model
        self.X = X
        self.y = y
        self.n = y.shape[0]
        if _cache is None:
            phi = evaluate_basis(model.basis, X) if self.n else np.zeros((0, model.basis.m))
            _cache = (phi, phi.T @ phi, phi.T @ y, float(y @ y))
        self.phi, self._gram, self._phi_t_y, self._yty = _cache

    def _rebound(self, model):
        return BoundReducedRank(
            model, self.X, self.y, _cache=(self.phi, self._gram, self._phi_t_y, self._yty)
        )

    def _factor(self):
        """Cholesky of B = D Phi^T Phi D + noise I, with one jitter retry."""
        lam = self.model.spectral_weights()
        d = np.sqrt(lam)
        B = d[:, None] * self._gram * d[None, :]
        B[np.diag_indices_from(B)] += self.model.noise_variance
        try:
            cho = cho_factor(B, lower=True)
        except np.linalg.LinAlgError:
            jitter = 1e-10 * np.trace(B) / B.shape[0]
            B[np.diag_indices_from(B)] += jitter
            try:
                cho = cho_factor(B, lower=True)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(
                    "factorization of the m x m system failed; condition estimate "
                    f"{np.linalg.cond(B):.3e}"
                ) from exc
        return lam, d, B, cho

    def predict(self, Xs):
        """Predictive mean and variance at test points, shape (n_test,) each."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        if not np.isfinite(Xs).all():
            raise ValueError("test inputs must be finite")
        _, d, _, cho = self._factor()
        sn2 = self.model.noise_variance
        beta = cho_solve(cho, d * self._phi_t_y)
        phis = evaluate_basis(self.model.basis, Xs)
        mean = phis @ (d * beta)
        t = solve_triangular(cho[0], (phis * d[None, :]).T, lower=True)
        var = sn2 * np.einsum("ij,ij->j", t, t)
        return mean, var

    def nlml(self):
        """Negative log marginal likelihood of the bound data."""
        if self.n < 1:
            raise ValueError("nlml requires at least one observation")
        _, d, _, cho = self._factor()
        sn2 = self.model.noise_variance
        m = self.model.basis.m
        b = d * self._phi_t_y
        beta = cho_solve(cho, b)
        logdet_b = 2.0 * np.sum(np.log(np.diag(cho[0])))
        return float(
            0.5 * (self.n - m) * np.log(sn2)
            + 0.5 * logdet_b
            + 0.5 * self.n * _LOG_2PI
            + 0.5 / sn2 * (self._yty - b @ beta)
        )

    def nlml_gradient(self):
        """(nlml, d nlml / d theta) with theta = (log variance, log lengthscale, log noise)."""
        lam, d, B, cho = self._factor()
        sn2 = self.model.noise_variance
        m = self.model.basis.m
        b = d * self._phi_t_y
        beta = cho_solve(cho, b)
        b_inv = cho_solve(cho, np.eye(m))
        quad = self._yty - b @ beta

        value = float(
            0.5 * (self.n - m) * np.log(sn2)
            + np.sum(np.log(np.diag(cho[0])))
            + 0.5 * self.n * _LOG_2PI
            + 0.5 / sn2 * quad
        )

        # d log Lambda_jj / d theta_k; spectral_density_grad returns ds/dlog-theta
        freq = self.model.basis.frequencies()
        ds_dv, ds_dl = spectral_density_grad(self.model.kernel, freq)
        s = spectral_density(self.model.kernel, freq)
        glog = np.stack([ds_dv / s, ds_dl / s])  # (2, m)

        core = 1.0 - sn2 * np.diag(b_inv) - beta**2
        grad_kernel = 0.5 * glog @ core
        grad_noise = (
            0.5 * (self.n - m)
            + 0.5 * sn2 * np.trace(b_inv)
            - 0.5 / sn2 * quad
            + 0.5 * beta @ beta
        )
        return value, np.array([grad_kernel[0], grad_kernel[1], grad_noise])

    def fit(self, init_theta=None, gtol=1e-6, max_iters=1000):
        """Minimize the NLML over log hyperparameters with L-BFGS.

        Only the spectral weights depend on theta; the cached feature
        products are reused across all evaluations. Returns a new bound
        model at the optimum (never worse than the start).
        """
        if self.n < 2:
            raise ValueError("hyperparameter fitting requires at least two observations")
        theta0 = self.model.theta if init_theta is None else np.asarray(init_theta, dtype=float)

        def objective(theta):
            return self._rebound(self.model.with_theta(theta)).nlml_gradient()

        f0, _ = objective(theta0)
        if not np.isfinite(f0):
            raise ValueError(f"NLML is not finite at the initial hyperparameters ({f0})")
        result = minimize(
            objective,
            theta0,
            jac=True,
            method="L-BFGS-B",
            options={"gtol": gtol, "maxiter": max_iters},
        )
        theta = result.x if result.fun <= f0 else theta0
        return self._rebound(self.model.with_theta(theta))


# ---------------------------------------------------------------------------
# Functional API
# ---------------------------------------------------------------------------


def predict(model, X, y, Xs):
    """Predictive mean and variance at ``Xs`` given training data (X, y)."""
    return model.bind(X, y).predict(Xs)


def nlml(model, X, y):
    """Negative log marginal likelihood of (X, y) under the model."""
    return model.bind(X, y).nlml()


def fit_hyperparameters(model, X, y, init_theta=None, gtol=1e-6, max_iters=1000):
    """Optimize (log variance, log lengthscale, log noise); returns the refit model."""
    return model.bind(X, y).fit(init_theta, gtol, max_iters).model


def approx_covariance(model, x1, x2):
    """Reduced-rank covariance sum_j s(lbar_j) phi_j(x) phi_j(x').

    Accepts single points (returns a float) or arrays of shape (n, 2)
    (returns the (n1, n2) cross-covariance matrix).
    """
    scalar = np.asarray(x1).ndim == 1 and np.asarray(x2).ndim == 1
    p1 = evaluate_basis(model.basis, x1)
    p2 = evaluate_basis(model.basis, x2)
    out = (p1 * model.spectral_weights()[None, :]) @ p2.T
    return float(out[0, 0]) if scalar else out


def prior_coefficients(basis, kernel, rng):
    """Draw feature coefficients w ~ N(0, Lambda) from the given generator."""
    lam = spectral_density(kernel, basis.frequencies())
    return np.sqrt(lam) * rng.standard_normal(basis.m)


def prior_draw(basis, kernel, seed):
    """Sample the constrained prior at all interior grid nodes.

    Deterministic per seed; exterior values are identically zero by
    construction (the basis vanishes there).
    """
    rng = np.random.default_rng(seed)
    w = prior_coefficients(basis, kernel, rng)
    return basis.node_features() @ w
