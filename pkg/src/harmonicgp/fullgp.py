"""Dense baseline GP with per-observation noise, including exact zeros.

Used for benchmarking the harmonic method: the boundary condition is
emulated by feeding noise-free zero observations along the domain contour
into ordinary GP regression. Noise-free data make the covariance singular
in exact arithmetic, so a small jitter stabilizes the factorization.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalError
from .kernels import _kappa_of_distance, gram

_LOG_2PI = np.log(2.0 * np.pi)


class DenseGP:
    """Full GP with kernel ``kernel`` and default noise ``noise_variance``.

    ``jitter`` defaults to 1e-8 * kernel variance and escalates by factors
    of 10 (at most 3 times) if the factorization fails.
    """

    def __init__(self, kernel, noise_variance, jitter=None):
        if noise_variance < 0:
            raise ValueError(f"noise variance must be non-negative, got {noise_variance}")
        self.kernel = kernel
        self.noise_variance = float(noise_variance)
        self.jitter = 1e-8 * kernel.variance if jitter is None else float(jitter)
        if not self.jitter > 0:
            raise ValueError("jitter must be positive")

    def _noise_vector(self, n, noise):
        if noise is None:
            return np.full(n, self.noise_variance)
        noise = np.asarray(noise, dtype=float)
        if noise.ndim == 0:
            return np.full(n, float(noise))
        if noise.shape != (n,):
            raise ValueError(f"noise vector has shape {noise.shape}, expected ({n},)")
        if (noise < 0).any():
            raise ValueError("per-point noise must be non-negative")
        return noise

    def _factor(self, X, noise_vec):
        K = gram(self.kernel, X)
        jitter = self.jitter
        for _ in range(4):
            Kn = K + np.diag(noise_vec)
            Kn[np.diag_indices_from(Kn)] += jitter
            try:
                return cho_factor(Kn, lower=True)
            except np.linalg.LinAlgError:
                jitter *= 10.0
        raise NumericalError(
            f"dense GP factorization failed after jitter escalation to {jitter:.3e}"
        )


def gp_predict_full(model, X, y, noise, Xs):
    """Closed-form GP predictive mean and variance with per-point noise.

    Parameters
    ----------
    model : DenseGP
    X, y : training inputs (n, 2) and targets (n,)
    noise : per-point noise variances (n,), a scalar, or None for the
        model default; zeros are allowed (noise-free observations).
    Xs : test inputs (n_test, 2)

    Returns
    -------
    (mean, variance) arrays of length n_test.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    kss = _kappa_of_distance(model.kernel, np.zeros(Xs.shape[0]))  # stationary diagonal
    if X.size == 0:
        return np.zeros(Xs.shape[0]), kss
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} inputs vs {y.shape[0]} targets")
    noise_vec = model._noise_vector(y.shape[0], noise)

    cho = model._factor(X, noise_vec)
    ks = gram(model.kernel, Xs, X)
    alpha = cho_solve(cho, y)
    mean = ks @ alpha
    solved = cho_solve(cho, ks.T)
    var = kss - np.einsum("ij,ji->i", ks, solved)
    return mean, var


def nlml_full(model, X, y, noise=None):
    """Negative log marginal likelihood of the dense GP."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] < 1:
        raise ValueError("nlml requires at least one observation")
    noise_vec = model._noise_vector(y.shape[0], noise)
    cho = model._factor(X, noise_vec)
    alpha = cho_solve(cho, y)
    logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
    return float(0.5 * (logdet + y @ alpha + y.shape[0] * _LOG_2PI))
