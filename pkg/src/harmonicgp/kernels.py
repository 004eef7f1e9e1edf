"""Stationary covariance functions, spectral densities, and their gradients.

Supported families: squared exponential and half-integer Matern
(nu = 1/2, 3/2, 5/2), all through closed forms. Hyperparameter gradients
are taken w.r.t. (log variance, log lengthscale) since optimization runs
in log space.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist

FAMILIES = ("se", "matern12", "matern32", "matern52")
_NU = {"matern12": 0.5, "matern32": 1.5, "matern52": 2.5}


@dataclass(frozen=True)
class KernelSpec:
    """Covariance family with magnitude and lengthscale hyperparameters.

    Attributes
    ----------
    family : str
        One of "se", "matern12", "matern32", "matern52".
    variance : float
        Output scale sigma_f^2 (> 0).
    lengthscale : float
        Input scale (> 0), in the domain's length units.
    d : int
        Input dimension; 2 for domains, 1 allowed for unit tests.
    """

    family: str
    variance: float = 1.0
    lengthscale: float = 1.0
    d: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if self.d not in (1, 2):
            raise ValueError(f"d must be 1 or 2, got {self.d}")

    @property
    def nu(self):
        """Matern smoothness, or None for the squared exponential."""
        return _NU.get(self.family)

    def with_log_params(self, log_variance, log_lengthscale):
        return replace(
            self, variance=float(np.exp(log_variance)), lengthscale=float(np.exp(log_lengthscale))
        )


def covariance(spec, r):
    """Evaluate kappa(r) for displacement vectors r of shape (..., d)."""
    r = np.asarray(r, dtype=float)
    dist = np.linalg.norm(np.atleast_1d(r), axis=-1) if r.ndim else np.abs(r)
    return _kappa_of_distance(spec, dist)


def _kappa_of_distance(spec, dist):
    s2 = spec.variance
    t = dist / spec.lengthscale
    if spec.family == "se":
        return s2 * np.exp(-0.5 * t**2)
    if spec.family == "matern12":
        return s2 * np.exp(-t)
    if spec.family == "matern32":
        a = np.sqrt(3.0) * t
        return s2 * (1.0 + a) * np.exp(-a)
    a = np.sqrt(5.0) * t
    return s2 * (1.0 + a + a**2 / 3.0) * np.exp(-a)


def gram(spec, X1, X2=None):
    """Kernel matrix kappa(x, x') for point sets of shape (n, d)."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = X1 if X2 is None else np.atleast_2d(np.asarray(X2, dtype=float))
    return _kappa_of_distance(spec, cdist(X1, X2))


def spectral_density(spec, omega):
    """Spectral density s(omega) at radial frequencies omega >= 0.

    SE: sigma_f^2 (2 pi l^2)^(d/2) exp(-omega^2 l^2 / 2).
    Matern: sigma_f^2 [Gamma(nu+d/2)/Gamma(nu)] 2^d pi^(d/2) (2nu)^nu
            l^(-2nu) (2nu/l^2 + omega^2)^(-(2nu+d)/2).
    """
    omega = np.asarray(omega, dtype=float)
    if (omega < 0).any():
        raise ValueError("omega must be non-negative")
    s2, ell, d = spec.variance, spec.lengthscale, spec.d
    if spec.family == "se":
        return s2 * (2.0 * np.pi * ell**2) ** (d / 2.0) * np.exp(-0.5 * omega**2 * ell**2)
    nu = spec.nu
    from scipy.special import gamma

    const = (
        s2
        * (gamma(nu + d / 2.0) / gamma(nu))
        * 2.0**d
        * np.pi ** (d / 2.0)
        * (2.0 * nu) ** nu
        / ell ** (2.0 * nu)
    )
    return const * (2.0 * nu / ell**2 + omega**2) ** (-(2.0 * nu + d) / 2.0)


def spectral_density_grad(spec, omega):
    """Partials of s(omega) w.r.t. (log variance, log lengthscale).

    Returns
    -------
    (ds_dlog_variance, ds_dlog_lengthscale), each shaped like omega.
    """
    omega = np.asarray(omega, dtype=float)
    s = spectral_density(spec, omega)
    ell, d = spec.lengthscale, spec.d
    if spec.family == "se":
        dlog_ell = d - (omega * ell) ** 2
    else:
        nu = spec.nu
        b = 2.0 * nu / ell**2
        dlog_ell = -2.0 * nu + (2.0 * nu + d) * b / (b + omega**2)
    return s, s * dlog_ell
