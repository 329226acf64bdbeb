"""Logistic-normal integrals by Gauss-Hermite quadrature.

The binary-outcome / continuous-mediator measures need

    p(mu, s) = E[expit(mu + s Z)],   Z ~ N(0, 1),

on the log-odds scale, i.e. ``log p - log(1 - p)``, with good *relative*
accuracy in both tails.  After the usual substitution the integrand is
``expit(mu + c t) exp(-t^2)`` with ``c = s sqrt(2)``.  The logistic factor
has poles at ``mu + c t = i pi (2k + 1)``; once ``c`` is moderate they sit
close to the real axis and plain Gauss-Hermite converges slowly (about
1e-4 at 40 nodes for ``s ~ 5``).  Two devices fix this:

* the nearest poles are subtracted from the integrand and their Gaussian
  integrals added back in closed form through the Faddeeva function, which
  leaves a remainder that 40 nodes integrate to roundoff;
* the subtraction is accurate in absolute terms only, so far-tail values are
  mapped back toward the centre with the exponential-tilt identity
  ``p(mu, s) = exp(mu + s^2/2) p(-mu - s^2, s)``.

When the poles are far from the axis (small ``s``) the plain rule is
evaluated in log space with log-sum-exp, which is exact enough on its own
and cannot overflow.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import log_expit, logsumexp, wofz

from .exceptions import NodeCountError

DEFAULT_NODES = 40
_SQRT2 = np.sqrt(2.0)
_SQRT_PI = np.sqrt(np.pi)
# imaginary distance (t units) of the nearest pole beyond which plain GHQ is used
_PLAIN_POLE_DISTANCE = 2.5
# distance of the nearest *remaining* pole after subtraction
_TARGET_POLE_DISTANCE = 4.0


@lru_cache(maxsize=32)
def hermite_rule(nodes: int):
    """Nodes and weights for int f(t) exp(-t^2) dt, weights summing to one."""
    if int(nodes) != nodes or nodes < 2:
        raise NodeCountError(f"need at least 2 quadrature nodes, got {nodes!r}")
    t, w = np.polynomial.hermite.hermgauss(int(nodes))
    w = w / _SQRT_PI
    t.setflags(write=False)
    w.setflags(write=False)
    logw = np.log(w)
    logw.setflags(write=False)
    return t, w, logw


def _pole_corrected(mu, c, nodes):
    """p(mu, c / sqrt 2) with the nearest poles integrated analytically."""
    t, w, _ = hermite_rule(nodes)
    n_poles = max(1, int(np.ceil((_TARGET_POLE_DISTANCE * c / np.pi - 1.0) / 2.0)))
    a = np.pi * (2 * np.arange(n_poles) + 1)
    z = mu + c * t
    # expit(z) minus the conjugate pole pairs 1/(z - i a) + 1/(z + i a)
    pole_sum = (2.0 * z[:, None] / (z[:, None] ** 2 + a[None, :] ** 2)).sum(axis=1)
    remainder = w @ (np.exp(log_expit(z)) - pole_sum)
    p_k = (1j * a - mu) / c
    added = -(2.0 * _SQRT_PI / c) * np.imag(wofz(p_k)).sum()
    return remainder + added


def log_expit_normal(mu: float, s: float, nodes: int = DEFAULT_NODES) -> float:
    """log E[expit(mu + s Z)] for standard normal Z."""
    t, w, logw = hermite_rule(nodes)
    s = abs(float(s))
    mu = float(mu)
    c = s * _SQRT2
    if c * _PLAIN_POLE_DISTANCE <= np.pi:
        return float(logsumexp(logw + log_expit(mu + c * t)))
    if mu >= 0.0:
        return float(np.log1p(-_pole_corrected(-mu, c, nodes)))
    if mu < -0.5 * s * s:
        return mu + 0.5 * s * s + log_expit_normal(-mu - s * s, s, nodes)
    return float(np.log(_pole_corrected(mu, c, nodes)))


def logit_expit_normal(mu: float, s: float, nodes: int = DEFAULT_NODES) -> float:
    """logit E[expit(mu + s Z)]; odd in ``mu``."""
    return log_expit_normal(mu, s, nodes) - log_expit_normal(-mu, s, nodes)


def logistic_normal_ratio(a, sigma2, b, beta2, nodes=DEFAULT_NODES) -> float:
    """Log ratio of the two logistic-normal integrals.

    Returns ``log( int e^{beta2 m} tau(m) dm / int tau(m) dm )`` where
    ``tau(m) = exp(a m / sigma2 - m^2 / (2 sigma2)) / (1 + exp(b + beta2 m))``.
    Since ``tau`` is a N(a, sigma2) density (up to a constant) times
    ``expit(-(b + beta2 m))``, the ratio equals
    ``logit E[expit(b + beta2 M)] - b`` with ``M ~ N(a, sigma2)``.
    """
    hermite_rule(nodes)  # validates the node count
    if beta2 == 0.0:
        return 0.0
    if not sigma2 > 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2!r}")
    mu = b + beta2 * a
    s = abs(beta2) * np.sqrt(sigma2)
    return logit_expit_normal(mu, s, nodes) - b
