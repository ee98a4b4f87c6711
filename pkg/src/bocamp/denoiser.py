"""Bayes-optimal scalar denoiser for the Bernoulli-Gaussian prior.

Observation channel: ``u = x + omega`` with ``omega ~ N(0, a)``.  All expectations
over ``(x, h)`` are split over the two prior components.  The spike component is
a one-dimensional Gaussian integral in ``h``; the slab component is rewritten in
terms of ``u = x + h ~ N(0, 1/rho + a)`` with ``x | u`` Gaussian, so both reduce
to integrals of even functions on the half line.  These are evaluated with a
composite Gauss-Legendre rule whose panels resolve both the noise scale
``sqrt(a)`` (where the posterior weight switches) and the slab scale.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .model import Prior

GL_ORDER = 12
GH_ORDER = 61
# panel edges, in units of the fine (noise) and coarse (marginal) scales
_FINE_EDGES = np.arange(0.0, 10.5, 0.5)
_COARSE_EDGES = np.arange(0.0, 14.01, 0.75)
_COARSE_CUT = 14.0


@dataclass(frozen=True)
class DenoiserEval:
    value: np.ndarray
    derivative: np.ndarray


def _check_variance(a):
    if np.any(np.asarray(a) <= 0.0):
        raise ValueError("noise variance a must be positive")


def posterior_weight(u, a, prior: Prior):
    """P(x != 0 | u), computed from the log-likelihood ratio."""
    if prior.rho == 1.0:
        return np.ones_like(np.asarray(u, dtype=float) * a)
    u = np.asarray(u, dtype=float)
    s = prior.slab_variance
    llr = (
        np.log(prior.rho / (1.0 - prior.rho))
        + 0.5 * np.log(a / (s + a))
        + 0.5 * u * u * s / (a * (s + a))
    )
    return expit(llr)


def _eval(u, a, prior: Prior):
    s = prior.slab_variance
    u = np.asarray(u, dtype=float)
    pi = posterior_weight(u, a, prior)
    shrink = s / (s + a)
    value = pi * shrink * u
    derivative = shrink * pi * (1.0 + (1.0 - pi) * u * u * s / (a * (s + a)))
    return value, derivative


def denoise(u, a, prior: Prior) -> DenoiserEval:
    """Posterior mean E[x | x + omega = u] and its derivative in u."""
    _check_variance(a)
    value, derivative = _eval(u, a, prior)
    return DenoiserEval(value, derivative)


def posterior_variance(u, a, prior: Prior):
    """Var[x | u]; equals ``a * f'(u)`` for the posterior mean."""
    _check_variance(a)
    s = prior.slab_variance
    pi = posterior_weight(u, a, prior)
    m1 = np.asarray(u) * s / (s + a)
    v1 = s * a / (s + a)
    return pi * (v1 + m1 * m1) - (pi * m1) ** 2


@lru_cache(maxsize=None)
def _gl_panel(order: int):
    return np.polynomial.legendre.leggauss(order)


def half_line_rule(fine: float, coarse: float, order: int = GL_ORDER):
    """Nodes/weights for integrals over [0, inf) of ``N(u; 0, coarse**2) * F(u)``.

    Integrand content is assumed negligible beyond ``14 * coarse``.  The
    weights do not include the Gaussian density.
    """
    top = _COARSE_CUT * coarse
    edges = np.concatenate((fine * _FINE_EDGES, coarse * _COARSE_EDGES))
    edges = np.unique(edges[edges <= top])
    if edges[-1] < top:
        edges = np.append(edges, top)
    lo, hi = edges[:-1], edges[1:]
    # drop slivers produced by near-coincident edges
    keep = hi - lo > 1e-9 * top
    lo, hi = lo[keep], hi[keep]
    x, w = _gl_panel(order)
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def _gauss_pdf(u, v):
    return np.exp(-0.5 * u * u / v) / np.sqrt(2.0 * np.pi * v)


def _branch_integrals(a: float, prior: Prior, spike_fn, slab_fn):
    """(1 - rho) E_h[spike_fn(h)] + rho E_u[slab_fn(u)] under the two components."""
    s = prior.slab_variance
    total = 0.0
    if prior.rho < 1.0:
        nodes, weights = half_line_rule(np.sqrt(a), np.sqrt(a))
        total += (1.0 - prior.rho) * 2.0 * np.sum(weights * _gauss_pdf(nodes, a) * spike_fn(nodes))
    nodes, weights = half_line_rule(np.sqrt(a), np.sqrt(s + a))
    total += prior.rho * 2.0 * np.sum(weights * _gauss_pdf(nodes, s + a) * slab_fn(nodes))
    return float(total)


def mmse(a: float, prior: Prior) -> float:
    """E[(f(x + h; a) - x)^2] with h ~ N(0, a)."""
    _check_variance(a)
    s = prior.slab_variance
    v1 = s * a / (s + a)

    def spike(h):
        f, _ = _eval(h, a, prior)
        return f * f

    def slab(u):
        f, _ = _eval(u, a, prior)
        m1 = u * s / (s + a)
        return (f - m1) ** 2 + v1

    return _branch_integrals(a, prior, spike, slab)


def xi_bar(a: float, prior: Prior) -> float:
    """E[f'(x + h; a)], the mean denoiser derivative."""
    _check_variance(a)

    def deriv(u):
        return _eval(u, a, prior)[1]

    return _branch_integrals(a, prior, deriv, deriv)


@lru_cache(maxsize=None)
def _gh_standard(order: int):
    x, w = np.polynomial.hermite.hermgauss(order)
    return np.sqrt(2.0) * x, w / np.sqrt(np.pi)


def cross_mse(a_tt, a_cross, a_other, prior: Prior, gh_order: int = GH_ORDER):
    """E[(f(x + h; a_tt) - x) (g(x + h'; a_other) - x)] for jointly Gaussian (h, h').

    ``Cov(h, h) = a_tt``, ``Cov(h, h') = a_cross``, ``Cov(h', h') = a_other``.
    ``a_cross`` and ``a_other`` may be arrays (evaluated as a batch sharing
    ``a_tt``).  ``a_other=None`` selects the convention ``g = 0``, giving
    ``E[x (x - f(x + h))]``.

    The integral runs over ``u = x + h`` (composite rule) with an inner
    Gauss-Hermite average over ``w = x + h'`` conditioned on ``u``.  The inner
    expectation of ``(x - m) g(w)`` uses Stein's identity, so a degenerate
    conditional law (perfect correlation) needs no special casing.
    """
    _check_variance(a_tt)
    s = prior.slab_variance
    a = float(a_tt)
    m1c = s / (s + a)
    v1 = s * a / (s + a)

    if a_other is None:
        def spike(h):
            return np.zeros_like(h)

        def slab(u):
            f, _ = _eval(u, a, prior)
            m1 = u * m1c
            return v1 - (f - m1) * m1

        return _branch_integrals(a, prior, spike, slab)

    scalar = np.ndim(a_cross) == 0 and np.ndim(a_other) == 0
    c = np.atleast_1d(np.asarray(a_cross, dtype=float))[:, None, None]
    b = np.atleast_1d(np.asarray(a_other, dtype=float))[:, None, None]
    _check_variance(b)
    resid = b - c * c / a
    if np.any(resid < -1e-10 * np.maximum(b, a)):
        raise np.linalg.LinAlgError("covariance matrix is not positive semidefinite")
    resid = np.maximum(resid, 0.0)
    lam = c / a
    zn, zw = _gh_standard(gh_order)

    def inner(mean, var):
        w = mean + np.sqrt(var) * zn
        g, dg = _eval(w, b, prior)
        return np.sum(zw * g, axis=-1), np.sum(zw * dg, axis=-1)

    fine = np.sqrt(min(a, float(np.min(b))))
    total = np.zeros(c.shape[0])
    if prior.rho < 1.0:
        nodes, weights = half_line_rule(fine, np.sqrt(a))
        f, _ = _eval(nodes, a, prior)
        eg, _ = inner(lam * nodes[None, :, None], resid)
        integrand = f[None, :] * eg
        total += (1.0 - prior.rho) * 2.0 * np.sum((weights * _gauss_pdf(nodes, a))[None, :] * integrand, axis=1)
    nodes, weights = half_line_rule(fine, np.sqrt(s + a))
    f, _ = _eval(nodes, a, prior)
    m1 = nodes * m1c
    cov_xw = (1.0 - lam[..., 0]) * v1
    mean_w = (1.0 - lam) * m1[None, :, None] + lam * nodes[None, :, None]
    var_w = (1.0 - lam) ** 2 * v1 + resid
    eg, edg = inner(mean_w, var_w)
    integrand = (f - m1)[None, :] * (eg - m1[None, :]) + v1 - cov_xw * edg
    total += prior.rho * 2.0 * np.sum((weights * _gauss_pdf(nodes, s + a))[None, :] * integrand, axis=1)
    return float(total[0]) if scalar else total
