"""Onsager tap coefficients for convolutional AMP.

A :class:`TapSet` holds ``g`` (the Onsager taps), their rational split
``G(z) = P(z) / Q(z)``, the extra taps ``theta`` with ``theta_0 = 1`` and
``r = q * theta``.  Generating functions are power series in ``1/z``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import mpmath
import numpy as np

# verification points for the generating-function condition
DEFAULT_Z = (1.25, 1.5, 2.0, 3.0, 5.0)


def convolve(a, b, t: int, i: int = 0, j: int = 0) -> float:
    """sum_{tau=0}^{t} a[tau + i] b[t - tau + j], with zero outside the stored range."""
    total = 0.0
    for tau in range(t + 1):
        total += _at(a, tau + i) * _at(b, t - tau + j)
    return total


def _at(seq, k: int) -> float:
    if k < 0 or k >= len(seq):
        return 0.0
    return float(seq[k])


def rational_taps(p, q) -> np.ndarray:
    """g with G = P / Q, i.e. g_t = p_t - sum_{tau=1}^{t} q_tau g_{t - tau}."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    g = np.zeros(len(p))
    for t in range(len(p)):
        g[t] = p[t] - np.dot(q[1 : t + 1], g[t - 1 :: -1][:t]) if t else p[0]
    return g


def series_product(a, b, n: int) -> np.ndarray:
    return np.convolve(a, b)[:n]


@dataclass(frozen=True)
class TapSet:
    g: np.ndarray
    p: np.ndarray
    q: np.ndarray
    theta: np.ndarray
    r: np.ndarray

    @classmethod
    def build(cls, p, q, theta, g=None) -> "TapSet":
        p = np.asarray(p, dtype=float)
        n = len(p)
        q = _pad(q, n)
        theta = _pad(theta, n)
        if g is None:
            g = rational_taps(p, q)
        g = _pad(g, n)
        r = series_product(q, theta, n)
        return cls(g, p, q, theta, r)

    @property
    def horizon(self) -> int:
        return len(self.g) - 1

    def direct(self) -> "TapSet":
        """Same G(z) written with p = g and q = (1, 0, ...)."""
        q = np.zeros_like(self.g)
        q[0] = 1.0
        return TapSet.build(self.g, q, self.theta, g=self.g)

    def truncated(self, horizon: int) -> "TapSet":
        n = horizon + 1
        if n > len(self.g):
            raise ValueError(f"tap horizon {self.horizon} shorter than requested {horizon}")
        return TapSet(self.g[:n], self.p[:n], self.q[:n], self.theta[:n], self.r[:n])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("g", "p", "q", "theta", "r")} | {"horizon": self.horizon}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "TapSet":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("g", "p", "q", "theta", "r")))

    @classmethod
    def from_json(cls, s: str) -> "TapSet":
        return cls.from_dict(json.loads(s))


def _pad(seq, n: int) -> np.ndarray:
    seq = np.asarray(seq, dtype=float)
    out = np.zeros(n)
    m = min(n, len(seq))
    out[:m] = seq[:m]
    return out


def theta_schedule(theta: float, a_s: float, d_s: float, horizon: int) -> np.ndarray:
    """(1, -theta d_s / a_s, theta, 0, ...), so that Theta(a_s / d_s) = 1."""
    if a_s <= 0 or d_s <= 0:
        raise ValueError("a_s and d_s must be positive")
    if horizon < 2:
        raise ValueError("horizon must be at least 2")
    out = np.zeros(horizon + 1)
    out[0] = 1.0
    out[1] = -theta * d_s / a_s
    out[2] = theta
    return out


def taps_iid_mean(gamma: float, delta: float, theta_seq, horizon: int) -> TapSet:
    """Closed form for Gaussian matrices with i.i.d. entries (any mean parameter gamma)."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    n = horizon + 1
    theta = _pad(theta_seq, n)
    if theta[0] != 1.0:
        raise ValueError("theta_0 must equal 1")
    dtheta = theta - np.concatenate(([0.0], theta[:-1]))
    g = (1.0 - 1.0 / delta) * theta + series_product(dtheta, theta, n) / delta
    q = np.zeros(n)
    q[0] = 1.0
    return TapSet.build(g, q, theta, g=g)


def taps_row_orthogonal(delta: float, horizon: int) -> TapSet:
    """g_t = 1 - 1/delta for t > 0, stored as P = 1 - z^-1 / delta, Q = 1 - z^-1."""
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    n = horizon + 1
    p = np.zeros(n)
    q = np.zeros(n)
    p[0] = q[0] = 1.0
    if n > 1:
        p[1] = -1.0 / delta
        q[1] = -1.0
    theta = np.zeros(n)
    theta[0] = 1.0
    g = np.full(n, 1.0 - 1.0 / delta)
    g[0] = 1.0
    return TapSet.build(p, q, theta, g=g)


def taps_geometric(kappa: float, delta: float, theta_seq, horizon: int, dps: int | None = None) -> TapSet:
    """Taps for the geometric spectrum with condition number kappa.

    With ``theta_bar_t = theta_{t-1} - theta_t`` and ``C = 2 ln(kappa) / delta``:
    ``beta`` is the series of ``exp(C sum_j theta_bar_j z^-j)``, ``p_t = -beta_t / (kappa^2 - 1)``,
    ``qbar`` solves ``C * theta_bar * qbar = beta - 1`` and ``q_t = qbar_t - qbar_{t-1}``.

    The ``qbar`` recursion amplifies rounding by the inverse root of
    ``sum_j theta_bar_{j+1} z^-j``, so it is carried out with ``dps`` decimal
    digits (default grows with the horizon) before rounding to float.
    """
    if not kappa > 1:
        raise ValueError("kappa must exceed 1")
    n = horizon + 1
    theta = _pad(theta_seq, n)
    if theta[0] != 1.0:
        raise ValueError("theta_0 must equal 1")
    support = np.flatnonzero(theta)
    t1 = int(support[-1])
    if dps is None:
        dps = 40 + 2 * n
    with mpmath.workdps(dps):
        th = [mpmath.mpf(float(v)) for v in theta[: t1 + 1]]
        # theta_bar_j for j = 1 .. t1 + 1; theta vanishes past t1
        tbar = [th[j - 1] - (th[j] if j <= t1 else 0) for j in range(1, t1 + 2)]
        if tbar[0] == 0:
            raise ValueError("theta_0 - theta_1 must be nonzero")
        C = 2 * mpmath.log(mpmath.mpf(kappa)) / mpmath.mpf(delta)
        K = mpmath.mpf(kappa) ** 2 - 1
        m = n + 1  # beta is needed up to index horizon + 1
        beta = [mpmath.mpf(1)] + [mpmath.mpf(0)] * (m - 1)
        for j, tb in enumerate(tbar, start=1):
            if tb == 0:
                continue
            alpha = [mpmath.mpf(0)] * m
            k = 0
            while j * k < m:
                alpha[j * k] = (C * tb) ** k / mpmath.factorial(k)
                k += 1
            beta = [mpmath.fsum(beta[i] * alpha[t - i] for i in range(t + 1)) for t in range(m)]
        p = [mpmath.mpf(1)] + [-beta[t] / K for t in range(1, n)]
        qbar = [mpmath.mpf(1)]
        for t in range(1, n):
            acc = beta[t + 1] / C
            for tau in range(1, min(t1, t) + 1):
                acc -= tbar[tau] * qbar[t - tau]
            qbar.append(acc / tbar[0])
        q = [qbar[0]] + [qbar[t] - qbar[t - 1] for t in range(1, n)]
        g = []
        for t in range(n):
            g.append(p[t] - mpmath.fsum(q[tau] * g[t - tau] for tau in range(1, t + 1)))
        to_f = lambda seq: np.array([float(v) for v in seq])
        return TapSet.build(to_f(p), to_f(q), theta, g=to_f(g))


def series_value(coeffs, z):
    """sum_t c_t z^-t for real or array z."""
    z = np.asarray(z, dtype=float)
    powers = z[..., None] ** -np.arange(len(coeffs))
    return powers @ np.asarray(coeffs, dtype=float)


def generating_function(tapset: TapSet, z):
    """G(z) evaluated as P(z) / Q(z)."""
    return series_value(tapset.p, z) / series_value(tapset.q, z)


class SeriesConvergenceError(ValueError):
    pass


def verify_generating_condition(tapset: TapSet, dist, z_samples=DEFAULT_Z, tail_tol: float = 1e-12) -> float:
    """max over z of |eta(x*(z)) - (1 - 1/z) Theta(z)|,
    with ``x*(z) = (1 - (1 - 1/z) Theta(z)) / ((1 - 1/z) G(z))``.

    Samples where eta is undefined at x* (on a branch cut) count as an
    infinite residual.  For algebraic eta (Marchenko-Pastur) x*(z) can turn
    around at a branch point, after which the condition holds on the other
    sheet; every branch returned by ``dist.eta_branches`` is accepted.
    """
    z = np.asarray(z_samples, dtype=float)
    T = tapset.horizon
    for name in ("p", "q", "theta"):
        c = getattr(tapset, name)
        tail = np.abs(c[-1]) * np.abs(z) ** (-T)
        if np.any(tail > tail_tol):
            raise SeriesConvergenceError(f"series {name} not converged at horizon {T} (tail {tail.max():.2e})")
    w = 1.0 - 1.0 / z
    theta_z = series_value(tapset.theta, z)
    G = generating_function(tapset, z)
    resid = np.empty_like(z)
    for k in range(z.size):
        if G[k] == 0.0:
            # x* = +inf: eta tends to the weight of the zero eigenvalue
            x_star = np.inf
        else:
            x_star = (1.0 - w[k] * theta_z[k]) / (w[k] * G[k])
        # x* < 0 is legitimate for small z; eta is continued analytically there
        with np.errstate(invalid="ignore", divide="ignore"):
            if np.isfinite(x_star):
                lhs = dist.eta_branches(x_star)
            else:
                lhs = np.array([dist.eta_at_infinity()])
        resid[k] = np.nanmin(np.abs(lhs - w[k] * theta_z[k])) if np.any(np.isfinite(lhs)) else np.inf
    return float(np.max(np.where(np.isfinite(resid), resid, np.inf)))
