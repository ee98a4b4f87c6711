"""State evolution for CAMP, its fixed point, and the OAMP/VAMP reference SE.

Tables are indexed ``a[t', t]`` with both indices in ``0..T``.  Only ``t' <= t``
is solved for; the lower triangle is filled by symmetry.  Negative indices are
zero throughout.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .denoiser import cross_mse, mmse, xi_bar
from .model import Prior
from .spectra import Spectrum
from .taps import TapSet, _at, convolve

log = logging.getLogger(__name__)

DIVERGENCE_LEVEL = 1e6


@dataclass(frozen=True)
class FixedPoint:
    a_s: float
    d_s: float
    iterations: int = 0
    converged: bool = True

    @property
    def xi_s(self) -> float:
        return self.d_s / self.a_s


@dataclass
class SeState:
    a: np.ndarray
    d: np.ndarray
    xi_bar: np.ndarray
    horizon: int
    diverged: bool = False
    reason: str = ""
    # number of fully solved time indices; t <= last are valid
    last: int = -1

    @property
    def a_diag(self) -> np.ndarray:
        return np.diag(self.a)[: self.last + 1].copy()

    @property
    def d_diag(self) -> np.ndarray:
        return np.diag(self.d)[: self.last + 1].copy()

    def write_dynamics_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "a_tt", "d_tt"])
            for t in range(self.last + 1):
                w.writerow([t, repr(float(self.a[t, t])), repr(float(self.d[t, t]))])

    def write_wave_csv(self, path) -> None:
        """Long-format d table, one row per (t', t) with t' <= t."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_prime", "t", "d"])
            for t in range(self.last + 1):
                for tp in range(t + 1):
                    w.writerow([tp, t, repr(float(self.d[tp, t]))])


# ---------------------------------------------------------------- D operator


def d_operator(tapset: TapSet, tau_prime: int, tau: int) -> float:
    """The six-term convolution coefficient multiplying ``a_{t'-tau', t-tau}``."""
    p, q, r = tapset.p, tapset.q, tapset.r
    tp, t = tau_prime, tau
    kd = 1.0 if tp == 0 else 0.0

    def dp(k):  # p_k - p_{k+1}
        return _at(p, k) - _at(p, k + 1)

    def bp(k):  # p_k - p_{k-1}
        return _at(p, k) - _at(p, k - 1)

    def br(k):  # r_k - r_{k-1}
        return _at(r, k) - _at(r, k - 1)

    n = t + 1
    s1 = convolve([dp(k) for k in range(tp + n)], q, t, i=tp)
    s2 = convolve([bp(k) for k in range(n)], q, t, j=tp + 1)
    s3 = -convolve([bp(k) for k in range(n)], r, t, j=tp + 1)
    s4 = convolve([br(k) for k in range(n)], p, t, j=tp + 1)
    s5 = convolve(p, r, t, j=tp) - kd * convolve(p, r, t)
    s6 = -(convolve(r, p, t, j=tp) - kd * convolve(r, p, t))
    return s1 + s2 + s3 + s4 + s5 + s6


def _shifted(seq, n_out: int, shift: int) -> np.ndarray:
    """seq[k + shift] for k = 0..n_out-1, zero outside the stored range."""
    out = np.zeros(n_out)
    lo = max(0, -shift)
    hi = min(n_out, len(seq) - shift)
    if hi > lo:
        out[lo:hi] = seq[lo + shift : hi + shift]
    return out


def _conv_head(a, b, n: int) -> np.ndarray:
    return np.convolve(a[:n], b[:n])[:n]


def coefficient_tables(tapset: TapSet, T: int):
    """(D, E, N) tables of shape (T+1, T+1), indexed [tau', tau].

    ``E`` multiplies ``d_{t'-tau', t-tau}`` and ``N`` the noise variance.
    Requires the tap horizon to reach index ``2T + 1``.
    """
    need = 2 * T + 1
    if tapset.horizon < need:
        raise ValueError(f"SE over {T} steps needs tap horizon >= {need}, got {tapset.horizon}")
    p, q, r, th = tapset.p, tapset.q, tapset.r, tapset.theta
    n = T + 1
    p_diff = p - _shifted(p, len(p), -1)  # p_k - p_{k-1}
    r_diff = r - _shifted(r, len(r), -1)
    D = np.empty((n, n))
    E = np.empty((n, n))
    for tp in range(n):
        kd = 1.0 if tp == 0 else 0.0
        q1 = _shifted(q, n, tp + 1)
        r1 = _shifted(r, n, tp + 1)
        p1 = _shifted(p, n, tp + 1)
        r0 = _shifted(r, n, tp)
        p0 = _shifted(p, n, tp)
        dp = _shifted(p, n, tp) - _shifted(p, n, tp + 1)
        D[tp] = (
            _conv_head(dp, q, n)
            + _conv_head(p_diff, q1, n)
            - _conv_head(p_diff, r1, n)
            + _conv_head(r_diff, p1, n)
            + _conv_head(p, r0 - kd * r[:n], n)
            - _conv_head(r, p0 - kd * p[:n], n)
        )
        E[tp] = _conv_head(p, r1, n) - _conv_head(r, p1, n)
    # N[t', t] = sum_{k' <= t', k <= t} q_k' q_k (theta_m - theta_{m+1}), m = t' - k' + t - k.
    # With H[t', s] = sum_{k'} q_k' dth[t' - k' + s], N[t'] is the head of q * H[t'].
    dth = th[: 2 * n] - _shifted(th, 2 * n, 1)
    hankel = dth[np.add.outer(np.arange(n), np.arange(n))]
    Nt = np.empty((n, n))
    for tp in range(n):
        H = q[tp::-1] @ hankel[: tp + 1]
        Nt[tp] = _conv_head(q, H, n)
    return D, E, Nt


# ---------------------------------------------------------------- SE solver


def _xi_weights(xb: np.ndarray, t: int) -> np.ndarray:
    """W[tau] = prod_{k=t-tau}^{t-1} xi_bar_k for tau = 0..t."""
    w = np.ones(t + 1)
    if t:
        w[1:] = np.cumprod(xb[t - 1 :: -1][:t])
    return w


def se_run(tapset: TapSet, dist: Spectrum | None, prior: Prior, sigma2: float, T: int,
           check_taps: bool = True, tables=None) -> SeState:
    """Solve the coupled covariance recursions for t = 0..T.

    Each ``a_{t', t}`` enters its own equation only through the
    ``(tau', tau) = (0, 0)`` term, so entries are solved one at a time with
    ``t`` as the outer index and ``t'`` running upward.  ``d_{t', t}`` for a
    whole column depends only on column ``t - 1`` and is computed first, in one
    batched quadrature call.

    A run reaching ``a_tt > 1e6`` or a non-PSD covariance is reported as
    diverged and the partial tables are returned.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if check_taps and dist is not None:
        from .taps import SeriesConvergenceError, verify_generating_condition

        try:
            resid = verify_generating_condition(tapset, dist, tail_tol=1e-8)
        except SeriesConvergenceError as exc:
            # short horizons cannot resolve the series at every sample; not fatal
            log.warning("tap check skipped: %s", exc)
            resid = 0.0
        if resid > 1e-6:
            raise ValueError(f"taps do not satisfy the generating-function condition (residual {resid:.2e})")
    D, E, Ntab = tables if tables is not None else coefficient_tables(tapset, T)
    d00 = D[0, 0]
    if abs(d00) < 1e-12:
        raise ValueError("leading coefficient 1 - theta_1 vanishes; SE step is unsolvable")
    n = T + 1
    a = np.full((n, n), np.nan)
    d = np.full((n, n), np.nan)
    xb = np.full(n, np.nan)
    state = SeState(a, d, xb, T)
    for t in range(n):
        # column t of d, from column t - 1 of a
        try:
            if t == 0:
                d[0, 0] = 1.0
            else:
                att = a[t - 1, t - 1]
                d[0, t] = cross_mse(att, 0.0, None, prior)
                if t > 1:
                    tps = np.arange(1, t)
                    d[tps, t] = cross_mse(att, a[tps - 1, t - 1], a[tps - 1, tps - 1], prior)
                d[t, t] = mmse(att, prior)
        except np.linalg.LinAlgError:
            state.diverged, state.reason = True, f"non-PSD covariance at t={t}"
            break
        d[t, :t] = d[:t, t]
        wt = _xi_weights(xb, t)
        for tp in range(t + 1):
            a[tp, t] = 0.0
            wtp = _xi_weights(xb, tp)
            rows = tp - np.arange(tp + 1)
            cols = t - np.arange(t + 1)
            A_sub = np.where(np.isnan(a[np.ix_(rows, cols)]), a[np.ix_(cols, rows)].T, a[np.ix_(rows, cols)])
            D_sub = d[np.ix_(rows, cols)]
            D_sub = np.where(np.isnan(D_sub), d[np.ix_(cols, rows)].T, D_sub)
            body = D[: tp + 1, : t + 1] * A_sub - E[: tp + 1, : t + 1] * D_sub - sigma2 * Ntab[: tp + 1, : t + 1]
            rest = wtp @ body @ wt
            a[tp, t] = -rest / d00
            a[t, tp] = a[tp, t]
        att = a[t, t]
        if not np.isfinite(att) or att <= 0 or att > DIVERGENCE_LEVEL:
            state.diverged, state.reason = True, f"a_tt={att:.3e} at t={t}"
            break
        xb[t] = xi_bar(att, prior)
        state.last = t
    if state.diverged:
        log.info("SE diverged: %s", state.reason)
    return state


# ---------------------------------------------------------------- fixed point


def fixed_point(dist: Spectrum, prior: Prior, sigma2: float, d_init: float = 1.0, damping: float = 1.0,
                tol: float = 1e-12, max_iter: int = 100_000) -> FixedPoint:
    """Iterate ``a <- sigma2 / R(-d / sigma2)``, ``d <- mmse(a)``."""
    d = d_init
    a = np.nan
    for k in range(1, max_iter + 1):
        a = sigma2 / dist.r_transform(-d / sigma2)
        d_new = mmse(a, prior)
        d_new = damping * d_new + (1.0 - damping) * d
        if abs(d_new - d) < tol:
            d = d_new
            a = sigma2 / dist.r_transform(-d / sigma2)
            return FixedPoint(float(a), float(d), k, True)
        d = d_new
    log.warning("fixed point iteration did not settle after %d steps", max_iter)
    return FixedPoint(float(a), float(d), max_iter, False)


def fixed_points(dist: Spectrum, prior: Prior, sigma2: float, inits=(1.0, 1e-6), rel_tol: float = 1e-6):
    """Fixed points reached from several initial MSEs; distinct ones are all kept."""
    found: list[FixedPoint] = []
    for d0 in inits:
        fp = fixed_point(dist, prior, sigma2, d_init=d0)
        if not any(abs(fp.d_s - g.d_s) <= rel_tol * g.d_s for g in found):
            found.append(fp)
    if len(found) > 1:
        log.warning("non-unique fixed point: d_s in %s", [f.d_s for f in found])
    return found


def fixed_point_residuals(fp: FixedPoint, dist: Spectrum, prior: Prior, sigma2: float):
    """(|a_s - sigma2 / R(-d_s / sigma2)|, |d_s - mmse(a_s)|)."""
    ra = abs(fp.a_s - sigma2 / dist.r_transform(-fp.d_s / sigma2))
    rd = abs(fp.d_s - mmse(fp.a_s, prior))
    return ra, rd


@dataclass
class OampSeTrace:
    a: list = field(default_factory=list)
    d: list = field(default_factory=list)


def oamp_vamp_se(dist: Spectrum, prior: Prior, sigma2: float, T: int) -> OampSeTrace:
    """Scalar SE of OAMP/VAMP with the LMMSE filter in extrinsic form.

    ``v`` is the extrinsic variance passed to the linear module.  The linear
    module's posterior variance is ``v eta(v / sigma2)``, its extrinsic output
    ``a``; the denoiser gives ``d = mmse(a)`` and passes back
    ``v = (1/d - 1/a)^{-1}``.
    """
    trace = OampSeTrace()
    v = 1.0
    for _ in range(T):
        post = v * float(dist.eta(v / sigma2))
        a = 1.0 / (1.0 / post - 1.0 / v)
        d = mmse(a, prior)
        trace.a.append(a)
        trace.d.append(d)
        gap = 1.0 / d - 1.0 / a
        if gap <= 0:
            break
        v_new = 1.0 / gap
        if abs(v_new - v) <= 1e-15 * v:
            break
        v = v_new
    return trace
