"""Recovery algorithms: CAMP, AMP and OAMP/VAMP on a ProblemInstance."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .denoiser import denoise
from .model import ProblemInstance, Prior
from .se import SeState
from .taps import TapSet

DIVERGENCE_LEVEL = 1e6


@dataclass
class RunRecord:
    algo: str
    mse_per_iteration: list
    seed: int | None = None
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0
    converged: bool = True
    diverged: bool = False
    se_prediction: list | None = None
    # per-iteration ||h_t||^2 / N, filled by CAMP when the truth is known
    h_power: list | None = None
    # ||y - A x_t||^2 / M, entry 0 belongs to x_0 = 0
    residual_per_iteration: list | None = None
    selected_iteration: int | None = None

    @property
    def iterations(self) -> int:
        return len(self.mse_per_iteration) - 1

    @property
    def final_mse(self) -> float:
        """MSE of the reported estimate: the selected iterate if any, else the last finite one."""
        if self.selected_iteration is not None:
            return float(self.mse_per_iteration[self.selected_iteration])
        finite = [m for m in self.mse_per_iteration if np.isfinite(m)]
        return float(finite[-1]) if finite else float("nan")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**d)

    @classmethod
    def from_json(cls, s: str) -> "RunRecord":
        return cls.from_dict(json.loads(s))

    def write_csv(self, path) -> None:
        pred = self.se_prediction or []
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mse", "se_prediction"])
            for t, m in enumerate(self.mse_per_iteration):
                sp = pred[t] if t < len(pred) else float("nan")
                w.writerow([t, repr(float(m)), repr(float(sp))])


def _mse(x, x_true) -> float:
    return float(np.mean((x - x_true) ** 2))


def _residual(instance: ProblemInstance, x) -> float:
    r = instance.y - instance.operator.matvec(x)
    return float(np.dot(r, r)) / instance.M


def _select(residuals, select: str) -> int | None:
    """Index of the reported iterate.  ``min_residual`` picks the t >= 1 with the
    smallest measurement residual, which needs no knowledge of the truth."""
    _check_select(select)
    if select == "last":
        return None
    r = np.asarray(residuals[1:], dtype=float)
    if r.size == 0 or not np.any(np.isfinite(r)):
        return None
    return int(np.nanargmin(np.where(np.isfinite(r), r, np.nan))) + 1


SELECT_MODES = ("last", "min_residual")


def _check_select(select: str):
    if select not in SELECT_MODES:
        raise ValueError(f"select must be one of {SELECT_MODES}, got {select!r}")


def _check_damping(damping: float):
    if not 0.0 < damping <= 1.0:
        raise ValueError(f"damping factor must lie in (0, 1], got {damping}")


# ---------------------------------------------------------------- CAMP


@dataclass
class CampState:
    x: np.ndarray
    z_history: list = field(default_factory=list)
    AAz_history: list = field(default_factory=list)
    xi_history: list = field(default_factory=list)
    # xi_prod[tau] = prod_{k=tau}^{t-1} xi_k, kept in step with the history
    xi_prod: list = field(default_factory=list)
    iteration: int = 0
    h_power: list = field(default_factory=list)

    @classmethod
    def initial(cls, N: int) -> "CampState":
        return cls(np.zeros(N))


def camp_step(state: CampState, instance: ProblemInstance, tapset: TapSet, prior: Prior,
              a_tt: float | None = None, damping: float = 1.0) -> CampState:
    """One CAMP iteration: form z_t, denoise u_t = x_t + A^T z_t into x_{t+1}.

    ``a_tt=None`` estimates the variance online as ``||z_t||^2 / M``.
    """
    op = instance.operator
    t = state.iteration
    if t > tapset.horizon:
        raise ValueError(f"tap horizon {tapset.horizon} exhausted at t={t}")
    g, th = tapset.g, tapset.theta
    use_aa = bool(np.any(th[1:] != 0))
    if t == 0:
        z = np.array(instance.y, dtype=float)
    else:
        z = instance.y - op.matvec(state.x)
        for tau in range(t):
            coef = state.xi_prod[tau]
            zt = state.z_history[tau]
            if use_aa and th[t - tau] != 0.0:
                z = z + coef * (th[t - tau] * state.AAz_history[tau] - g[t - tau] * zt)
            else:
                z = z - (coef * g[t - tau]) * zt
    v = op.rmatvec(z)
    u = state.x + v
    if a_tt is None:
        a_tt = float(np.dot(z, z)) / z.size
    ev = denoise(u, a_tt, prior)
    xi = float(np.mean(ev.derivative))
    x_new = ev.value
    if damping < 1.0 and t > 0:
        x_new = damping * x_new + (1.0 - damping) * state.x
        xi = damping * xi + (1.0 - damping) * state.xi_history[-1]
    state.z_history.append(z)
    state.AAz_history.append(op.matvec(v) if use_aa else None)
    state.xi_prod = [c * xi for c in state.xi_prod] + [xi]
    state.xi_history.append(xi)
    state.h_power.append(float(np.mean((u - instance.x_true) ** 2)))
    state.x = x_new
    state.iteration = t + 1
    return state


def run_camp(instance: ProblemInstance, tapset: TapSet, prior: Prior, se_state: SeState | None, T: int,
             damping: float = 1.0, variance: str = "se", config: dict | None = None,
             select: str = "last") -> RunRecord:
    """T CAMP iterations.  ``variance`` is ``"se"`` (a_tt from se_state) or ``"online"``."""
    _check_damping(damping)
    _check_select(select)
    if variance not in ("se", "online"):
        raise ValueError("variance must be 'se' or 'online'")
    if variance == "se":
        if se_state is None or se_state.last < T - 1:
            raise ValueError(f"SE state must provide a_tt for t < {T}")
    start = time.perf_counter()
    state = CampState.initial(instance.N)
    mse = [_mse(state.x, instance.x_true)]
    res = [_residual(instance, state.x)]
    diverged = False
    for t in range(T):
        a_tt = float(se_state.a[t, t]) if variance == "se" else None
        camp_step(state, instance, tapset, prior, a_tt, damping)
        m = _mse(state.x, instance.x_true)
        res.append(_residual(instance, state.x) if np.isfinite(m) else float("nan"))
        if not np.isfinite(m) or m > DIVERGENCE_LEVEL:
            diverged = True
            mse.append(m if np.isfinite(m) else float("nan"))
            break
        mse.append(m)
    pred = None
    if se_state is not None:
        pred = [float(v) for v in se_state.d_diag[: len(mse)]]
    return RunRecord("camp", mse, instance.seed, config or {}, time.perf_counter() - start,
                     converged=not diverged, diverged=diverged, se_prediction=pred, h_power=state.h_power,
                     residual_per_iteration=res, selected_iteration=_select(res, select))


# ---------------------------------------------------------------- AMP


def run_amp(instance: ProblemInstance, prior: Prior, T: int, damping: float = 1.0,
            config: dict | None = None, select: str = "last") -> RunRecord:
    """AMP with the Bayes-optimal denoiser and variance ||z_t||^2 / M."""
    _check_damping(damping)
    _check_select(select)
    op = instance.operator
    delta = instance.M / instance.N
    start = time.perf_counter()
    x = np.zeros(instance.N)
    z = np.array(instance.y, dtype=float)
    xi_prev = 0.0
    mse = [_mse(x, instance.x_true)]
    res = [_residual(instance, x)]
    diverged = False
    for t in range(T):
        a = float(np.dot(z, z)) / instance.M
        if not np.isfinite(a) or a > DIVERGENCE_LEVEL or a <= 0:
            diverged = True
            break
        ev = denoise(x + op.rmatvec(z), a, prior)
        xi = float(np.mean(ev.derivative))
        x_new = ev.value
        if damping < 1.0 and t > 0:
            x_new = damping * x_new + (1.0 - damping) * x
            xi = damping * xi + (1.0 - damping) * xi_prev
        x = x_new
        resid = instance.y - op.matvec(x)
        z = resid + (xi / delta) * z
        xi_prev = xi
        m = _mse(x, instance.x_true)
        mse.append(m if np.isfinite(m) else float("nan"))
        res.append(float(np.dot(resid, resid)) / instance.M if np.isfinite(m) else float("nan"))
        if not np.isfinite(m) or m > DIVERGENCE_LEVEL:
            diverged = True
            break
    return RunRecord("amp", mse, instance.seed, config or {}, time.perf_counter() - start,
                     converged=not diverged, diverged=diverged,
                     residual_per_iteration=res, selected_iteration=_select(res, select))


# ---------------------------------------------------------------- OAMP / VAMP


def run_oamp_vamp(instance: ProblemInstance, prior: Prior, T: int, damping: float = 1.0,
                  config: dict | None = None, se_prediction=None, select: str = "last") -> RunRecord:
    """LMMSE/denoiser message passing with the LMMSE step done in the SVD domain."""
    _check_damping(damping)
    _check_select(select)
    op = instance.operator
    s = op.singular_values
    N, M = instance.N, instance.M
    s2 = instance.noise.sigma2
    yt = op.left_adjoint(instance.y)
    start = time.perf_counter()
    x_ext = np.zeros(N)
    v = 1.0
    mse = [_mse(np.zeros(N), instance.x_true)]
    res = [_residual(instance, np.zeros(N))]
    diverged = False
    for t in range(T):
        # LMMSE with prior N(x_ext, v): x_ext + V S (S^2 + s2/v)^-1 (U^T y - S V^T x_ext)
        resid = yt - s * op.right_project(x_ext)
        x_post = x_ext + op.right_lift(s / (s * s + s2 / v) * resid)
        post = (np.sum(1.0 / (1.0 / v + s * s / s2)) + (N - M) * v) / N
        a = 1.0 / (1.0 / post - 1.0 / v)
        u = a * (x_post / post - x_ext / v)
        ev = denoise(u, a, prior)
        x_hat = ev.value
        d = a * float(np.mean(ev.derivative))
        m = _mse(x_hat, instance.x_true)
        mse.append(m if np.isfinite(m) else float("nan"))
        res.append(_residual(instance, x_hat) if np.isfinite(m) else float("nan"))
        if not np.isfinite(m) or not np.isfinite(a) or a <= 0:
            diverged = True
            break
        gap = 1.0 / d - 1.0 / a
        if gap <= 0:
            # the denoiser removed no information; extrinsic variance is unbounded
            break
        v_new = 1.0 / gap
        x_new = v_new * (x_hat / d - u / a)
        if damping < 1.0 and t > 0:
            x_new = damping * x_new + (1.0 - damping) * x_ext
            v_new = damping * v_new + (1.0 - damping) * v
        x_ext, v = x_new, v_new
    pred = list(se_prediction) if se_prediction is not None else None
    return RunRecord("oamp_vamp", mse, instance.seed, config or {}, time.perf_counter() - start,
                     converged=not diverged, diverged=diverged, se_prediction=pred,
                     residual_per_iteration=res, selected_iteration=_select(res, select))
