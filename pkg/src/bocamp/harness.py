"""Config-driven experiments: SE dynamics, the covariance wave, single
recoveries, the condition-number sweep and tap checks.

Every run writes its CSV data, ``summary.json``, ``summary.txt`` (MSE in dB)
and ``manifest.json`` (config, trial seeds and a sha256 content hash over the
config and every CSV) into one output directory.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .model import NoiseModel, Prior, SpectrumSpec, sample_instance, spectrum_values
from .se import FixedPoint, SeState, fixed_point, oamp_vamp_se, se_run
from .solvers import RunRecord, run_amp, run_camp, run_oamp_vamp
from .spectra import EigenDistribution, GeometricLimit, MarchenkoPastur, RowOrthogonalLimit
from .taps import (
    DEFAULT_Z,
    SeriesConvergenceError,
    TapSet,
    taps_geometric,
    taps_iid_mean,
    taps_row_orthogonal,
    theta_schedule,
    verify_generating_condition,
)

log = logging.getLogger(__name__)

ENV_OUT = "BOCAMP_OUT_DIR"
KINDS = ("se_dynamics", "se_covariance_wave", "mse_vs_kappa", "single_recovery", "tap_check")
ALGORITHMS = ("camp", "amp", "oamp_vamp")
# kappa = 1 stands for the row-orthogonal ensemble
KAPPA_GRID = (1.0, 2.0, 5.0, 10.0, 17.0, 50.0, 100.0)
DESK_TRIALS = 100
FULL_TRIALS = 100_000
# trials per pool task; fixed so results do not depend on the worker count
CHUNK = 25
# pilot trials for the theta choice use seeds disjoint from the reported trials
PILOT_OFFSET = 1_000_000
TAP_TOL = 1e-8
SE_TOL = 1e-3
SCHEMA_PATH = Path(__file__).with_name("schema") / "experiment.schema.json"


class ConfigError(ValueError):
    """Invalid experiment config; ``errors`` holds one ``field: message`` per problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config: " + "; ".join(self.errors))


def load_schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text())


def _schema_errors(d: dict) -> list:
    validator = jsonschema.Draft202012Validator(load_schema())
    out = []
    for err in sorted(validator.iter_errors(d), key=lambda e: list(map(str, e.path))):
        where = ".".join(map(str, err.path)) or "<root>"
        out.append(f"{where}: {err.message}")
    return out


def _is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


# ---------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    kind: str
    M: int = 1024
    N: int = 2048
    rho: float = 0.1
    sigma2: float = 1e-3
    spectrum: str = "geometric"
    kappa: float = 17.0
    kappa_grid: list = field(default_factory=lambda: list(KAPPA_GRID))
    gamma: float = 0.0
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    # one value: used as is; several: every value for SE kinds, a per-kappa choice in sweeps
    theta: list = field(default_factory=lambda: [-0.7])
    # sweep choice among several theta: smallest SE d_TT, or smallest pilot-trial mean MSE
    theta_select: str = "pilot"
    pilot_trials: int = 20
    damping: float = 1.0
    variance: str = "se"
    select: str = "last"
    iterations: int = 100
    trials: int = DESK_TRIALS
    base_seed: int = 0
    workers: int = 1
    tap_horizon: int | None = None
    out: str | None = None

    @property
    def delta(self) -> float:
        return self.M / self.N

    @property
    def prior(self) -> Prior:
        return Prior(self.rho)

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.sigma2)

    @property
    def horizon(self) -> int:
        return self.tap_horizon if self.tap_horizon is not None else 2 * self.iterations + 1

    @property
    def seeds(self) -> list:
        return [self.base_seed + i for i in range(self.trials)]

    @property
    def pilot_seeds(self) -> list:
        return [self.base_seed + PILOT_OFFSET + i for i in range(self.pilot_trials)]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        errors = _schema_errors(d)
        if errors:
            raise ConfigError(errors)
        d = dict(d)
        if "snr_db" in d:
            if "sigma2" in d:
                raise ConfigError(["snr_db: give either snr_db or sigma2, not both"])
            d["sigma2"] = NoiseModel.from_snr_db(d.pop("snr_db")).sigma2
        if "delta" in d:
            delta = d.pop("delta")
            N = d.get("N", cls.N)
            M = round(delta * N)
            if "M" in d and d["M"] != M:
                raise ConfigError([f"delta: {delta} disagrees with M/N = {d['M']}/{N}"])
            d["M"] = M
        if isinstance(d.get("theta"), (int, float)):
            d["theta"] = [d["theta"]]
        cfg = cls(**d)
        cfg._check()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([f"<file>: malformed JSON in {path}: {exc}"]) from None
        if not isinstance(d, dict):
            raise ConfigError(["<root>: config must be a JSON object"])
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update({k: v for k, v in changes.items() if v is not None})
        return ExperimentConfig.from_dict(d)

    def _check(self):
        errors = []
        if self.M > self.N:
            errors.append(f"M: must not exceed N ({self.M} > {self.N})")
        transform = self.spectrum != "iid_gaussian" or self.kind == "mse_vs_kappa"
        if transform:
            for name in ("M", "N"):
                if not _is_power_of_two(getattr(self, name)):
                    errors.append(f"{name}: Hadamard-based operators need a power of two, got {getattr(self, name)}")
        if self.kind == "mse_vs_kappa" and self.spectrum != "geometric":
            errors.append("spectrum: the condition-number sweep runs on the geometric spectrum")
        uses_se = self.kind in ("se_dynamics", "se_covariance_wave", "mse_vs_kappa") or (
            self.kind == "single_recovery" and "camp" in self.algorithms and self.variance == "se")
        if uses_se and self.horizon < 2 * self.iterations + 1:
            errors.append(f"tap_horizon: SE over {self.iterations} iterations needs at least "
                          f"{2 * self.iterations + 1} taps, got {self.horizon}")
        if errors:
            raise ConfigError(errors)


# ---------------------------------------------------------------- designs


def limit_spectrum(kind: str, delta: float, kappa: float = 1.0):
    if kind == "row_orthogonal" or (kind == "geometric" and kappa == 1.0):
        return RowOrthogonalLimit(delta)
    if kind == "geometric":
        return GeometricLimit(kappa, delta)
    if kind == "iid_gaussian":
        return MarchenkoPastur(delta)
    raise ValueError(f"unknown spectrum kind {kind!r}")


def spectrum_spec(kind: str, M: int, N: int, kappa: float = 1.0, gamma: float = 0.0) -> SpectrumSpec:
    if kind == "geometric" and kappa == 1.0:
        return SpectrumSpec("row_orthogonal", M, N)
    if kind == "geometric":
        return SpectrumSpec("geometric", M, N, kappa=kappa)
    return SpectrumSpec(kind, M, N, gamma=gamma)


def finite_spectrum(spec: SpectrumSpec):
    """Eigenvalue law of the actual A^T A; the Marchenko-Pastur limit for dense kinds."""
    if spec.kind == "iid_gaussian":
        return MarchenkoPastur(spec.delta)
    return EigenDistribution.from_singular_values(spectrum_values(spec), spec.N)


def design_taps(kind: str, delta: float, kappa: float, gamma: float, theta: float | None,
                fp: FixedPoint, horizon: int) -> TapSet:
    """Tap set for the spectrum; ``theta`` is ignored by the row-orthogonal design."""
    dist = limit_spectrum(kind, delta, kappa)
    if isinstance(dist, RowOrthogonalLimit):
        return taps_row_orthogonal(delta, horizon)
    th = theta_schedule(theta, fp.a_s, fp.d_s, min(2, horizon)) if theta else [1.0]
    if kind == "iid_gaussian":
        return taps_iid_mean(gamma, delta, th, horizon)
    return taps_geometric(kappa, delta, th, horizon)


@dataclass
class CampDesign:
    theta: float | None
    tapset: TapSet
    se: SeState
    fp: FixedPoint

    @property
    def d_final(self) -> float:
        return float(self.se.d[self.se.horizon, self.se.horizon]) if self.complete else float("nan")

    @property
    def complete(self) -> bool:
        return not self.se.diverged and self.se.last == self.se.horizon

    def converged(self, tol: float = SE_TOL) -> bool:
        return self.complete and abs(self.d_final - self.fp.d_s) / self.fp.d_s < tol

    def summary(self) -> dict:
        return {"theta": self.theta, "a_s": self.fp.a_s, "d_s": self.fp.d_s, "d_TT": self.d_final,
                "rel_err": abs(self.d_final - self.fp.d_s) / self.fp.d_s if self.complete else None,
                "se_converged": self.converged(), "se_diverged": self.se.diverged,
                "se_reason": self.se.reason, "last_valid_t": self.se.last}


def design_camp(kind: str, delta: float, kappa: float, gamma: float, theta: float | None, prior: Prior,
                sigma2: float, T: int, horizon: int | None = None) -> CampDesign:
    dist = limit_spectrum(kind, delta, kappa)
    fp = fixed_point(dist, prior, sigma2)
    ts = design_taps(kind, delta, kappa, gamma, theta, fp, horizon or 2 * T + 1)
    if isinstance(dist, RowOrthogonalLimit):
        theta = None
    log.info("SE kind=%s kappa=%g theta=%s T=%d", kind, kappa, theta, T)
    return CampDesign(theta, ts, se_run(ts, dist, prior, sigma2, T), fp)


def choose_design(designs: list) -> CampDesign:
    """Smallest SE d_TT among complete runs; else the run that lasted longest."""
    complete = [c for c in designs if c.complete]
    if complete:
        return min(complete, key=lambda c: c.d_final)
    return max(designs, key=lambda c: c.se.last)


def pilot_scores(designs: list, task: "TrialTask", seeds, workers: int = 1) -> list:
    """Mean CAMP MSE of each design over the pilot seeds."""
    scores = []
    for design in designs:
        t = dataclasses.replace(task, algorithms=("camp",), design=design)
        scores.append(run_trials(t, seeds, workers)["camp"].mse.mean)
    return scores


# ---------------------------------------------------------------- streaming stats


@dataclass
class Welford:
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x: float) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def merge(self, other: "Welford") -> "Welford":
        n = self.n + other.n
        if n == 0:
            return Welford()
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return Welford(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else float("nan")

    @property
    def stderr(self) -> float:
        return float(np.sqrt(self.variance / self.n)) if self.n > 1 else float("nan")


@dataclass
class CellStats:
    mse: Welford = field(default_factory=Welford)
    diverged: int = 0

    def merge(self, other: "CellStats") -> "CellStats":
        return CellStats(self.mse.merge(other.mse), self.diverged + other.diverged)


# ---------------------------------------------------------------- trials


@dataclass
class TrialTask:
    spec: SpectrumSpec
    prior: Prior
    noise: NoiseModel
    algorithms: tuple
    T: int
    damping: float = 1.0
    variance: str = "se"
    select: str = "last"
    design: CampDesign | None = None


def run_algorithm(task: TrialTask, algo: str, seed: int) -> RunRecord:
    inst = sample_instance(task.spec, task.prior, task.noise, seed)
    if algo == "camp":
        T = task.T
        se = task.design.se if task.variance == "se" else None
        if se is not None:
            # a diverged SE only provides a_tt up to its last valid index
            T = min(T, se.last + 1)
        if T < 1:
            return RunRecord("camp", [1.0, float("nan")], seed, converged=False, diverged=True)
        rec = run_camp(inst, task.design.tapset, task.prior, se, T, task.damping, task.variance,
                       select=task.select)
        if T < task.T:
            rec.converged = False
        return rec
    if algo == "amp":
        return run_amp(inst, task.prior, task.T, task.damping, select=task.select)
    if algo == "oamp_vamp":
        return run_oamp_vamp(inst, task.prior, task.T, task.damping, select=task.select)
    raise ValueError(f"unknown algorithm {algo!r}")


def run_chunk(task: TrialTask, seeds) -> dict:
    stats = {a: CellStats() for a in task.algorithms}
    for s in seeds:
        for algo in task.algorithms:
            rec = run_algorithm(task, algo, s)
            stats[algo].mse.add(rec.final_mse)
            stats[algo].diverged += int(rec.diverged)
    return stats


def run_trials(task: TrialTask, seeds, workers: int = 1) -> dict:
    """Per-algorithm CellStats over ``seeds``, folded in seed order."""
    chunks = [seeds[i : i + CHUNK] for i in range(0, len(seeds), CHUNK)]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, [task] * len(chunks), chunks))
    else:
        parts = [run_chunk(task, c) for c in chunks]
    total = {a: CellStats() for a in task.algorithms}
    for part in parts:
        total = {a: total[a].merge(part[a]) for a in task.algorithms}
    return total


# ---------------------------------------------------------------- sweep


@dataclass
class SweepCell:
    kappa: float
    algo: str
    mse_mean: float
    mse_stderr: float
    se_prediction: float
    converged: bool
    trials: int
    diverged: int


@dataclass
class SweepResult:
    kappas: list
    algorithms: list
    cells: list
    fixed_points: dict = field(default_factory=dict)
    theta: dict = field(default_factory=dict)

    def cell(self, kappa: float, algo: str) -> SweepCell:
        for c in self.cells:
            if c.kappa == kappa and c.algo == algo:
                return c
        raise KeyError((kappa, algo))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kappa", "algo", "mse_mean", "mse_stderr", "se_prediction", "converged"])
            for c in self.cells:
                w.writerow([repr(c.kappa), c.algo, repr(c.mse_mean), repr(c.mse_stderr),
                            repr(c.se_prediction), str(c.converged).lower()])


def run_sweep(cfg: ExperimentConfig) -> SweepResult:
    prior, T = cfg.prior, cfg.iterations
    cells, fps, thetas = [], {}, {}
    for kappa in cfg.kappa_grid:
        kappa = float(kappa)
        spec = spectrum_spec("geometric", cfg.M, cfg.N, kappa)
        fp_fin = fixed_point(finite_spectrum(spec), prior, cfg.sigma2)
        fps[kappa] = {"a_s": fp_fin.a_s, "d_s": fp_fin.d_s}
        task = TrialTask(spec, prior, cfg.noise, tuple(cfg.algorithms), T, cfg.damping, cfg.variance,
                         cfg.select)
        if "camp" in cfg.algorithms:
            candidates = [None] if kappa == 1.0 else cfg.theta
            designs = [design_camp("geometric", cfg.delta, kappa, 0.0, th, prior, cfg.sigma2, T, cfg.horizon)
                       for th in candidates]
            rows = [d.summary() for d in designs]
            if len(designs) > 1 and cfg.theta_select == "pilot":
                scores = pilot_scores(designs, task, cfg.pilot_seeds, cfg.workers)
                for row, sc in zip(rows, scores):
                    row["pilot_mse"] = sc
                task.design = designs[int(np.nanargmin(scores))]
            else:
                task.design = choose_design(designs)
            thetas[kappa] = {"chosen": task.design.theta, "rule": cfg.theta_select, "candidates": rows}
        design = task.design
        stats = run_trials(task, cfg.seeds, cfg.workers)
        for algo in cfg.algorithms:
            st = stats[algo]
            if algo == "camp":
                pred = design.d_final
            elif algo == "oamp_vamp":
                pred = fp_fin.d_s
            else:
                pred = float("nan")
            cells.append(SweepCell(kappa, algo, st.mse.mean, st.mse.stderr, pred, st.diverged == 0,
                                   st.mse.n, st.diverged))
            log.info("kappa=%g %s mse=%.4e +- %.1e diverged=%d", kappa, algo, st.mse.mean, st.mse.stderr,
                     st.diverged)
    return SweepResult([float(k) for k in cfg.kappa_grid], list(cfg.algorithms), cells, fps, thetas)


# ---------------------------------------------------------------- tap check


def tap_check_cases(cfg: ExperimentConfig) -> list:
    """(name, tapset, spectrum) for the i.i.d., row-orthogonal and geometric designs."""
    H, delta, prior = cfg.horizon, cfg.delta, cfg.prior
    cases = [("iid_mean", taps_iid_mean(cfg.gamma, delta, [1.0], H), MarchenkoPastur(delta)),
             ("row_orthogonal", taps_row_orthogonal(delta, H), RowOrthogonalLimit(delta))]
    lim = GeometricLimit(cfg.kappa, delta)
    fp = fixed_point(lim, prior, cfg.sigma2)
    for th in cfg.theta:
        cases.append((f"geometric kappa={cfg.kappa:g} theta={th:g}",
                      design_taps("geometric", delta, cfg.kappa, 0.0, th, fp, H), lim))
    return cases


def check_taps(tapset: TapSet, dist, tail_tol: float = TAP_TOL) -> tuple:
    """(residual, note); an unconverged series reports NaN and the reason."""
    try:
        return verify_generating_condition(tapset, dist, DEFAULT_Z, tail_tol), ""
    except SeriesConvergenceError as exc:
        return float("nan"), str(exc)


# ---------------------------------------------------------------- outputs


def _db(x: float) -> float:
    return float(10 * np.log10(x)) if x > 0 and np.isfinite(x) else float("nan")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def content_hash(cfg: ExperimentConfig, files: list) -> str:
    """sha256 over the canonical config and the CSV outputs (names and bytes)."""
    h = hashlib.sha256(json.dumps(_hashed_config(cfg), sort_keys=True).encode())
    for rel, path in sorted(files):
        if path.suffix == ".csv":
            h.update(rel.encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def _hashed_config(cfg: ExperimentConfig) -> dict:
    # the output location and pool size do not change results
    d = cfg.to_dict()
    d.pop("out")
    d.pop("workers")
    return d


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o)}")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def default_out_dir(kind: str) -> Path:
    return Path(os.environ.get(ENV_OUT, "bocamp_out")) / kind


@dataclass
class ExperimentResult:
    kind: str
    out_dir: Path
    files: list
    summary: dict
    manifest: dict
    payload: object = None


def _theta_dir(theta) -> str:
    return "theta=none" if theta is None else f"theta={theta:g}"


def _run_se(cfg: ExperimentConfig, out: Path):
    designs, files, lines = [], [], []
    thetas = [None] if cfg.spectrum == "row_orthogonal" else cfg.theta
    for th in thetas:
        design = design_camp(cfg.spectrum, cfg.delta, cfg.kappa, cfg.gamma, th, cfg.prior, cfg.sigma2,
                             cfg.iterations, cfg.horizon)
        designs.append(design)
        sub = out / _theta_dir(design.theta)
        sub.mkdir(parents=True, exist_ok=True)
        design.se.write_dynamics_csv(sub / "se_dynamics.csv")
        files.append(sub / "se_dynamics.csv")
        if cfg.kind == "se_covariance_wave":
            design.se.write_wave_csv(sub / "covariance_wave.csv")
            files.append(sub / "covariance_wave.csv")
    summary = {"fixed_point": {"a_s": designs[0].fp.a_s, "d_s": designs[0].fp.d_s}, "runs": []}
    lines.append(f"fixed point: a_s = {_db(designs[0].fp.a_s):.2f} dB, d_s = {_db(designs[0].fp.d_s):.2f} dB")
    for design in designs:
        row = design.summary()
        if cfg.kind == "se_covariance_wave":
            row.update(wave_stats(design.se, design.fp))
        summary["runs"].append(row)
        d_last = float(design.se.d[design.se.last, design.se.last]) if design.se.last >= 0 else float("nan")
        lines.append(f"theta={design.theta}: d_tt at t={design.se.last} is {_db(d_last):.2f} dB, "
                     f"SE {'converged' if design.converged() else 'not converged'}"
                     + (f" ({design.se.reason})" if design.se.diverged else ""))
    return designs, files, summary, lines


def wave_stats(se: SeState, fp: FixedPoint) -> dict:
    """Off-diagonal ridge height and last-column spread relative to d_s."""
    t = se.last
    if t < 1:
        return {"ridge_over_d_s": None, "last_column_rel_err": None}
    col = se.d[: t + 1, t]
    return {"ridge_over_d_s": float(np.max(col[:t]) / fp.d_s),
            "last_column_rel_err": float(np.max(np.abs(col - fp.d_s)) / fp.d_s)}


def _run_single(cfg: ExperimentConfig, out: Path):
    spec = spectrum_spec(cfg.spectrum, cfg.M, cfg.N, cfg.kappa, cfg.gamma)
    design = None
    if "camp" in cfg.algorithms:
        th = None if cfg.spectrum == "row_orthogonal" else cfg.theta[0]
        design = design_camp(cfg.spectrum, cfg.delta, cfg.kappa, cfg.gamma, th, cfg.prior, cfg.sigma2,
                             cfg.iterations, cfg.horizon)
    task = TrialTask(spec, cfg.prior, cfg.noise, tuple(cfg.algorithms), cfg.iterations, cfg.damping,
                     cfg.variance, cfg.select, design)
    fp = fixed_point(finite_spectrum(spec), cfg.prior, cfg.sigma2)
    records, files, summary, lines = {}, [], {"seed": cfg.base_seed, "fixed_point_d_s": fp.d_s, "runs": {}}, []
    lines.append(f"fixed point d_s = {_db(fp.d_s):.2f} dB (seed {cfg.base_seed})")
    for algo in cfg.algorithms:
        rec = run_algorithm(task, algo, cfg.base_seed)
        rec.config = _hashed_config(cfg)
        if algo == "oamp_vamp":
            tr = oamp_vamp_se(finite_spectrum(spec), cfg.prior, cfg.sigma2, rec.iterations)
            rec.se_prediction = [1.0] + [float(v) for v in tr.d]
        records[algo] = rec
        rec.write_csv(out / f"run_{algo}.csv")
        (out / f"run_{algo}.json").write_text(rec.to_json(indent=2) + "\n")
        files += [out / f"run_{algo}.csv", out / f"run_{algo}.json"]
        summary["runs"][algo] = {"final_mse": rec.final_mse, "final_mse_db": _db(rec.final_mse),
                                 "iterations": rec.iterations, "diverged": rec.diverged,
                                 "selected_iteration": rec.selected_iteration}
        lines.append(f"{algo}: final MSE {_db(rec.final_mse):.2f} dB after {rec.iterations} iterations"
                     + (" (diverged)" if rec.diverged else ""))
    return records, files, summary, lines


def _run_sweep_kind(cfg: ExperimentConfig, out: Path):
    res = run_sweep(cfg)
    res.write_csv(out / "sweep.csv")
    summary = {"fixed_points": {repr(k): v for k, v in res.fixed_points.items()},
               "theta": {repr(k): v for k, v in res.theta.items()},
               "cells": [dataclasses.asdict(c) for c in res.cells]}
    lines = [f"{'kappa':>7} {'algo':>10} {'MSE [dB]':>9} {'stderr':>9} {'SE [dB]':>8} diverged"]
    for c in res.cells:
        lines.append(f"{c.kappa:7g} {c.algo:>10} {_db(c.mse_mean):9.2f} {c.mse_stderr:9.2e} "
                     f"{_db(c.se_prediction):8.2f} {c.diverged}/{c.trials}")
    for k, v in res.theta.items():
        lines.append(f"kappa={k:g}: CAMP theta = {v['chosen']}")
    return res, [out / "sweep.csv"], summary, lines


def _run_tap_check(cfg: ExperimentConfig, out: Path):
    rows = []
    for name, ts, dist in tap_check_cases(cfg):
        r, note = check_taps(ts, dist)
        rows.append({"case": name, "residual": r, "passed": bool(r < TAP_TOL), "note": note})
    with open(out / "tap_check.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "residual", "tolerance", "passed"])
        for row in rows:
            w.writerow([row["case"], repr(row["residual"]), repr(TAP_TOL), str(row["passed"]).lower()])
    lines = [f"horizon {cfg.horizon}, z in {list(DEFAULT_Z)}"]
    lines += [f"{r['case']}: residual {r['residual']:.2e} {'ok' if r['passed'] else 'FAIL'} {r['note']}".rstrip()
              for r in rows]
    return rows, [out / "tap_check.csv"], {"horizon": cfg.horizon, "cases": rows}, lines


_RUNNERS = {
    "se_dynamics": _run_se,
    "se_covariance_wave": _run_se,
    "single_recovery": _run_single,
    "mse_vs_kappa": _run_sweep_kind,
    "tap_check": _run_tap_check,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run ``cfg`` and write its artifacts; returns paths, summary and the in-memory results."""
    out = Path(cfg.out) if cfg.out else default_out_dir(cfg.kind)
    out.mkdir(parents=True, exist_ok=True)
    payload, files, summary, lines = _RUNNERS[cfg.kind](cfg, out)
    summary = {"kind": cfg.kind, **summary}
    _write_json(out / "summary.json", summary)
    header = [f"{cfg.kind}: M={cfg.M} N={cfg.N} rho={cfg.rho} 1/sigma2={NoiseModel(cfg.sigma2).snr_db:.1f} dB"]
    (out / "summary.txt").write_text("\n".join(header + lines) + "\n")
    rel = [(str(p.relative_to(out)), p) for p in files]
    manifest = {
        "config": cfg.to_dict(),
        "seeds": {"rule": "base_seed + trial_index", "base_seed": cfg.base_seed, "trials": cfg.trials,
                  "values": cfg.seeds},
        "pilot_seeds": cfg.pilot_seeds if cfg.kind == "mse_vs_kappa" and cfg.theta_select == "pilot" else [],
        "files": {r: _sha256(p) for r, p in sorted(rel)},
        "content_hash": content_hash(cfg, rel),
    }
    _write_json(out / "manifest.json", manifest)
    files = files + [out / "summary.json", out / "summary.txt", out / "manifest.json"]
    return ExperimentResult(cfg.kind, out, files, summary, manifest, payload)
