"""Command line: ``bocamp {recover,se,taps,sweep}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import (
    FULL_TRIALS,
    TAP_TOL,
    ConfigError,
    ExperimentConfig,
    check_taps,
    default_out_dir,
    design_taps,
    limit_spectrum,
    run_experiment,
)
from .model import NoiseModel, Prior
from .se import fixed_point

# subcommand -> (default kind, kinds it accepts)
COMMANDS = {
    "recover": ("single_recovery", ("single_recovery",)),
    "se": ("se_dynamics", ("se_dynamics", "se_covariance_wave")),
    "sweep": ("mse_vs_kappa", ("mse_vs_kappa",)),
    "taps": ("tap_check", ("tap_check",)),
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="base seed; trial i uses seed + i")
    p.add_argument("--out", help="output directory")
    p.add_argument("--trials", type=int)
    p.add_argument("--theta", type=float, action="append", help="repeat for several values")
    p.add_argument("--damping", type=float)
    p.add_argument("--full", action="store_true", help=f"use {FULL_TRIALS} trials unless --trials is given")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bocamp", description="CAMP, AMP and OAMP/VAMP experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("recover", "se", "sweep"):
        _common(sub.add_parser(name))
    taps = sub.add_parser("taps", help="design a tap set and check it; with --config runs a tap_check experiment")
    _common(taps)
    taps.add_argument("--kind", choices=("geometric", "row_orthogonal", "iid_gaussian"))
    taps.add_argument("--kappa", type=float)
    taps.add_argument("--delta", type=float)
    taps.add_argument("--horizon", type=int, default=120)
    return parser


def load_config(args) -> ExperimentConfig:
    default_kind, kinds = COMMANDS[args.command]
    if args.config is not None:
        cfg = ExperimentConfig.from_file(args.config)
        if cfg.kind not in kinds:
            raise ConfigError([f"kind: '{cfg.kind}' cannot run under '{args.command}' (expects {', '.join(kinds)})"])
    else:
        cfg = ExperimentConfig(default_kind)
    trials = args.trials if args.trials is not None else (FULL_TRIALS if args.full else None)
    return cfg.replace(base_seed=args.seed, out=args.out, trials=trials, theta=args.theta, damping=args.damping)


def design_only(args) -> dict:
    """TapSet JSON and residual for ``taps --kind ...`` without a config."""
    kind = args.kind or "geometric"
    delta = args.delta if args.delta is not None else 0.5
    kappa = args.kappa if args.kappa is not None else 17.0
    theta = args.theta[0] if args.theta else 0.0
    if not 0 < delta <= 1:
        raise ValueError(f"--delta must lie in (0, 1], got {delta}")
    if kind == "geometric" and kappa <= 1:
        raise ValueError(f"--kappa must exceed 1, got {kappa}")
    prior, sigma2 = Prior(0.1), NoiseModel.from_snr_db(30.0).sigma2
    dist = limit_spectrum(kind, delta, kappa)
    fp = fixed_point(dist, prior, sigma2)
    ts = design_taps(kind, delta, kappa, 0.0, theta, fp, args.horizon)
    resid, note = check_taps(ts, dist)
    return {"kind": kind, "delta": delta, "kappa": kappa if kind == "geometric" else None,
            "theta": theta if kind != "row_orthogonal" else None, "horizon": args.horizon,
            "residual": resid, "passed": bool(resid < TAP_TOL), "note": note, "tapset": ts.to_dict()}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "taps" and args.config is None:
            report = design_only(args)
            text = json.dumps(report, default=float)
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                (out / "taps.json").write_text(text + "\n")
            print(text)
            return 0
        cfg = load_config(args)
        result = run_experiment(cfg)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"bocamp: config error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"bocamp: error: {exc}", file=sys.stderr)
        return 1
    print((result.out_dir / "summary.txt").read_text(), end="")
    print(f"artifacts in {result.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
