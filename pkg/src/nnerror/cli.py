"""Command line entry point: ``nnerror {train,quantify,correct,study}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .correction import CorrectionState, corrected_prediction, train_correction
from .errquant import bound_from_dataset, generate_correction_dataset, read_dataset_csv, write_dataset_csv
from .harness import ExperimentConfig, primary_setup, run_study
from .reference import external_error, rk4_integrate
from .report import write_study
from .solver import SolverState, predict, train
from .systems import SYSTEMS, get_system

log = logging.getLogger("nnerror")

# flag name -> ExperimentConfig field
FLAG_FIELDS = {"system": "system", "seed": "seed", "runs": "runs", "K": "K", "iters": "extra_iters", "k": "k",
               "M": "M", "T": "T", "width": "width", "lr": "lr", "order": "order", "arms": "arms",
               "parallel": "parallel", "serial_timing": "serial_timing"}


def _add_common(p: argparse.ArgumentParser) -> None:
    # defaults are None so that a --config file is only overridden by flags actually given
    p.add_argument("--config", type=Path, help="key=value file; command-line flags override it")
    p.add_argument("--system", choices=sorted(SYSTEMS))
    p.add_argument("--seed", type=int)
    p.add_argument("--K", type=int, help="primary training iterations")
    p.add_argument("--iters", type=int, help="iterations after the checkpoint")
    p.add_argument("--k", type=int, help="grid multiplier for the error dataset (default 50)")
    p.add_argument("--M", type=int, help="batch size (default 100)")
    p.add_argument("--T", type=float, help="time horizon")
    p.add_argument("--width", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--order", type=int, choices=(1, 2))
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nnerror", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a primary solver and save a checkpoint")
    _add_common(p)
    p.add_argument("--z0", type=float, nargs="+", help="initial condition (default: sampled from --seed)")

    p = sub.add_parser("quantify", help="build the internal error dataset and the error bound")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, help="solver checkpoint (default: <out>/solver.npz)")
    p.add_argument("--no-reference", action="store_true", help="skip the RK4 comparison")

    p = sub.add_parser("correct", help="train a correction network from a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--dataset", type=Path, help="error dataset CSV (default: rebuilt from the checkpoint)")
    p.add_argument("--mode", choices=("regression", "residual"), default="regression")

    p = sub.add_parser("study", help="seeded multi-run comparison of training arms")
    _add_common(p)
    p.add_argument("--runs", type=int)
    p.add_argument("--arms", help="comma separated subset of standard,alg1,appendix")
    p.add_argument("--parallel", action="store_true", default=None)
    p.add_argument("--serial-timing", dest="serial_timing", action="store_true", default=None)
    p.add_argument("--no-figures", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {field: getattr(args, flag) for flag, field in FLAG_FIELDS.items()
                 if getattr(args, flag, None) is not None}
    if args.config is not None:
        return ExperimentConfig.from_file(args.config, **overrides)
    return ExperimentConfig(**overrides)


def _load(args, config: ExperimentConfig) -> SolverState:
    path = args.checkpoint or args.out / "solver.npz"
    s, system = checkpoint.load_solver(path)
    if system and system != config.system:
        log.warning("checkpoint was trained on %s, --system says %s; using %s", system, config.system, system)
        config.system = system
    return s


def cmd_train(args, config: ExperimentConfig) -> dict:
    sys_, s, rng, _ = primary_setup(config, config.seed, args.z0)
    losses = train(s, sys_, config.K, rng)
    args.out.mkdir(parents=True, exist_ok=True)
    checkpoint.save_solver(args.out / "solver.npz", s, config.system)
    t = np.linspace(0.0, s.T, 2001)
    np.savetxt(args.out / "trajectory.csv", np.column_stack([t, predict(s, t)]), delimiter=",",
               header=",".join(["t"] + [f"zhat_{i + 1}" for i in range(s.z0.size)]), comments="", fmt="%.17g")
    return {"iterations": s.iteration, "z0": s.z0.tolist(), "initial_loss": losses[0] if losses else None,
            "final_loss": float(np.mean(losses[-50:])) if losses else None}


def cmd_quantify(args, config: ExperimentConfig) -> dict:
    s = _load(args, config)
    sys_ = get_system(config.system)
    ds = generate_correction_dataset(s, sys_, config.k, config.order)
    args.out.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(ds, args.out / "dataset.csv")
    l_max, sigma, bound = bound_from_dataset(sys_, ds)
    summary = {"grid_points": len(ds), "l_max": l_max, "sigma_min": sigma, "bound": bound,
               "internal_dz_max": float(np.max(np.linalg.norm(ds.dz_ec, axis=-1))),
               "setup_seconds": ds.setup_seconds}
    if not args.no_reference:
        ref = rk4_integrate(sys_, s.z0, s.T)
        dz_ext = ref.state_at(ds.times) - ds.zhat
        np.savetxt(args.out / "errors.csv", np.column_stack([ds.times, ds.dz_ec, dz_ext]), delimiter=",",
                   header=",".join(["t"] + [f"dz_internal_{i + 1}" for i in range(s.z0.size)]
                                   + [f"dz_external_{i + 1}" for i in range(s.z0.size)]),
                   comments="", fmt="%.17g")
        ext_max = float(np.max(np.linalg.norm(dz_ext, axis=-1)))
        summary["external_dz_max"] = ext_max
        summary["discrepancy"] = float(np.mean(np.linalg.norm(ds.dz_ec - dz_ext, axis=-1)) / ext_max)
    return summary


def cmd_correct(args, config: ExperimentConfig) -> dict:
    s = _load(args, config)
    sys_ = get_system(config.system)
    if args.dataset is not None:
        ds = read_dataset_csv(args.dataset, k=config.k, order=config.order)
    else:
        ds = generate_correction_dataset(s, sys_, config.k, config.order)
    c = CorrectionState.create(s, ds, config.seed + 1, args.mode, sys=sys_, lr=config.lr)
    losses = train_correction(c, config.extra_iters, np.random.default_rng(config.seed), s, sys_)
    args.out.mkdir(parents=True, exist_ok=True)
    checkpoint.save_corrected(args.out / "corrected.npz", s, c, config.system)
    ref = rk4_integrate(sys_, s.z0, s.T)
    before = external_error(lambda t: predict(s, t), ref)
    after = external_error(lambda t: corrected_prediction(s, c, t), ref)
    return {"mode": args.mode, "iterations": c.iteration, "final_loss": float(np.mean(losses[-50:])) if losses else None,
            "dz_avg_before": before[0], "dz_max_before": before[1], "dz_avg_after": after[0],
            "dz_max_after": after[1]}


def cmd_study(args, config: ExperimentConfig) -> dict:
    study = run_study(config)
    write_study(study, args.out, figures=not args.no_figures)
    return {"config": dataclasses.asdict(config), "medians": {arm: study.medians(arm) for arm in config.arms},
            "failures": [dataclasses.asdict(f) for f in study.failures]}


COMMANDS = {"train": cmd_train, "quantify": cmd_quantify, "correct": cmd_correct, "study": cmd_study}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    config = resolve_config(args)
    result = COMMANDS[args.command](args, config)
    json.dump(result, sys.stdout, indent=2, default=str)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
