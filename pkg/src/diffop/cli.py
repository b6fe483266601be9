"""Command-line entry points: data generation, training, sampling,
evaluation, and joint-histogram export.

Machine-readable output goes only to the paths given on the command line;
progress and diagnostics go to standard error. Exit codes: 0 success,
1 validation error (including unknown flags and bad config keys), 2 I/O
error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import TrainState, load_checkpoint, save_checkpoint
from .datasets import read_dataset, write_dataset
from .diffusion import CovMode, make_schedule
from .evaluation import (
    ci_recovery,
    evaluate,
    joint_histogram,
    sample_conditional,
    write_histogram_csv,
)
from .grids import Field
from .problems import (
    ADVECTION_T_FINAL,
    PROBLEMS,
    NoiseSpec,
    build_dataset,
    solve_advection1d,
    solve_elliptic1d,
)
from .training import TrainConfig, train
from .unet import ArchSpec

CONFIG_VERSION = 1

_TOP_KEYS = {"config_version", "arch", "schedule", "train", "dtype"}
_SCHEDULE_KEYS = {"kind", "t_max"}
_TRAIN_KEYS = {
    "epochs", "batch_size", "lr0", "lr_halving_period", "adam_beta1",
    "adam_beta2", "adam_eps", "seed", "cov_mode", "mix_lambda", "normalize",
    "max_grad_norm",
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ValueError(f"unknown {where} config keys: {sorted(unknown)}")


def load_run_config(path: str | Path) -> dict:
    """Load and strictly validate a training run config (unknown keys are
    rejected so hyperparameter typos fail loudly)."""
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    _check_keys(cfg, _TOP_KEYS, "top-level")
    if cfg.get("config_version") != CONFIG_VERSION:
        raise ValueError(
            f"unsupported config_version {cfg.get('config_version')!r}; expected {CONFIG_VERSION}"
        )
    for key in ("arch", "schedule", "train"):
        if key not in cfg:
            raise ValueError(f"config is missing the {key!r} section")
    _check_keys(cfg["schedule"], _SCHEDULE_KEYS, "schedule")
    _check_keys(cfg["train"], _TRAIN_KEYS, "train")
    if cfg.get("dtype", "float32") not in ("float32", "float64"):
        raise ValueError("dtype must be 'float32' or 'float64'")
    return cfg


def train_config_from_section(section: dict) -> TrainConfig:
    section = dict(section)
    cov = CovMode(section.pop("cov_mode", "noise_free"), section.pop("mix_lambda", None))
    return TrainConfig(cov_mode=cov, **section)


def _exact_solver_for(meta: dict):
    problem = meta.get("problem")
    if problem == "elliptic1d":
        return solve_elliptic1d
    if problem == "advection1d":
        t_f = float(meta.get("params", {}).get("t_final", ADVECTION_T_FINAL))
        return lambda u0: solve_advection1d(u0, t_f)
    raise ValueError(f"no exact solver for problem {problem!r}")


def _cmd_gen_data(args) -> int:
    ds = build_dataset(args.problem, args.n, args.m, args.seed, NoiseSpec(args.sigma))
    write_dataset(ds, args.out)
    print(f"wrote {ds.n} pairs (m={ds.m}) to {args.out}", file=sys.stderr)
    return 0


def _cmd_train(args) -> int:
    ds = read_dataset(args.data)
    cfg = load_run_config(args.config)
    arch = ArchSpec.from_dict(cfg["arch"])
    sched = make_schedule(cfg["schedule"]["kind"], int(cfg["schedule"]["t_max"]))
    tc = train_config_from_section(cfg["train"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    if log_path.exists():
        log_path.unlink()
    state = TrainState(cov_mode=tc.cov_mode)
    pred, log = train(
        ds, arch, sched, tc,
        dtype=cfg.get("dtype", "float32"),
        log_path=log_path,
        state=state,
    )
    save_checkpoint(pred, sched, state, out)
    print(
        f"trained {tc.epochs} epochs; final mean loss {log[-1]['mean_loss']:.6g}",
        file=sys.stderr,
    )
    return 0


def _cmd_sample(args) -> int:
    pred, sched, state = load_checkpoint(args.ckpt)
    ds = read_dataset(args.data)
    if not 0 <= args.index < ds.n:
        raise ValueError(f"--index {args.index} out of range 0..{ds.n - 1}")
    fields = sample_conditional(
        pred, sched, state.cov_mode,
        Field(ds.grid, ds.inputs[args.index]),
        args.num_samples, args.seed, state.normalization,
    )
    samples = np.stack([f.values for f in fields])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "samples.f64").write_bytes(samples.astype("<f8").tobytes(order="C"))
    (out / "mean.f64").write_bytes(samples.mean(axis=0).astype("<f8").tobytes())
    (out / "std.f64").write_bytes(samples.std(axis=0, ddof=0).astype("<f8").tobytes())
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "n_samples": args.num_samples,
                "m": ds.m,
                "index": args.index,
                "seed": args.seed,
            },
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    print(f"wrote {args.num_samples} samples to {out}", file=sys.stderr)
    return 0


def _cmd_eval(args) -> int:
    pred, sched, state = load_checkpoint(args.ckpt)
    test = read_dataset(args.data)
    report = evaluate(
        pred, sched, state.cov_mode, test,
        args.num_samples, args.seed, state.normalization,
    )
    report.write_json(args.report)
    print(f"mrle={report.mrle:.6g} mstd={report.mstd:.6g}", file=sys.stderr)
    return 0


def _cmd_hist2d(args) -> int:
    pred, sched, state = load_checkpoint(args.ckpt)
    ds = read_dataset(args.data)
    inputs = [Field(ds.grid, row) for row in ds.inputs]
    model_counts, exact_counts, x1_edges, x2_edges = joint_histogram(
        pred, sched, state.cov_mode, inputs, args.x1, args.x2, args.bins,
        _exact_solver_for(ds.meta), args.seed, state.normalization,
    )
    write_histogram_csv(args.out, model_counts, exact_counts, x1_edges, x2_edges)
    print(f"wrote {args.bins}x{args.bins} histograms to {args.out}", file=sys.stderr)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="diffop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate an input-output pair dataset")
    p.add_argument("--problem", required=True, choices=PROBLEMS)
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--m", required=True, type=int)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a predictor from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sample", help="draw samples for one dataset input")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", required=True, type=int)
    p.add_argument("--num-samples", required=True, type=int)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("eval", help="score a checkpoint on a test dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--num-samples", required=True, type=int)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("hist2d", help="joint histograms at two grid points")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--x1", required=True, type=int)
    p.add_argument("--x2", required=True, type=int)
    p.add_argument("--bins", required=True, type=int)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_hist2d)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
