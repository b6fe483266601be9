"""Checkpoint directory format.

A checkpoint holds `manifest.json` (architecture, schedule kind/T,
normalization stats, covariance mode, optimizer metadata, epoch) next to
`params.f32`, `adam_m.f32`, and `adam_v.f32`: little-endian float32 in flat
parameter-layout order. Loading a saved checkpoint restores the parameter
vector bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import NormStats
from .diffusion import CovMode, NoiseSchedule, make_schedule
from .unet import ArchSpec, EpsilonPredictor

CKPT_FORMAT_VERSION = "1"


@dataclass
class TrainState:
    """Optimizer and progress state carried across checkpoints."""

    epoch: int = 0
    adam_step: int = 0
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None
    cov_mode: CovMode = field(default_factory=CovMode)
    normalization: NormStats | None = None


def _write_f32(path: Path, arr: np.ndarray) -> None:
    path.write_bytes(np.asarray(arr).astype("<f4").tobytes(order="C"))


def _read_f32(path: Path, count: int, what: str) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing checkpoint file: {path}")
    raw = path.read_bytes()
    if len(raw) != count * 4:
        raise ValueError(
            f"layout mismatch: {what} holds {len(raw) // 4} values, expected {count}"
        )
    return np.frombuffer(raw, dtype="<f4").astype(np.float32)


def save_checkpoint(
    pred: EpsilonPredictor,
    sched: NoiseSchedule,
    state: TrainState,
    path: str | Path,
) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    norm = state.normalization
    manifest = {
        "format_version": CKPT_FORMAT_VERSION,
        "arch": pred.arch.to_dict(),
        "schedule": {"kind": sched.kind, "t_max": sched.t_max},
        "dtype": pred.dtype,
        "epoch": state.epoch,
        "adam_step": state.adam_step,
        "cov_mode": {"mode": state.cov_mode.mode, "lam": state.cov_mode.lam},
        "normalization": None if norm is None else list(norm),
        "param_count": pred.param_count,
    }
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_f32(path / "params.f32", pred.get_params())
    zeros = np.zeros(pred.param_count, dtype=np.float32)
    _write_f32(path / "adam_m.f32", state.adam_m if state.adam_m is not None else zeros)
    _write_f32(path / "adam_v.f32", state.adam_v if state.adam_v is not None else zeros)


def load_checkpoint(path: str | Path) -> tuple[EpsilonPredictor, NoiseSchedule, TrainState]:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"missing checkpoint manifest: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != CKPT_FORMAT_VERSION:
        raise ValueError(
            f"unknown checkpoint format version {manifest.get('format_version')!r}"
        )
    arch = ArchSpec.from_dict(manifest["arch"])
    pred = EpsilonPredictor(arch, dtype=manifest.get("dtype", "float32"))
    declared = int(manifest.get("param_count", pred.param_count))
    if declared != pred.param_count:
        raise ValueError(
            f"layout mismatch: manifest declares {declared} parameters, "
            f"architecture yields {pred.param_count}"
        )
    pred.set_params(_read_f32(path / "params.f32", pred.param_count, "params.f32"))
    sched = make_schedule(manifest["schedule"]["kind"], int(manifest["schedule"]["t_max"]))
    cov = manifest.get("cov_mode", {"mode": "noise_free", "lam": None})
    norm = manifest.get("normalization")
    state = TrainState(
        epoch=int(manifest.get("epoch", 0)),
        adam_step=int(manifest.get("adam_step", 0)),
        adam_m=_read_f32(path / "adam_m.f32", pred.param_count, "adam_m.f32"),
        adam_v=_read_f32(path / "adam_v.f32", pred.param_count, "adam_v.f32"),
        cov_mode=CovMode(cov["mode"], cov.get("lam")),
        normalization=None if norm is None else NormStats(*norm),
    )
    return pred, sched, state
