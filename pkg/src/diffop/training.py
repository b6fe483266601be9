"""Stochastic minimization of the noise-prediction loss with Adam.

Each epoch shuffles the dataset with a seeded generator, and every sample
visit draws a fresh uniform timestep and a fresh standard-normal noise
field. The per-epoch generator is derived from (seed, epoch), so training
resumed from a checkpoint replays exactly the same randomness as an
uninterrupted run.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import TrainState
from .datasets import PairDataset, normalize_stats
from .diffusion import CovMode, NoiseSchedule
from .unet import ArchSpec, EpsilonPredictor, init_params, loss_and_grad


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr0: float
    lr_halving_period: int = 100  # epochs; 0 keeps the learning rate fixed
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    cov_mode: CovMode = field(default_factory=CovMode)
    normalize: bool = False
    max_grad_norm: float | None = None  # off by default

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be > 0")
        if self.lr_halving_period < 0:
            raise ValueError("lr_halving_period must be >= 0")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch index: lr0 halved once per
        lr_halving_period epochs (epochs 1..period run at lr0)."""
        if self.lr_halving_period == 0:
            return self.lr0
        return self.lr0 * 2.0 ** (-((epoch - 1) // self.lr_halving_period))


def adam_step(
    params: np.ndarray,
    grad: np.ndarray,
    moments: tuple[np.ndarray, np.ndarray],
    step_index: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """One Adam update with bias correction; returns new params and moments.

    m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2;
    params <- params - lr * m_hat / (sqrt(v_hat) + eps).
    """
    params = np.asarray(params)
    grad = np.asarray(grad)
    m, v = moments
    if not params.shape == grad.shape == m.shape == v.shape:
        raise ValueError("params, grad, and moments must share one shape")
    if step_index < 1:
        raise ValueError("step_index must be >= 1")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step_index)
    v_hat = v / (1.0 - beta2**step_index)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, (m, v)


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(epoch)])


def train(
    ds: PairDataset,
    arch: ArchSpec,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    *,
    dtype: str = "float32",
    log_path: str | Path | None = None,
    predictor: EpsilonPredictor | None = None,
    state: TrainState | None = None,
) -> tuple[EpsilonPredictor, list[dict]]:
    """Run the training stage and return (predictor, per-epoch log).

    Pass `predictor` and `state` from a loaded checkpoint to resume; the run
    then continues at epoch state.epoch + 1 and reproduces the remaining
    epochs of an uninterrupted run with the same config.
    """
    if ds.n == 0:
        raise ValueError("dataset is empty")
    if ds.m % arch.length_divisor != 0:
        raise ValueError(
            f"grid size {ds.m} not divisible by {arch.length_divisor} required by arch"
        )

    norm = normalize_stats(ds) if cfg.normalize else None
    a_data = ds.inputs
    u_data = ds.outputs
    if norm is not None:
        a_data = (a_data - norm.in_mean) / norm.in_std
        u_data = (u_data - norm.out_mean) / norm.out_std

    if predictor is None:
        predictor = init_params(arch, cfg.seed, dtype=dtype)
    if state is None:
        state = TrainState(cov_mode=cfg.cov_mode, normalization=norm)
    params = predictor.get_params()
    zeros = np.zeros_like(params)
    m = zeros.copy() if state.adam_m is None else state.adam_m.astype(params.dtype)
    v = zeros.copy() if state.adam_v is None else state.adam_v.astype(params.dtype)
    step = state.adam_step

    log: list[dict] = []
    log_file = open(log_path, "a", encoding="utf-8") if log_path is not None else None
    try:
        for epoch in range(state.epoch + 1, cfg.epochs + 1):
            t_start = time.perf_counter()
            rng = _epoch_rng(cfg.seed, epoch)
            order = rng.permutation(ds.n)
            lr = cfg.lr_at(epoch)
            loss_sum = 0.0
            for start in range(0, ds.n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                ts = rng.integers(1, sched.t_max + 1, size=idx.size)
                eps = rng.standard_normal((idx.size, ds.m))
                batch = [
                    (int(ts[j]), u_data[i], a_data[i], eps[j])
                    for j, i in enumerate(idx)
                ]
                loss, grad = loss_and_grad(predictor, batch, sched)
                if not np.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}: {loss}"
                    )
                if cfg.max_grad_norm is not None:
                    gnorm = float(np.linalg.norm(grad))
                    if gnorm > cfg.max_grad_norm:
                        grad = grad * (cfg.max_grad_norm / gnorm)
                step += 1
                params, (m, v) = adam_step(
                    params, grad.astype(params.dtype), (m, v), step, lr,
                    cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                )
                predictor.set_params(params)
                loss_sum += loss * idx.size
            record = {
                "epoch": epoch,
                "mean_loss": loss_sum / ds.n,
                "lr": lr,
                "wall_ms": (time.perf_counter() - t_start) * 1e3,
            }
            log.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()

    state.epoch = cfg.epochs
    state.adam_step = step
    state.adam_m = m
    state.adam_v = v
    state.cov_mode = cfg.cov_mode
    state.normalization = norm
    return predictor, log
