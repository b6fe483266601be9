"""Conditional noise predictor eps_hat = f(t, u_t, a).

A 1D UNet: the input field a and the noisy state u_t enter as two channels;
the timestep enters through a sinusoidal embedding injected into each
residual block as a per-channel additive shift. Downsampling is by strided
convolution, upsampling by nearest-neighbor interpolation plus convolution.
The final convolution is zero-initialized so a fresh predictor outputs 0.

Parameters are exposed as one flat vector with a fixed depth-first layout
(`param_layout`), which is also the on-disk checkpoint order. Gradients of
the training loss are exact reverse-mode derivatives with respect to that
vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .diffusion import NoiseSchedule

# The fields here are short 1D signals; intra-op threading costs more in
# synchronization than it buys, and a single thread keeps every reduction
# order fixed so repeated runs are bit-identical.
torch.set_num_threads(1)

TIME_EMBED_BASE = 10000.0


@dataclass(frozen=True)
class ArchSpec:
    """UNet shape: channels per resolution are base_channels * channel_mults[i],
    and each downsampling level halves the length, so inputs must be divisible
    by 2^(len(channel_mults) - 1)."""

    base_channels: int = 16
    channel_mults: tuple[int, ...] = (1, 2, 4)
    blocks_per_res: int = 1
    time_embed_dim: int = 64
    in_channels: int = 2
    groups: int = 8

    def __post_init__(self) -> None:
        object.__setattr__(self, "channel_mults", tuple(self.channel_mults))
        if self.base_channels < 1 or self.blocks_per_res < 1 or self.groups < 1:
            raise ValueError("base_channels, blocks_per_res, groups must be >= 1")
        if len(self.channel_mults) < 1 or any(m < 1 for m in self.channel_mults):
            raise ValueError("channel_mults must be a nonempty tuple of positive ints")
        if self.in_channels != 2:
            raise ValueError("in_channels is fixed to 2 (input field and noisy state)")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2 != 0:
            raise ValueError("time_embed_dim must be a positive even integer")

    @property
    def length_divisor(self) -> int:
        return 2 ** (len(self.channel_mults) - 1)

    def to_dict(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "channel_mults": list(self.channel_mults),
            "blocks_per_res": self.blocks_per_res,
            "time_embed_dim": self.time_embed_dim,
            "in_channels": self.in_channels,
            "groups": self.groups,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        known = {
            "base_channels", "channel_mults", "blocks_per_res",
            "time_embed_dim", "in_channels", "groups",
        }
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown arch keys: {sorted(unknown)}")
        d = dict(d)
        if "channel_mults" in d:
            d["channel_mults"] = tuple(d["channel_mults"])
        return cls(**d)


def _group_count(requested: int, channels: int) -> int:
    # group norm needs channels % groups == 0; fall back to the gcd
    return math.gcd(requested, channels)


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal timestep embedding [sin(t*w_0..), cos(t*w_0..)] with
    w_i = 10000^(-2i/dim), i = 0..dim/2-1."""
    if dim < 2 or dim % 2 != 0:
        raise ValueError("embedding dim must be a positive even integer")
    if t < 0:
        raise ValueError("t must be >= 0")
    i = np.arange(dim // 2, dtype=np.float64)
    omega = TIME_EMBED_BASE ** (-2.0 * i / dim)
    ang = float(t) * omega
    return np.concatenate([np.sin(ang), np.cos(ang)])


def _time_embedding_torch(t: torch.Tensor, dim: int, dtype: torch.dtype) -> torch.Tensor:
    i = torch.arange(dim // 2, dtype=dtype)
    omega = TIME_EMBED_BASE ** (-2.0 * i / dim)
    ang = t.to(dtype)[:, None] * omega[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class _ResBlock1D(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_group_count(groups, in_ch), in_ch)
        self.conv1 = nn.Conv1d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(_group_count(groups, out_ch), out_ch)
        self.conv2 = nn.Conv1d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv1d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(emb))[:, :, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class _UNet1D(nn.Module):
    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        chs = [arch.base_channels * m for m in arch.channel_mults]
        levels = len(chs)
        d = arch.time_embed_dim

        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.stem = nn.Conv1d(arch.in_channels, chs[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        ch = chs[0]
        for i, out_ch in enumerate(chs):
            blocks = nn.ModuleList()
            for _ in range(arch.blocks_per_res):
                blocks.append(_ResBlock1D(ch, out_ch, d, arch.groups))
                ch = out_ch
            self.down_blocks.append(blocks)
            if i < levels - 1:
                self.downsamples.append(nn.Conv1d(ch, ch, 3, stride=2, padding=1))

        self.mid1 = _ResBlock1D(ch, ch, d, arch.groups)
        self.mid2 = _ResBlock1D(ch, ch, d, arch.groups)

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for i in reversed(range(levels)):
            out_ch = chs[i]
            blocks = nn.ModuleList()
            ch = ch + chs[i]  # skip concatenation
            for _ in range(arch.blocks_per_res):
                blocks.append(_ResBlock1D(ch, out_ch, d, arch.groups))
                ch = out_ch
            self.up_blocks.append(blocks)
            if i > 0:
                self.upsamples.append(nn.Conv1d(ch, ch, 3, padding=1))

        self.out_norm = nn.GroupNorm(_group_count(arch.groups, chs[0]), chs[0])
        self.out_conv = nn.Conv1d(chs[0], 1, 3, padding=1)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        levels = len(self.arch.channel_mults)
        if x.shape[-1] % self.arch.length_divisor != 0:
            raise ValueError(
                f"input length {x.shape[-1]} not divisible by {self.arch.length_divisor}"
            )
        emb = self.time_mlp(_time_embedding_torch(t, self.arch.time_embed_dim, x.dtype))

        h = self.stem(x)
        skips = []
        for i in range(levels):
            for block in self.down_blocks[i]:
                h = block(h, emb)
            skips.append(h)
            if i < levels - 1:
                h = self.downsamples[i](h)

        h = self.mid1(h, emb)
        h = self.mid2(h, emb)

        for j, i in enumerate(reversed(range(levels))):
            h = torch.cat([h, skips[i]], dim=1)
            for block in self.up_blocks[j]:
                h = block(h, emb)
            if i > 0:
                h = F.interpolate(h, scale_factor=2.0, mode="nearest")
                h = self.upsamples[j](h)

        return self.out_conv(F.silu(self.out_norm(h))).squeeze(1)


class EpsilonPredictor:
    """UNet noise predictor with a flat, layout-addressed parameter vector.

    Calling the predictor with numpy arrays evaluates the network without
    gradients; `ut` may be a single vector (m,) or a batch (B, m), and `a`
    broadcasts across the batch.
    """

    def __init__(self, arch: ArchSpec, dtype: str = "float32"):
        if dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")
        self.arch = arch
        self.dtype = dtype
        self.torch_dtype = torch.float64 if dtype == "float64" else torch.float32
        self.net = _UNet1D(arch).to(self.torch_dtype)
        self.net.eval()
        with torch.no_grad():  # blank shell; values come from init_params/set_params
            for p in self.net.parameters():
                p.zero_()
        layout = []
        offset = 0
        for name, p in self.net.named_parameters():
            layout.append((name, offset, tuple(p.shape)))
            offset += p.numel()
        self.param_layout: list[tuple[str, int, tuple[int, ...]]] = layout
        self.param_count: int = offset

    def get_params(self) -> np.ndarray:
        with torch.no_grad():
            return np.concatenate(
                [p.detach().numpy().ravel() for _, p in self.net.named_parameters()]
            )

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat)
        if flat.shape != (self.param_count,):
            raise ValueError(
                f"expected {self.param_count} parameters, got shape {flat.shape}"
            )
        with torch.no_grad():
            for (_, offset, shape), (_, p) in zip(
                self.param_layout, self.net.named_parameters()
            ):
                chunk = flat[offset : offset + int(np.prod(shape, dtype=int))]
                p.copy_(torch.as_tensor(chunk.reshape(shape), dtype=self.torch_dtype))

    @property
    def params(self) -> np.ndarray:
        return self.get_params()

    def __call__(self, t: int, ut: np.ndarray, a: np.ndarray) -> np.ndarray:
        ut = np.asarray(ut, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        squeeze = ut.ndim == 1
        if squeeze:
            ut = ut[None, :]
        if a.ndim == 1:
            a = np.broadcast_to(a, ut.shape)
        if a.shape != ut.shape:
            raise ValueError(f"a shape {a.shape} incompatible with ut shape {ut.shape}")
        x = torch.as_tensor(np.stack([a, ut], axis=1), dtype=self.torch_dtype)
        tt = torch.full((ut.shape[0],), int(t), dtype=torch.int64)
        with torch.no_grad():
            out = self.net(x, tt)
        out = out.numpy().astype(np.float64)
        return out[0] if squeeze else out


def init_params(arch: ArchSpec, rng_seed: int, dtype: str = "float32") -> EpsilonPredictor:
    """Deterministic initialization: fan-in-scaled uniform conv/linear
    weights, zero biases, unit norm scales, and a zero final convolution."""
    pred = EpsilonPredictor(arch, dtype=dtype)
    rng = np.random.default_rng(rng_seed)
    with torch.no_grad():
        for name, p in pred.net.named_parameters():
            if name.startswith("out_conv."):
                p.zero_()
            elif p.ndim >= 2:  # conv or linear weight
                fan_in = int(np.prod(p.shape[1:]))
                bound = 1.0 / math.sqrt(fan_in)
                vals = rng.uniform(-bound, bound, size=tuple(p.shape))
                p.copy_(torch.as_tensor(vals, dtype=pred.torch_dtype))
            elif name.endswith(".bias"):
                p.zero_()
            else:  # group-norm scale
                p.fill_(1.0)
    return pred


def _stack_batch(batch) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    ts = np.array([int(b[0]) for b in batch], dtype=np.int64)
    u0 = np.stack([np.asarray(b[1], dtype=np.float64) for b in batch])
    a = np.stack([np.asarray(b[2], dtype=np.float64) for b in batch])
    eps = np.stack([np.asarray(b[3], dtype=np.float64) for b in batch])
    if not u0.shape == a.shape == eps.shape:
        raise ValueError("batch elements must share one shape")
    return ts, u0, a, eps


def loss_and_grad(
    pred: EpsilonPredictor,
    batch,
    sched: NoiseSchedule,
) -> tuple[float, np.ndarray]:
    """Batch-mean noise-prediction loss and its exact parameter gradient.

    `batch` is a sequence of (t, u0, a, eps) tuples. The loss is the mean
    over batch elements of the per-point mean of (eps - eps_hat)^2, and the
    gradient is taken with respect to the flat parameter vector, in layout
    order.
    """
    ts, u0, a, eps = _stack_batch(batch)
    if np.any(ts < 1) or np.any(ts > sched.t_max):
        raise ValueError(f"timesteps must lie in 1..{sched.t_max}")
    abar = sched.alpha_bar[ts - 1]
    ut = np.sqrt(abar)[:, None] * u0 + np.sqrt(1.0 - abar)[:, None] * eps

    x = torch.as_tensor(np.stack([a, ut], axis=1), dtype=pred.torch_dtype)
    tt = torch.as_tensor(ts)
    target = torch.as_tensor(eps, dtype=pred.torch_dtype)
    params = [p for _, p in pred.net.named_parameters()]
    out = pred.net(x, tt)
    loss = ((target - out) ** 2).mean()
    grads = torch.autograd.grad(loss, params)
    flat = np.concatenate([g.detach().numpy().ravel() for g in grads])
    return float(loss.item()), flat
