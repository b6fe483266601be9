"""Input-output pair datasets and their on-disk representation.

A dataset directory holds `manifest.json` plus two flat binary files,
`inputs.f64` and `outputs.f64`: little-endian IEEE-754 float64, row-major,
one sample per row. Write followed by read is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .grids import Grid1D

FORMAT_VERSION = "1"
MANIFEST_KEYS = {"format_version", "problem", "n", "m", "lo", "hi", "seed", "sigma", "params"}

STD_FLOOR = 1e-12


@dataclass(frozen=True)
class PairDataset:
    """Ordered collection of (input, output) grid-function pairs.

    `inputs` and `outputs` are (n, m) float64 arrays; `meta` carries the
    manifest (problem name, seed, noise sigma, generator parameters).
    """

    grid: Grid1D
    inputs: np.ndarray
    outputs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        ins = np.ascontiguousarray(np.asarray(self.inputs, dtype=np.float64))
        outs = np.ascontiguousarray(np.asarray(self.outputs, dtype=np.float64))
        if ins.ndim != 2 or outs.ndim != 2:
            raise ValueError("inputs and outputs must be (n, m) arrays")
        if ins.shape != outs.shape:
            raise ValueError(
                f"inputs shape {ins.shape} != outputs shape {outs.shape}"
            )
        if ins.shape[1] != self.grid.m:
            raise ValueError(
                f"sample length {ins.shape[1]} != grid size {self.grid.m}"
            )
        if not np.all(np.isfinite(ins)) or not np.all(np.isfinite(outs)):
            raise ValueError("dataset values must be finite")
        n = ins.shape[0]
        meta = dict(self.meta)
        if "n" in meta and meta["n"] != n:
            raise ValueError(f"manifest n={meta['n']} != sample count {n}")
        meta.setdefault("format_version", FORMAT_VERSION)
        meta.setdefault("problem", "unknown")
        meta["n"] = n
        meta["m"] = self.grid.m
        meta["lo"] = self.grid.lo
        meta["hi"] = self.grid.hi
        meta.setdefault("seed", None)
        meta.setdefault("sigma", 0.0)
        meta.setdefault("params", {})
        object.__setattr__(self, "inputs", ins)
        object.__setattr__(self, "outputs", outs)
        object.__setattr__(self, "meta", meta)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def m(self) -> int:
        return self.grid.m


class NormStats(NamedTuple):
    """Scalar standardization statistics over a whole dataset."""

    in_mean: float
    in_std: float
    out_mean: float
    out_std: float


def write_dataset(ds: PairDataset, path: str | Path) -> None:
    """Write a dataset directory (manifest + inputs.f64 + outputs.f64)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {k: ds.meta[k] for k in sorted(ds.meta)}
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    (path / "inputs.f64").write_bytes(ds.inputs.astype("<f8").tobytes(order="C"))
    (path / "outputs.f64").write_bytes(ds.outputs.astype("<f8").tobytes(order="C"))


def read_dataset(path: str | Path) -> PairDataset:
    """Read a dataset directory written by :func:`write_dataset`.

    Raises FileNotFoundError for missing files and ValueError for an unknown
    format version, size mismatch, or non-finite payload.
    """
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"missing manifest: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unknown dataset format version {version!r}")
    n, m = int(meta["n"]), int(meta["m"])
    grid = Grid1D(float(meta["lo"]), float(meta["hi"]), m)
    arrays = {}
    for name in ("inputs", "outputs"):
        fpath = path / f"{name}.f64"
        if not fpath.is_file():
            raise FileNotFoundError(f"missing data file: {fpath}")
        raw = fpath.read_bytes()
        expected = n * m * 8
        if len(raw) != expected:
            raise ValueError(
                f"{fpath}: expected {expected} bytes for n={n}, m={m}, got {len(raw)}"
            )
        arr = np.frombuffer(raw, dtype="<f8").reshape(n, m).astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{fpath}: non-finite value in data file")
        arrays[name] = arr
    return PairDataset(grid, arrays["inputs"], arrays["outputs"], meta)


def normalize_stats(ds: PairDataset) -> NormStats:
    """Scalar mean/std of inputs and outputs over all n*m values.

    Uses the population convention (denominator n*m); std is floored at
    1e-12 so constant data stays invertible.
    """
    if ds.n < 2:
        raise ValueError(f"normalization statistics need n >= 2, got n={ds.n}")
    return NormStats(
        float(np.mean(ds.inputs)),
        max(float(np.std(ds.inputs)), STD_FLOOR),
        float(np.mean(ds.outputs)),
        max(float(np.std(ds.outputs)), STD_FLOOR),
    )
