"""Ancestral sampling, accuracy/uncertainty metrics, and the two
diagnostic experiments (joint histograms, noise-recovery check).

Per-input sampling seeds follow the house rule seed XOR index, so test
inputs can be evaluated in parallel while the full report stays
reproducible bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datasets import NormStats, PairDataset
from .diffusion import CovMode, NoiseSchedule, reverse_step
from .grids import Field


@dataclass
class EvalReport:
    """Test-set metrics: mean relative L2 error of the predicted mean field
    and the sample-spread score (L2 norm of the pointwise std, divided by
    the sample count, averaged over inputs)."""

    mrle: float
    mstd: float
    mstd_defined: bool
    per_sample_rle: np.ndarray
    n_samples_per_input: int
    predicted_mean: np.ndarray | None = None
    predicted_std: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "mrle": self.mrle,
            "mstd": self.mstd,
            "mstd_defined": self.mstd_defined,
            "per_sample_rle": [float(x) for x in self.per_sample_rle],
            "n_samples_per_input": self.n_samples_per_input,
            "predicted_mean": None
            if self.predicted_mean is None
            else self.predicted_mean.tolist(),
            "predicted_std": None
            if self.predicted_std is None
            else self.predicted_std.tolist(),
        }

    def write_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "EvalReport":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(
            mrle=d["mrle"],
            mstd=d["mstd"],
            mstd_defined=d["mstd_defined"],
            per_sample_rle=np.asarray(d["per_sample_rle"], dtype=np.float64),
            n_samples_per_input=d["n_samples_per_input"],
            predicted_mean=None
            if d["predicted_mean"] is None
            else np.asarray(d["predicted_mean"]),
            predicted_std=None
            if d["predicted_std"] is None
            else np.asarray(d["predicted_std"]),
        )


def input_seed(base_seed: int, index: int) -> int:
    """Per-input sampling seed: base_seed XOR input index."""
    return int(base_seed) ^ int(index)


def sample_conditional(
    pred,
    sched: NoiseSchedule,
    cov: CovMode,
    a: Field,
    n_samples: int,
    rng_seed: int,
    norm: NormStats | None = None,
) -> list[Field]:
    """Draw n_samples solution fields for one input by ancestral sampling.

    Each chain starts from standard normal noise and iterates the reverse
    step from t = T down to 1, with the predictor evaluated on all chains
    at once. If normalization stats are given, the input is standardized
    before sampling and the outputs are mapped back before return.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    a_vec = a.values
    if norm is not None:
        a_vec = (a_vec - norm.in_mean) / norm.in_std
    rng = np.random.default_rng(rng_seed)
    u = rng.standard_normal((n_samples, a.grid.m))
    for t in range(sched.t_max, 0, -1):
        eps_hat = np.asarray(pred(t, u, a_vec), dtype=np.float64)
        noise = rng.standard_normal(u.shape)
        u = reverse_step(sched, cov, eps_hat, u, t, noise)
    if norm is not None:
        u = u * norm.out_std + norm.out_mean
    return [Field(a.grid, row) for row in u]


def relative_l2(prediction: np.ndarray, truth: np.ndarray) -> float:
    denom = float(np.linalg.norm(truth))
    if denom == 0.0:
        raise ValueError("relative error undefined for zero-norm truth")
    return float(np.linalg.norm(prediction - truth)) / denom


def mrle(test: PairDataset, predictions: Sequence[np.ndarray | Field]) -> float:
    """Mean over the test set of ||prediction - truth||_2 / ||truth||_2."""
    if len(predictions) != test.n:
        raise ValueError(f"got {len(predictions)} predictions for {test.n} test pairs")
    vals = [
        relative_l2(p.values if isinstance(p, Field) else np.asarray(p), test.outputs[i])
        for i, p in enumerate(predictions)
    ]
    return float(np.mean(vals))


def pointwise_std(samples: np.ndarray) -> np.ndarray:
    """Population std across the sample axis of an (n_s, m) stack."""
    return np.std(np.asarray(samples, dtype=np.float64), axis=0, ddof=0)


def mstd(
    test: PairDataset,
    sample_sets: Sequence[np.ndarray],
    n_s: int,
    sqrt_n: bool = False,
) -> float:
    """Sample-spread score, averaged over test inputs.

    Per input: the L2 norm of the pointwise std across the n_s samples,
    divided by n_s (or sqrt(n_s) with sqrt_n=True). With n_s = 1 the spread
    is undefined and reported as 0; callers should carry an explicit flag.
    """
    if len(sample_sets) != test.n:
        raise ValueError(f"got {len(sample_sets)} sample sets for {test.n} test pairs")
    if n_s < 2:
        return 0.0
    denom = np.sqrt(n_s) if sqrt_n else float(n_s)
    vals = []
    for samples in sample_sets:
        samples = np.asarray(samples, dtype=np.float64)
        if samples.shape[0] != n_s:
            raise ValueError(f"sample set has {samples.shape[0]} rows, expected {n_s}")
        vals.append(float(np.linalg.norm(pointwise_std(samples))) / denom)
    return float(np.mean(vals))


def _sample_stack(pred, sched, cov, test, n_s, seed, norm) -> list[np.ndarray]:
    stacks = []
    for i in range(test.n):
        fields = sample_conditional(
            pred, sched, cov, Field(test.grid, test.inputs[i]),
            n_s, input_seed(seed, i), norm,
        )
        stacks.append(np.stack([f.values for f in fields]))
    return stacks


def evaluate(
    pred,
    sched: NoiseSchedule,
    cov: CovMode,
    test: PairDataset,
    n_s: int,
    seed: int,
    norm: NormStats | None = None,
    store_index: int | None = None,
    mstd_sqrt_n: bool = False,
) -> EvalReport:
    """Sample every test input, then score the mean fields and the spread."""
    if test.n == 0:
        raise ValueError("test dataset is empty")
    stacks = _sample_stack(pred, sched, cov, test, n_s, seed, norm)
    means = [s.mean(axis=0) for s in stacks]
    rles = np.array([relative_l2(means[i], test.outputs[i]) for i in range(test.n)])
    report = EvalReport(
        mrle=float(rles.mean()),
        mstd=mstd(test, stacks, n_s, sqrt_n=mstd_sqrt_n),
        mstd_defined=n_s >= 2,
        per_sample_rle=rles,
        n_samples_per_input=n_s,
    )
    if store_index is not None:
        report.predicted_mean = means[store_index]
        report.predicted_std = pointwise_std(stacks[store_index])
    return report


def joint_histogram(
    pred,
    sched: NoiseSchedule,
    cov: CovMode,
    inputs: Sequence[Field],
    x1_index: int,
    x2_index: int,
    bins: int,
    exact_solver: Callable[[Field], Field],
    seed: int = 0,
    norm: NormStats | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """2D histograms of (u(x1), u(x2)): one model sample per input next to
    the exact solution, binned on a shared range.

    Returns (model_counts, exact_counts, x1_edges, x2_edges); both count
    matrices total len(inputs).
    """
    if len(inputs) == 0:
        raise ValueError("inputs must be nonempty")
    m = inputs[0].grid.m
    for idx in (x1_index, x2_index):
        if not 0 <= idx < m:
            raise ValueError(f"grid index {idx} out of range 0..{m - 1}")
    model_pts = np.empty((len(inputs), 2))
    exact_pts = np.empty((len(inputs), 2))
    for i, a in enumerate(inputs):
        sample = sample_conditional(
            pred, sched, cov, a, 1, input_seed(seed, i), norm
        )[0].values
        exact = exact_solver(a).values
        model_pts[i] = sample[x1_index], sample[x2_index]
        exact_pts[i] = exact[x1_index], exact[x2_index]
    both = np.vstack([model_pts, exact_pts])
    x1_edges = np.linspace(both[:, 0].min(), both[:, 0].max() + 1e-12, bins + 1)
    x2_edges = np.linspace(both[:, 1].min(), both[:, 1].max() + 1e-12, bins + 1)
    model_counts, _, _ = np.histogram2d(
        model_pts[:, 0], model_pts[:, 1], bins=(x1_edges, x2_edges)
    )
    exact_counts, _, _ = np.histogram2d(
        exact_pts[:, 0], exact_pts[:, 1], bins=(x1_edges, x2_edges)
    )
    return model_counts, exact_counts, x1_edges, x2_edges


def write_histogram_csv(
    path: str | Path,
    model_counts: np.ndarray,
    exact_counts: np.ndarray,
    x1_edges: np.ndarray,
    x2_edges: np.ndarray,
) -> None:
    """CSV layout: two bin-edge header rows, then the model count matrix,
    then the exact-solver count matrix, row-labelled in column one."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x1_edges," + ",".join(repr(float(v)) for v in x1_edges) + "\n")
        fh.write("x2_edges," + ",".join(repr(float(v)) for v in x2_edges) + "\n")
        for label, counts in (("model", model_counts), ("exact", exact_counts)):
            for row in counts:
                fh.write(label + "," + ",".join(str(int(v)) for v in row) + "\n")


def recovery_stats(
    sample_sets: Sequence[np.ndarray], truths: np.ndarray
) -> tuple[float, float]:
    """Noise magnitude and band coverage from per-input sample stacks.

    sigma_hat averages the pointwise std over all inputs and grid points;
    coverage is the fraction of truth values inside mean +/- 2*std.
    """
    stds = np.stack([pointwise_std(s) for s in sample_sets])
    means = np.stack([np.asarray(s).mean(axis=0) for s in sample_sets])
    truths = np.asarray(truths, dtype=np.float64)
    if truths.shape != means.shape:
        raise ValueError("truths must match sample-set count and grid size")
    sigma_hat = float(stds.mean())
    coverage = float(np.mean(np.abs(truths - means) <= 2.0 * stds))
    return sigma_hat, coverage


def ci_recovery(
    pred,
    sched: NoiseSchedule,
    cov: CovMode,
    test_noise_free: PairDataset,
    n_s: int,
    seed: int,
    norm: NormStats | None = None,
) -> tuple[float, float]:
    """Estimate the training-noise magnitude from sample spread and check
    +/-2 std coverage of the noise-free truth. Needs n_s >= 2."""
    if n_s < 2:
        raise ValueError("ci_recovery needs n_s >= 2")
    stacks = _sample_stack(pred, sched, cov, test_noise_free, n_s, seed, norm)
    return recovery_stats(stacks, test_noise_free.outputs)
