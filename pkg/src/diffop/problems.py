"""Ground-truth pair generation for the two 1D benchmark problems.

elliptic1d: -(a(x) u'(x))' = 0 on (-1, 1), u(-1) = 0, u(1) = 1, with a
log-normal random coefficient. The solution is the normalized cumulative
integral of 1/a, evaluated here by composite trapezoidal quadrature.

advection1d: u_t + u_x = 0 on (0, 1) with zero inflow at x = 0; the input
is a thresholded Gaussian field used as initial condition and the output is
the exact transport solution at t_f = 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import PairDataset
from .grids import Field, Grid1D
from .random_fields import (
    SpectralGrfSpec,
    TrigGrfSpec,
    sample_lognormal_field,
    sample_neumann_grf,
    threshold_indicator,
)

PROBLEMS = ("elliptic1d", "advection1d")

ELLIPTIC_N_MODES = 5
ELLIPTIC_BETA = 0.1
ADVECTION_TAU = 100.0
ADVECTION_R = 2.0
ADVECTION_T_FINAL = 0.5


@dataclass(frozen=True)
class NoiseSpec:
    """Additive homoscedastic Gaussian output noise with std sigma."""

    sigma: float = 0.0

    def __post_init__(self) -> None:
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")


def solve_elliptic1d(a: Field) -> Field:
    """Solution u with u(lo) = 0, u(hi) = 1 and flux a*u' constant.

    u(x) = (integral of 1/a over the domain)^(-1) * integral of 1/a up to x,
    computed with the composite trapezoidal rule on the grid nodes. The
    result is nondecreasing because 1/a > 0.
    """
    if a.grid.periodic:
        raise ValueError("elliptic1d needs a closed (non-periodic) grid")
    if not np.all(a.values > 0):
        raise ValueError("coefficient field must be strictly positive")
    w = 1.0 / a.values
    h = a.grid.h
    cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (w[1:] + w[:-1]))])
    return Field(a.grid, cum / cum[-1])


def solve_advection1d(u0: Field, t_f: float) -> Field:
    """Exact transport solution u(x, t_f) = u0(x - t_f) with zero inflow.

    Nodes with x - t_f below the left endpoint take the inflow value 0;
    off-grid foot points are evaluated by linear interpolation of u0.
    """
    if not 0.0 <= t_f <= 1.0:
        raise ValueError(f"t_f must be in [0, 1], got {t_f}")
    x = u0.grid.nodes
    foot = x - t_f
    values = np.where(
        foot >= u0.grid.lo,
        np.interp(foot, x, u0.values),
        0.0,
    )
    return Field(u0.grid, values)


def corrupt_outputs(ds: PairDataset, noise: NoiseSpec, rng_seed: int) -> PairDataset:
    """Replace outputs by u + sigma*z with z i.i.d. standard normal per point.

    Inputs are preserved bit-exactly; the manifest sigma is set to the noise
    level. sigma = 0 leaves the outputs untouched.
    """
    meta = dict(ds.meta)
    meta["sigma"] = noise.sigma
    if noise.sigma == 0.0:
        return PairDataset(ds.grid, ds.inputs, ds.outputs, meta)
    rng = np.random.default_rng(rng_seed)
    noisy = ds.outputs + noise.sigma * rng.standard_normal(ds.outputs.shape)
    return PairDataset(ds.grid, ds.inputs, noisy, meta)


def sample_seed(base_seed: int, index: int) -> int:
    """Per-sample PRNG seed: base_seed XOR sample index."""
    return int(base_seed) ^ int(index)


def build_dataset(
    problem: str,
    n: int,
    m: int,
    base_seed: int,
    noise: NoiseSpec = NoiseSpec(),
) -> PairDataset:
    """Generate n input-output pairs for one of the benchmark problems.

    Per-sample seeds are base_seed XOR index, so regeneration with the same
    arguments is bit-identical and samples can be produced in parallel.
    Noise corruption (seeded by base_seed) is applied last.
    """
    if problem not in PROBLEMS:
        raise ValueError(f"unknown problem {problem!r}; choose from {PROBLEMS}")
    if n < 1:
        raise ValueError("n must be >= 1")
    if m < 2:
        raise ValueError("m must be >= 2")

    if problem == "elliptic1d":
        grid = Grid1D(-1.0, 1.0, m)
        spec = TrigGrfSpec(ELLIPTIC_N_MODES, ELLIPTIC_BETA, grid)
        params = {
            "n_modes": spec.n_modes,
            "beta": spec.beta,
            "seed_rule": "xor_index",
        }
        inputs = np.empty((n, m))
        outputs = np.empty((n, m))
        for i in range(n):
            a = sample_lognormal_field(spec, sample_seed(base_seed, i))
            inputs[i] = a.values
            outputs[i] = solve_elliptic1d(a).values
    else:
        grid = Grid1D(0.0, 1.0, m)
        spec = SpectralGrfSpec(ADVECTION_TAU, ADVECTION_R, grid)
        params = {
            "tau": spec.tau,
            "r": spec.r,
            "k_max": spec.k_max,
            "t_final": ADVECTION_T_FINAL,
            "seed_rule": "xor_index",
        }
        inputs = np.empty((n, m))
        outputs = np.empty((n, m))
        for i in range(n):
            raw = sample_neumann_grf(spec, sample_seed(base_seed, i))
            u0 = threshold_indicator(raw)
            inputs[i] = u0.values
            outputs[i] = solve_advection1d(u0, ADVECTION_T_FINAL).values

    meta = {
        "problem": problem,
        "seed": int(base_seed),
        "sigma": 0.0,
        "params": params,
    }
    ds = PairDataset(grid, inputs, outputs, meta)
    return corrupt_outputs(ds, noise, base_seed)
