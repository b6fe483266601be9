"""Random input fields: a log-normal trigonometric field and a Gaussian
field with covariance (-d2/dx2 + tau^2)^(-r) under zero Neumann conditions.

Both samplers are deterministic functions of (spec, seed) and draw their
coefficients from an independently seeded PRNG, so sample generation can be
parallelized with reproducible output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import Field, Grid1D


@dataclass(frozen=True)
class TrigGrfSpec:
    """Log-normal field exp(beta * V) where V is a zero-mean Gaussian field
    built from n_modes cosine and n_modes sine modes with unit-normal
    coefficients, scaled by n_modes^(-1/2)."""

    n_modes: int
    beta: float
    grid: Grid1D

    def __post_init__(self) -> None:
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")


@dataclass(frozen=True)
class SpectralGrfSpec:
    """Zero-mean Gaussian field with covariance (-d2/dx2 + tau^2)^(-r),
    Neumann boundary conditions, truncated at k_max cosine modes.

    k_max defaults to grid.m // 2 (resolves up to the grid Nyquist mode).
    """

    tau: float
    r: float
    grid: Grid1D
    k_max: int | None = None

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if not self.r > 0:
            raise ValueError("r must be > 0")
        if self.k_max is None:
            object.__setattr__(self, "k_max", self.grid.m // 2)
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")


def lognormal_field_from_coeffs(
    spec: TrigGrfSpec, cos_coeffs: np.ndarray, sin_coeffs: np.ndarray
) -> Field:
    """Evaluate exp(beta * V) for given mode coefficients (test hook)."""
    cos_coeffs = np.asarray(cos_coeffs, dtype=np.float64)
    sin_coeffs = np.asarray(sin_coeffs, dtype=np.float64)
    if cos_coeffs.shape != (spec.n_modes,) or sin_coeffs.shape != (spec.n_modes,):
        raise ValueError("coefficient vectors must have length n_modes")
    x = spec.grid.nodes
    k = np.arange(1, spec.n_modes + 1)
    phase = np.pi * np.outer(x, k)  # (m, n_modes)
    v = (np.cos(phase) @ cos_coeffs + np.sin(phase) @ sin_coeffs) / np.sqrt(spec.n_modes)
    return Field(spec.grid, np.exp(spec.beta * v))


def sample_lognormal_field(spec: TrigGrfSpec, rng_seed: int) -> Field:
    """Draw one log-normal trigonometric field; strictly positive everywhere."""
    rng = np.random.default_rng(rng_seed)
    cos_coeffs = rng.standard_normal(spec.n_modes)
    sin_coeffs = rng.standard_normal(spec.n_modes)
    return lognormal_field_from_coeffs(spec, cos_coeffs, sin_coeffs)


def neumann_eigenvalues(spec: SpectralGrfSpec) -> np.ndarray:
    """Covariance eigenvalues for modes k = 0..k_max.

    The constant k=0 eigenfunction carries eigenvalue tau^(-2r); mode k >= 1
    carries (pi^2 k^2 + tau^2)^(-r).
    """
    k = np.arange(spec.k_max + 1, dtype=np.float64)
    lam = (np.pi**2 * k**2 + spec.tau**2) ** (-spec.r)
    lam[0] = spec.tau ** (-2.0 * spec.r)
    return lam


def neumann_grf_from_coeffs(spec: SpectralGrfSpec, coeffs: np.ndarray) -> Field:
    """Evaluate the truncated eigen-expansion for given coefficients (test hook).

    field(x) = c_0 * tau^(-r) + sum_k c_k * (pi^2 k^2 + tau^2)^(-r/2) * sqrt(2) * cos(pi k x)
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (spec.k_max + 1,):
        raise ValueError(f"need {spec.k_max + 1} coefficients, got {coeffs.shape}")
    x = spec.grid.nodes
    k = np.arange(1, spec.k_max + 1)
    sqrt_lam = np.sqrt(neumann_eigenvalues(spec))
    values = np.full(spec.grid.m, coeffs[0] * sqrt_lam[0])
    values += np.cos(np.pi * np.outer(x, k)) @ (coeffs[1:] * sqrt_lam[1:] * np.sqrt(2.0))
    return Field(spec.grid, values)


def sample_neumann_grf(spec: SpectralGrfSpec, rng_seed: int) -> Field:
    """Draw one zero-mean Gaussian field from the truncated eigen-expansion."""
    rng = np.random.default_rng(rng_seed)
    return neumann_grf_from_coeffs(spec, rng.standard_normal(spec.k_max + 1))


def threshold_indicator(f: Field) -> Field:
    """Indicator of {f >= 0}: 1.0 where f is nonnegative, 0.0 elsewhere."""
    return Field(f.grid, np.where(f.values >= 0.0, 1.0, 0.0))
