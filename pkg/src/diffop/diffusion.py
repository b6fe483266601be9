"""Denoising-diffusion building blocks shared by training and sampling.

Conventions: timesteps t run 1..T and schedule arrays are 0-indexed, so
beta[t-1] is the step-t variance. alpha_bar_prev(t) returns the cumulative
product one step earlier, with the t = 1 value defined as 1.

Forward marginal:   u_t = sqrt(abar_t) * u0 + sqrt(1 - abar_t) * eps
Reverse-step mean:  m   = (u_t - (1 - alpha_t)/sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
Reverse covariance: posterior variance (noise-free targets), beta_t
(Gaussian-noise targets), or a convex mix of the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SCHEDULE_KINDS = ("linear", "cosine")
COV_MODES = ("noise_free", "gaussian_noise", "mixed")

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 0.02
LINEAR_REFERENCE_T = 1000
COSINE_OFFSET = 0.008
BETA_CLIP = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise variances and derived quantities for t = 1..T."""

    kind: str
    t_max: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray

    def __post_init__(self) -> None:
        if not (np.all(self.beta > 0) and np.all(self.beta < 1)):
            raise ValueError("schedule requires 0 < beta_t < 1")
        if not np.all(np.diff(self.alpha_bar) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")

    def alpha_bar_prev(self, t: int) -> float:
        return 1.0 if t == 1 else float(self.alpha_bar[t - 2])

    def check_t(self, t: int) -> None:
        if not 1 <= t <= self.t_max:
            raise ValueError(f"t must be in 1..{self.t_max}, got {t}")


@dataclass(frozen=True)
class CovMode:
    """Reverse-step covariance selector.

    `lam` is the mixing weight for the 'mixed' mode (posterior-variance
    fraction) and must be given exactly when mode == 'mixed'.
    """

    mode: str = "noise_free"
    lam: float | None = None

    def __post_init__(self) -> None:
        if self.mode not in COV_MODES:
            raise ValueError(f"unknown covariance mode {self.mode!r}")
        if self.mode == "mixed":
            if self.lam is None or not 0.0 <= self.lam <= 1.0:
                raise ValueError("mixed mode needs lam in [0, 1]")
        elif self.lam is not None:
            raise ValueError("lam is only meaningful for mode 'mixed'")


def make_schedule(kind: str, t_max: int) -> NoiseSchedule:
    """Build a linear or cosine variance schedule of length t_max.

    linear: beta_t linearly spaced from 1e-4*(1000/T) to 0.02*(1000/T).
    cosine: abar_t = f(t)/f(0) with f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2),
    s = 0.008, converted to beta_t = 1 - abar_t/abar_{t-1} and clipped at
    0.999; the stored alpha_bar is the cumulative product of the clipped
    alphas.
    """
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}; choose from {SCHEDULE_KINDS}")
    if t_max < 2:
        raise ValueError(f"t_max must be >= 2, got {t_max}")

    if kind == "linear":
        scale = LINEAR_REFERENCE_T / t_max
        beta = np.linspace(scale * LINEAR_BETA_START, scale * LINEAR_BETA_END, t_max)
        beta = np.clip(beta, None, BETA_CLIP)
    else:
        s = COSINE_OFFSET

        def f(t: np.ndarray) -> np.ndarray:
            return np.cos(((t / t_max + s) / (1.0 + s)) * (np.pi / 2.0)) ** 2

        abar = f(np.arange(t_max + 1, dtype=np.float64))
        abar /= abar[0]
        beta = np.clip(1.0 - abar[1:] / abar[:-1], None, BETA_CLIP)

    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    posterior_var = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    return NoiseSchedule(kind, t_max, beta, alpha, alpha_bar, posterior_var)


def forward_marginal_sample(
    sched: NoiseSchedule, u0: np.ndarray, t: int, eps: np.ndarray
) -> np.ndarray:
    """Sample u_t | u0 in closed form: sqrt(abar_t)*u0 + sqrt(1-abar_t)*eps."""
    sched.check_t(t)
    u0 = np.asarray(u0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != u0.shape:
        raise ValueError(f"eps shape {eps.shape} != u0 shape {u0.shape}")
    abar = sched.alpha_bar[t - 1]
    return np.sqrt(abar) * u0 + np.sqrt(1.0 - abar) * eps


def true_posterior_params(
    sched: NoiseSchedule, u0: np.ndarray, ut: np.ndarray, t: int
) -> tuple[np.ndarray, float]:
    """Gaussian parameters of the exact single-step reverse conditional.

    mean = [sqrt(alpha_t)(1 - abar_{t-1}) u_t + sqrt(abar_{t-1}) beta_t u0]
           / (1 - abar_t),  var = posterior_var_t (zero at t = 1).
    """
    sched.check_t(t)
    u0 = np.asarray(u0, dtype=np.float64)
    ut = np.asarray(ut, dtype=np.float64)
    beta = sched.beta[t - 1]
    alpha = sched.alpha[t - 1]
    abar = sched.alpha_bar[t - 1]
    abar_prev = sched.alpha_bar_prev(t)
    mean = (
        np.sqrt(alpha) * (1.0 - abar_prev) * ut + np.sqrt(abar_prev) * beta * u0
    ) / (1.0 - abar)
    return mean, float(sched.posterior_var[t - 1])


def reverse_step_variance(sched: NoiseSchedule, cov: CovMode, t: int) -> float:
    """Reverse-transition variance at step t under the given covariance mode."""
    sched.check_t(t)
    post = float(sched.posterior_var[t - 1])
    beta = float(sched.beta[t - 1])
    if cov.mode == "noise_free":
        return post
    if cov.mode == "gaussian_noise":
        return beta
    return cov.lam * post + (1.0 - cov.lam) * beta


def reverse_step(
    sched: NoiseSchedule,
    cov: CovMode,
    eps_hat: np.ndarray,
    ut: np.ndarray,
    t: int,
    noise: np.ndarray,
) -> np.ndarray:
    """One ancestral-sampling step u_t -> u_{t-1}.

    Returns m + sqrt(var)*noise with the noise-prediction mean; in
    noise-free mode the t = 1 step is deterministic (zero variance).
    """
    sched.check_t(t)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    ut = np.asarray(ut, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if eps_hat.shape != ut.shape or noise.shape != ut.shape:
        raise ValueError("eps_hat, ut, and noise must share one shape")
    alpha = sched.alpha[t - 1]
    abar = sched.alpha_bar[t - 1]
    mean = (ut - (1.0 - alpha) / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
    var = reverse_step_variance(sched, cov, t)
    return mean + np.sqrt(var) * noise


def loss_target(
    sched: NoiseSchedule,
    u0: np.ndarray,
    a: np.ndarray,
    t: int,
    eps: np.ndarray,
    predictor,
) -> float:
    """Per-sample training loss: grid-mean of (eps - eps_hat)^2.

    The predictor is called as predictor(t, u_t, a) with u_t built from the
    closed-form forward marginal. The per-point mean keeps the loss scale
    independent of the grid size.
    """
    u0 = np.asarray(u0, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if not u0.shape == a.shape == eps.shape:
        raise ValueError("u0, a, and eps must share one shape")
    ut = forward_marginal_sample(sched, u0, t, eps)
    eps_hat = np.asarray(predictor(t, ut, a), dtype=np.float64)
    if eps_hat.shape != eps.shape:
        raise ValueError(f"predictor returned shape {eps_hat.shape}, expected {eps.shape}")
    resid = eps - eps_hat
    return float(np.mean(resid * resid))


def kl_diag_gaussian(m1: np.ndarray, v1: float, m2: np.ndarray, v2: float) -> float:
    """KL(N(m1, v1*I) || N(m2, v2*I)) for shared scalar variances.

    Sum over components of log(sqrt(v2/v1)) + (v1 + (m1-m2)^2)/(2 v2) - 1/2.
    """
    if not (v1 > 0 and v2 > 0):
        raise ValueError("variances must be positive")
    m1 = np.atleast_1d(np.asarray(m1, dtype=np.float64))
    m2 = np.atleast_1d(np.asarray(m2, dtype=np.float64))
    if m1.shape != m2.shape:
        raise ValueError("mean vectors must share one shape")
    dim = m1.size
    sq = float(np.sum((m1 - m2) ** 2))
    return dim * (0.5 * math.log(v2 / v1) + v1 / (2.0 * v2) - 0.5) + sq / (2.0 * v2)
