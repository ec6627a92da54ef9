"""Forward processes: variance-preserving SDE and rectified-flow interpolation.

Continuous time lives on [0, 1].  Integer "diffusion times" (shift 10 of 1000,
threshold 500) are converted with :meth:`NoiseSchedule.to_continuous`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

VP = "vp"
RF = "rf"


class ScheduleDomainError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str = VP
    beta_min: float = 0.1
    beta_max: float = 20.0
    t_max: float = 1.0
    discretization_steps: int = 1000
    t_eps: float = 1e-3

    def __post_init__(self):
        if self.kind not in (VP, RF):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == VP and not (0 < self.beta_min <= self.beta_max):
            raise ValueError("VP schedule needs 0 < beta_min <= beta_max")
        if self.discretization_steps < 1:
            raise ValueError("discretization_steps must be a positive integer")
        if not (0 < self.t_eps < 0.5):
            raise ValueError("t_eps must lie in (0, 0.5)")

    def to_continuous(self, diffusion_time: float) -> float:
        return diffusion_time / self.discretization_steps

    # -- VP -------------------------------------------------------------
    def beta(self, t):
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def beta_integral(self, t):
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    # -- generic (a_t, b_t) view used by both kinds ----------------------
    def coefficients(self, t: float) -> tuple[float, float]:
        """Return (a_t, b_t) with x_t = a_t x_0 + b_t eps."""
        _check_unit(t)
        if self.kind == VP:
            return vp_alpha_sigma(self, t)
        return 1.0 - t, t

    def coefficient_derivatives(self, t: float) -> tuple[float, float]:
        _check_unit(t)
        if self.kind == RF:
            return -1.0, 1.0
        a, s = vp_alpha_sigma(self, t)
        da = -0.5 * self.beta(t) * a
        # d/dt sqrt(1 - a^2) = -a a' / s
        ds = -a * da / s if s > 0 else math.inf
        return da, ds


def _check_unit(t):
    if not (0.0 <= t <= 1.0) or not np.isfinite(t):
        raise ScheduleDomainError(f"t={t!r} outside [0, 1]")


def vp_alpha_sigma(schedule: NoiseSchedule, t: float) -> tuple[float, float]:
    if schedule.kind != VP:
        raise ScheduleDomainError("vp_alpha_sigma needs a VP schedule")
    _check_unit(t)
    log_alpha = -0.5 * schedule.beta_integral(t)
    alpha = math.exp(log_alpha)
    # 1 - alpha^2 via expm1 keeps sigma accurate near t=0
    sigma = math.sqrt(-math.expm1(2.0 * log_alpha))
    return alpha, sigma


def vp_drift_diffusion(schedule: NoiseSchedule, x, t: float):
    """Drift F(x, t) = -beta(t) x / 2 and diffusion G(t) = sqrt(beta(t))."""
    if schedule.kind != VP:
        raise ScheduleDomainError("vp_drift_diffusion needs a VP schedule")
    _check_unit(t)
    b = schedule.beta(t)
    return -0.5 * b * np.asarray(x, dtype=float), math.sqrt(b)


def rf_interpolant(x0, eps, t: float):
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    _check_unit(t)
    return (1.0 - t) * x0 + t * eps


def snr_lambda(schedule: NoiseSchedule, t: float) -> tuple[float, float]:
    """Log signal-to-noise ratio log(a^2/b^2) and its time derivative."""
    _check_unit(t)
    a, b = schedule.coefficients(t)
    if a <= 0.0:
        raise ScheduleDomainError(f"a_t vanishes at t={t}; log-SNR is singular")
    if b <= 0.0:
        raise ScheduleDomainError(f"b_t vanishes at t={t}; log-SNR is singular")
    da, db = schedule.coefficient_derivatives(t)
    lam = 2.0 * (math.log(a) - math.log(b))
    return lam, 2.0 * (da / a - db / b)
