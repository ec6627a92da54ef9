"""Reverse-time samplers and the chain runner.

Chains are processed as one array but their randomness comes from fixed
blocks of BLOCK chains, each with its own stream keyed on (seed, block).
A chain's noise therefore depends only on the seed and its index.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .guidance import GuidanceStack, StepCache, stack_apply
from .schedule import RF, VP, NoiseSchedule, vp_alpha_sigma, vp_drift_diffusion

SDE = "sde"
ODE = "ode"
DDIM = "ddim"
DEFAULT_STEPS = {DDIM: 50, ODE: 28, SDE: 1000}
BLOCK = 1024


class SamplerError(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    kind: str = DDIM
    steps: Optional[int] = None
    tau: float = 1.0
    t_start: float = 1.0
    t_end: Optional[float] = None
    seed: int = 0
    store_trajectory: bool = False

    def __post_init__(self):
        if self.kind not in DEFAULT_STEPS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.steps is None:
            self.steps = DEFAULT_STEPS[self.kind]
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")

    def grid(self, schedule: NoiseSchedule) -> np.ndarray:
        t_end = schedule.t_eps if self.t_end is None else self.t_end
        if not 0 <= t_end < self.t_start <= 1:
            raise ValueError(f"need 0 <= t_end < t_start <= 1, got {t_end}, {self.t_start}")
        return np.linspace(self.t_start, t_end, self.steps + 1)


@dataclass
class SampleRun:
    samples: np.ndarray
    times: np.ndarray
    calls: list = field(default_factory=list)
    step_seconds: list = field(default_factory=list)
    seed: int = 0
    trajectory: Optional[list] = None  # [(t, samples)] when stored

    @property
    def total_calls(self) -> int:
        return int(sum(self.calls))


def _finite(a, what):
    if not np.all(np.isfinite(a)):
        raise SamplerError(f"non-finite {what}")


def euler_maruyama_step(x, t, dt, score, schedule, tau=1.0, rng=None, noise=None):
    """x + {F - (1 + tau^2)/2 G^2 s} dt + tau G sqrt(|dt|) z,  dt < 0."""
    _finite(score, "score")
    x = np.asarray(x, dtype=float)
    F, G = vp_drift_diffusion(schedule, x, t)
    out = x + (F - 0.5 * (1.0 + tau * tau) * G * G * np.asarray(score)) * dt
    if tau > 0:
        if noise is None:
            noise = rng.standard_normal(x.shape)
        out = out + tau * G * math.sqrt(abs(dt)) * noise
    return out


def ode_euler_step(z, t, dt, velocity):
    _finite(velocity, "velocity")
    return np.asarray(z, dtype=float) + np.asarray(velocity) * dt


def ddim_step(x, t, t_next, score, schedule):
    a, s = vp_alpha_sigma(schedule, t)
    if s == 0:
        raise SamplerError("DDIM step from t=0 (sigma_t = 0)")
    _finite(score, "score")
    x = np.asarray(x, dtype=float)
    if t_next == t:
        return x
    a2, s2 = vp_alpha_sigma(schedule, t_next)
    x0 = (x + s * s * np.asarray(score)) / a
    return a2 * x0 + s2 * (x - a * x0) / s


class BlockNoise:
    """Standard normals per chain, reproducible from (seed, chain index)."""

    def __init__(self, seed: int, n: int, dim: int):
        self.n, self.dim = n, dim
        nblocks = -(-n // BLOCK)
        self.gens = [np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(b,)))) for b in range(nblocks)]

    def draw(self) -> np.ndarray:
        out = np.empty((self.n, self.dim))
        for b, g in enumerate(self.gens):
            lo = b * BLOCK
            hi = min(lo + BLOCK, self.n)
            out[lo:hi] = g.standard_normal((BLOCK, self.dim))[: hi - lo]
        return out


def prior_samples(seed: int, n: int, dim: int) -> np.ndarray:
    return BlockNoise(seed, n, dim).draw()


def _check_compat(field_output, sampler: SamplerConfig, schedule: NoiseSchedule):
    if schedule.kind == RF:
        if field_output != "velocity" or sampler.kind != ODE:
            raise ValueError("rectified-flow schedules sample with the ODE sampler on a velocity field")
    elif field_output != "score":
        raise ValueError("VP schedules need a score field")


def run_chain(field, stack: GuidanceStack, sampler: SamplerConfig, n: int, schedule: NoiseSchedule, x_init=None) -> SampleRun:
    dim = field.dim
    output = getattr(field, "output", "score")
    _check_compat(output, sampler, schedule)
    times = sampler.grid(schedule)
    if n == 0:
        return SampleRun(np.zeros((0, dim)), times, seed=sampler.seed)
    noise = BlockNoise(sampler.seed, n, dim)
    x = noise.draw() if x_init is None else np.array(x_init, dtype=float).reshape(n, dim)
    cache = StepCache()
    run = SampleRun(x, times, seed=sampler.seed, trajectory=[] if sampler.store_trajectory else None)
    if run.trajectory is not None:
        run.trajectory.append((float(times[0]), x.copy()))
    for k in range(sampler.steps):
        t, t_next = float(times[k]), float(times[k + 1])
        dt = t_next - t
        start = time.perf_counter()
        guided, cache, calls = stack_apply(field, stack, x, t, cache)
        if not np.all(np.isfinite(guided)):
            raise SamplerError(f"non-finite guided output at step {k} (t={t:.4f})")
        if sampler.kind == DDIM:
            x = ddim_step(x, t, t_next, guided, schedule)
        elif sampler.kind == SDE:
            x = euler_maruyama_step(x, t, dt, guided, schedule, sampler.tau, noise=noise.draw() if sampler.tau > 0 else None)
        elif output == "velocity":
            x = ode_euler_step(x, t, dt, guided)
        else:
            # probability-flow drift of a VP score field
            F, G = vp_drift_diffusion(schedule, x, t)
            x = ode_euler_step(x, t, dt, F - 0.5 * G * G * guided)
        if not np.all(np.isfinite(x)):
            raise SamplerError(f"non-finite state at step {k} (t={t_next:.4f})")
        run.calls.append(calls)
        run.step_seconds.append(time.perf_counter() - start)
        if run.trajectory is not None:
            run.trajectory.append((t_next, x.copy()))
    run.samples = x
    return run


def guided_drift(field, stack: GuidanceStack, schedule: NoiseSchedule, tau: float):
    """Reverse-SDE drift dx/dt of the guided dynamics, for the density oracle.

    Returns f(x, t) -> F(x, t) - (1 + tau^2)/2 G^2 s*(x, t), the same drift the
    Euler-Maruyama sampler applies (t decreasing).
    """
    if schedule.kind != VP:
        raise ValueError("guided_drift needs a VP schedule")

    def drift(x, t):
        guided, _, _ = stack_apply(field, stack, x, t, StepCache())
        F, G = vp_drift_diffusion(schedule, x, t)
        return F - 0.5 * (1.0 + tau * tau) * G * G * guided

    return drift
