"""Guided model outputs: classifier-free guidance, Self-Guidance and SG-prev.

All combiners are affine in the model outputs, so they apply equally to
scores and to flow velocities.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

CONSTANT = "constant"
DYNAMIC = "dynamic"
PREV = "prev"

PAG_MESSAGE = "PAG requires attention perturbation — out of scope"


class GuidanceConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Shift:
    kind: str = CONSTANT
    value: float = 10.0  # steps for constant, sigma divisor for dynamic

    def __post_init__(self):
        if self.kind not in (CONSTANT, DYNAMIC, PREV):
            raise GuidanceConfigError(f"shift.kind must be constant, dynamic or prev, not {self.kind!r}")
        if self.kind == CONSTANT and not self.value >= 0:
            raise GuidanceConfigError("constant shift must be non-negative")
        if self.kind == DYNAMIC and not self.value > 0:
            raise GuidanceConfigError("dynamic shift divisor must be positive")


@dataclass(frozen=True)
class GuidanceStack:
    omega_cfg: float = 0.0
    omega_sg: float = 0.0
    omega_pag: float = 0.0
    shift: Shift = field(default_factory=Shift)
    sg_prev_threshold: float = 500.0  # diffusion time, same units as the constant shift
    use_prev: bool = False  # SG-prev below the threshold, shifted SG above it
    condition: Optional[int] = None
    discretization_steps: int = 1000

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.omega_pag != 0:
            raise GuidanceConfigError(PAG_MESSAGE)
        if self.omega_cfg < 0 or self.omega_sg < 0:
            raise GuidanceConfigError("guidance scales must be non-negative")
        if self.discretization_steps < 1:
            raise GuidanceConfigError("discretization_steps must be positive")
        if not 0 <= self.sg_prev_threshold <= self.discretization_steps:
            raise GuidanceConfigError("sg_prev_threshold must lie within the diffusion time range")

    @property
    def threshold(self) -> float:
        return self.sg_prev_threshold / self.discretization_steps

    @property
    def prev_enabled(self) -> bool:
        return self.use_prev or self.shift.kind == PREV

    def replace(self, **kw) -> "GuidanceStack":
        return replace(self, **kw)


@dataclass
class StepCache:
    x: Optional[np.ndarray] = None
    output: Optional[np.ndarray] = None
    t: Optional[float] = None
    valid: bool = False

    def clear(self):
        self.x = self.output = self.t = None
        self.valid = False


def _same_shape(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def cfg_combine(s_cond, s_uncond, omega):
    s_cond, s_uncond = _same_shape(s_cond, s_uncond)
    return s_uncond + omega * (s_cond - s_uncond)


def sg_combine(s_t, s_shifted, omega):
    s_t, s_shifted = _same_shape(s_t, s_shifted)
    return s_t + omega * (s_t - s_shifted)


def sg_prev_combine(s_t, cache: StepCache, omega, t, threshold):
    """SG with the previous step's output; falls back to ``s_t`` when unusable."""
    s_t = np.asarray(s_t, dtype=float)
    if not cache.valid or cache.output is None or t >= threshold:
        return s_t
    prev = np.asarray(cache.output, dtype=float)
    if prev.shape != s_t.shape:
        return s_t
    return s_t + omega * (s_t - prev)


def shift_delta(stack: GuidanceStack, t: float) -> float:
    shift = stack.shift
    if shift.kind == CONSTANT:
        delta = shift.value / stack.discretization_steps
    elif shift.kind == DYNAMIC:
        delta = t / shift.value
    else:
        return 0.0
    return max(0.0, min(delta, 1.0 - t))


def sg_mode(stack: GuidanceStack, t: float) -> Optional[str]:
    """Which SG variant acts at time t: 'shift', 'prev' or None."""
    if stack.omega_sg <= 0:
        return None
    if stack.prev_enabled and t < stack.threshold:
        return PREV
    if stack.shift.kind == PREV:
        return None
    return "shift"


def expected_calls(stack: GuidanceStack, t: float) -> int:
    return 1 + int(stack.omega_cfg > 0) + int(sg_mode(stack, t) == "shift")


def stack_apply(field, stack: GuidanceStack, x, t: float, cache: StepCache):
    """Guided output at (x, t).  Returns (output, refreshed cache, model calls)."""
    stack.validate()
    c = stack.condition
    s_c = field(x, t, c)
    calls = 1
    if stack.omega_cfg > 0:
        s_u = field(x, t, None)
        calls += 1
        out = cfg_combine(s_c, s_u, stack.omega_cfg)
    else:
        out = s_c
    mode = sg_mode(stack, t)
    if mode == "shift":
        s_shift = field(x, t + shift_delta(stack, t), c)
        calls += 1
        out = out + stack.omega_sg * (s_c - s_shift)
    elif mode == PREV and cache.valid and cache.output is not None and np.shape(cache.output) == np.shape(s_c):
        out = out + stack.omega_sg * (s_c - cache.output)
    new_cache = StepCache(x=np.asarray(x), output=s_c, t=t, valid=True)
    return out, new_cache, calls
