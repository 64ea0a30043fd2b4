"""Learning-rate schedules: callables mapping a 1-based step to α."""

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ConstantSchedule:
    lr: float

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")

    def __call__(self, step: int) -> float:
        return self.lr


@dataclass(frozen=True)
class LinearWarmupCosineSchedule:
    """
    Linear ramp to `lr` over `warmup_steps`, then cosine decay to zero
    at `total_steps`. Steps past the horizon stay at zero.
    """

    lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("warmup_steps must lie in [0, total_steps]")

    def __call__(self, step: int) -> float:
        if self.warmup_steps and step <= self.warmup_steps:
            return self.lr * step / self.warmup_steps
        span = max(1, self.total_steps - self.warmup_steps)
        progress = min(1.0, max(0.0, (step - self.warmup_steps) / span))
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def build_schedule(kind: str, lr: float, warmup_steps=0, total_steps=1):
    if kind == "constant":
        return ConstantSchedule(lr)
    if kind == "linear_warmup_cosine":
        return LinearWarmupCosineSchedule(lr, warmup_steps, total_steps)
    raise ValueError(f"unknown schedule kind {kind!r}")
