"""Step-decay confidence threshold schedule for pseudo-label filtering.

The threshold starts at ``sigma_start`` and moves by ``decay`` toward
``sigma_end`` once every ``step_len`` iterations, then holds at
``sigma_end``.  Both directions (high-to-low and low-to-high) are supported.

Arithmetic is carried out on the decimal representation of the configured
values so that, e.g., 0.6 - 0.1 yields exactly 0.5 rather than
0.49999999999999994.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_CEILING, Decimal

CLAMP = "clamp"
LITERAL_MIN = "literal-min"


def _dec(x: float) -> Decimal:
    return Decimal(repr(float(x)))


@dataclass(frozen=True)
class ThresholdSchedule:
    sigma_start: float = 0.6
    sigma_end: float = 0.4
    step_len: int = 1000
    decay: float = 0.1
    # "literal-min" evaluates min(start - decay * floor(t / step_len), end) verbatim
    mode: str = CLAMP

    def __post_init__(self):
        if not (0.0 <= self.sigma_start <= 1.0 and 0.0 <= self.sigma_end <= 1.0):
            raise ValueError("sigma_start and sigma_end must lie in [0, 1]")
        if int(self.step_len) != self.step_len or self.step_len < 1:
            raise ValueError("step_len must be an integer >= 1")
        if not self.decay > 0:
            raise ValueError("decay must be positive")
        if self.mode not in (CLAMP, LITERAL_MIN):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        object.__setattr__(self, "step_len", int(self.step_len))

    @classmethod
    def constant(cls, value: float) -> "ThresholdSchedule":
        return cls(sigma_start=value, sigma_end=value, step_len=1, decay=0.1)

    @property
    def decreasing(self) -> bool:
        return self.sigma_end < self.sigma_start

    def settle_iteration(self) -> int:
        """First iteration from which the value is pinned at ``sigma_end``."""
        gap = abs(_dec(self.sigma_start) - _dec(self.sigma_end))
        n_steps = (gap / _dec(self.decay)).to_integral_value(rounding=ROUND_CEILING)
        return self.step_len * int(n_steps)

    def value_at(self, t: int) -> float:
        return value_at(self, t)

    def __call__(self, t: int) -> float:
        return value_at(self, t)


def value_at(schedule: ThresholdSchedule, t: int) -> float:
    """Threshold in force at iteration ``t`` (``t >= 0``)."""
    if t < 0:
        raise ValueError("iteration index must be non-negative")
    k = int(t) // schedule.step_len
    start, end, decay = _dec(schedule.sigma_start), _dec(schedule.sigma_end), _dec(schedule.decay)
    if schedule.mode == LITERAL_MIN:
        return float(min(start - decay * k, end))
    if end <= start:
        return float(max(start - decay * k, end))
    return float(min(start + decay * k, end))
