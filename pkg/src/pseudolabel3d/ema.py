"""Exponential-moving-average teacher update with linear momentum warm-up."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def ema_update(teacher, student, momentum: float, out: np.ndarray | None = None) -> np.ndarray:
    """Return ``momentum * teacher + (1 - momentum) * student`` elementwise.

    Evaluated as ``teacher + (1 - momentum) * (student - teacher)`` so that
    equal inputs are an exact fixed point; the result is clipped to the
    segment between the two inputs.  Pass ``out=teacher`` to update in place.
    """
    t = np.asarray(teacher, dtype=np.float64)
    s = np.asarray(student, dtype=np.float64)
    if t.shape != s.shape:
        raise ValueError(f"teacher and student parameter shapes differ: {t.shape} vs {s.shape}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
    new = t + (1.0 - momentum) * (s - t)
    new = np.clip(new, np.minimum(t, s), np.maximum(t, s))
    if out is not None:
        out[...] = new
        return out
    return new


@dataclass(frozen=True)
class MomentumWarmup:
    m_start: float = 0.99
    m_end: float = 0.999
    warmup_iters: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.m_start <= self.m_end < 1.0:
            raise ValueError("momenta must satisfy 0 <= m_start <= m_end < 1")
        if self.warmup_iters < 1:
            raise ValueError("warmup_iters must be >= 1")

    def __call__(self, t: int) -> float:
        return momentum_at(self, t)


def momentum_at(w: MomentumWarmup, t: int) -> float:
    """Linear ramp from ``m_start`` at t=0 to ``m_end`` at ``warmup_iters``, then flat."""
    if t < 0:
        raise ValueError("iteration index must be non-negative")
    if t >= w.warmup_iters:
        return w.m_end
    if t == 0:
        return w.m_start
    return w.m_start + (w.m_end - w.m_start) * (t / w.warmup_iters)


class EMATeacher:
    """Holds a teacher parameter vector and advances it toward a student.

    Single-writer: do not call :meth:`update` concurrently on one instance.
    """

    def __init__(self, params, warmup: MomentumWarmup | None = None):
        self.params = np.array(params, dtype=np.float64, copy=True)
        self.warmup = warmup or MomentumWarmup()
        self.step = 0

    def update(self, student_params) -> np.ndarray:
        m = momentum_at(self.warmup, self.step)
        ema_update(self.params, student_params, m, out=self.params)
        self.step += 1
        return self.params
