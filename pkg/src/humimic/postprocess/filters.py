"""
Smoothing filters.

Offline clips go through a zero-phase (forward-backward) Butterworth low-pass.
Streams use the causal 2:6:2 moving average, which only looks at the current
and two previous samples.
"""

from __future__ import annotations

import logging
from collections import deque
from typing import Deque, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy import signal

from humimic.exceptions import ContractViolation

logger = logging.getLogger(__name__)


class FilterConfig(BaseModel):
    target_fps: float = Field(50.0, gt=0, description="Resampling rate, Hz")
    order: int = Field(2, ge=1, description="Butterworth order")
    cutoff_ratio: float = Field(0.1, gt=0, lt=0.5, description="Cutoff as a fraction of target_fps")
    causal_weights: Tuple[float, float, float] = Field(
        (0.2, 0.6, 0.2), description="Weights on x[t-2], x[t-1], x[t]"
    )

    @field_validator("causal_weights")
    @classmethod
    def _weights_sum_to_one(cls, value):
        if abs(sum(value) - 1.0) > 1e-9 or min(value) < 0:
            raise ValueError("causal weights must be non-negative and sum to 1")
        return value

    @model_validator(mode="after")
    def _cutoff_below_nyquist(self):
        if not 0 < self.cutoff < self.target_fps / 2:
            raise ValueError("cutoff must lie in (0, target_fps / 2)")
        return self

    @property
    def cutoff(self) -> float:
        return self.cutoff_ratio * self.target_fps


def butterworth_coefficients(order: int, cutoff: float, fps: float) -> Tuple[np.ndarray, np.ndarray]:
    if not 0 < cutoff < fps / 2:
        raise ContractViolation(f"cutoff {cutoff} Hz must lie below Nyquist ({fps / 2} Hz)")
    b, a = signal.butter(order, cutoff, btype="low", fs=fps)
    return b, a


def butterworth_lowpass(
    x: np.ndarray,
    config: Optional[FilterConfig] = None,
    fps: Optional[float] = None,
    zero_phase: bool = True,
) -> np.ndarray:
    """Low-pass along axis 0. ``fps`` defaults to ``config.target_fps``."""
    config = config or FilterConfig()
    fps = config.target_fps if fps is None else fps
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] <= config.order:
        raise ContractViolation(f"signal of {x.shape[0]} samples is too short for order {config.order}")
    b, a = butterworth_coefficients(config.order, config.cutoff_ratio * fps, fps)
    if not zero_phase:
        return signal.lfilter(b, a, x, axis=0)
    padlen = min(3 * max(len(a), len(b)), x.shape[0] - 1)
    return signal.filtfilt(b, a, x, axis=0, padlen=padlen)


def causal_ma_262(x: np.ndarray, weights: Sequence[float] = (0.2, 0.6, 0.2)) -> np.ndarray:
    """y_t = w0 x_{t-2} + w1 x_{t-1} + w2 x_t; the first two outputs renormalise
    the weights of the samples that exist."""
    x = np.asarray(x, dtype=np.float64)
    w0, w1, w2 = (float(w) for w in weights)
    y = w2 * x.copy()
    y[1:] += w1 * x[:-1]
    y[2:] += w0 * x[:-2]
    if len(x) > 0:
        y[0] = x[0]
    if len(x) > 1:
        y[1] = y[1] / (w1 + w2)
    return y


class CausalFilter262:
    """Streaming form of ``causal_ma_262``: one sample in, one sample out."""

    def __init__(self, weights: Sequence[float] = (0.2, 0.6, 0.2)):
        self.weights = tuple(float(w) for w in weights)
        self._history: Deque[np.ndarray] = deque(maxlen=2)

    def reset(self) -> None:
        self._history.clear()

    def __call__(self, sample) -> np.ndarray:
        sample = np.asarray(sample, dtype=np.float64)
        w0, w1, w2 = self.weights
        if len(self._history) == 0:
            out = sample.copy()
        elif len(self._history) == 1:
            out = (w1 * self._history[-1] + w2 * sample) / (w1 + w2)
        else:
            out = w0 * self._history[0] + w1 * self._history[1] + w2 * sample
        self._history.append(sample)
        return out
