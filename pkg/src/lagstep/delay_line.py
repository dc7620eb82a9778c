"""Per-channel input history over a sliding window of one delay length.

A :class:`DelayLine` stores U_i on the grid ``now - D, now - D + dt, ..., now``
and can be read either in time (``sample``) or as the transport-PDE actuator
state u_i(x, t) = U_i(t + x - D) with x in [0, D] (``sample_pde``).

The buffer is a mirrored ring: every value is written twice, at ``k`` and
``k + L``, so the chronological window is always the contiguous slice
``buf[start:start + L]`` and no copy is needed to hand it to the predictor.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import ConfigurationError, InputError, RangeError

# relative tolerance for the delay/step commensurability check
_COMMENSURATE_RTOL = 1e-9
# snapping tolerance (in grid units) for queries that land on a node
_GRID_SNAP = 1e-9


def steps_in(delay: float, step: float) -> int:
    """Number of grid intervals of length ``step`` in ``delay``.

    Raises:
        ConfigurationError: if ``delay`` is not an integer multiple of ``step``
            within a relative tolerance of 1e-9.
    """
    if not (delay > 0 and step > 0) or not (math.isfinite(delay) and math.isfinite(step)):
        raise ConfigurationError(f"delay and step must be positive and finite, got {delay!r}, {step!r}")
    ratio = delay / step
    count = round(ratio)
    if count < 1 or abs(ratio - count) > _COMMENSURATE_RTOL * max(1.0, ratio):
        raise ConfigurationError(f"delay {delay!r} is not an integer multiple of step {step!r}")
    return int(count)


class DelayLine:
    """History buffer realizing u_i(x, t) = U_i(t + x - D_i).

    Args:
        delay: channel delay D_i in seconds.
        step: sample period dt; ``delay`` must be an integer multiple of it.
        initial_history: function of theta in [-D_i, 0] giving U_i(theta).
            A float is accepted as shorthand for a constant history.
    """

    def __init__(self, delay: float, step: float, initial_history: Callable[[float], float] | float = 0.0):
        self.intervals = steps_in(delay, step)
        self.delay = float(delay)
        self.step = float(step)
        self._count = 0
        length = self.intervals + 1
        if callable(initial_history):
            values = [float(initial_history(-self.delay + j * self.step)) for j in range(length)]
            values[-1] = float(initial_history(0.0))
        else:
            values = [float(initial_history)] * length
        values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise InputError("initial history contains non-finite values")
        self._buf = np.concatenate([values, values])
        self._start = 0

    @property
    def now(self) -> float:
        """Current time t; starts at 0 and advances by exactly one step per push."""
        return self._count * self.step

    @property
    def samples(self) -> np.ndarray:
        """Chronological window U_i(now - D_i), ..., U_i(now) as a read-only view."""
        view = self._buf[self._start:self._start + self.intervals + 1]
        view.flags.writeable = False
        return view

    def __len__(self) -> int:
        return self.intervals + 1

    def __repr__(self) -> str:
        return f"DelayLine(delay={self.delay}, step={self.step}, now={self.now})"

    @classmethod
    def from_samples(cls, delay: float, step: float, samples, now: float = 0.0) -> "DelayLine":
        """Line holding the given window U_i(now - D_i), ..., U_i(now)."""
        line = cls(delay, step, 0.0)
        values = np.asarray(samples, dtype=float)
        if values.shape != (line.intervals + 1,):
            raise ConfigurationError(f"expected {line.intervals + 1} samples, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InputError("samples contain non-finite values")
        count = round(now / step)
        if count < 0 or abs(now / step - count) > _GRID_SNAP * max(1.0, abs(now / step)):
            raise ConfigurationError(f"now={now!r} is not a non-negative multiple of step {step!r}")
        line._buf = np.concatenate([values, values])
        line._count = int(count)
        return line

    def copy(self) -> "DelayLine":
        other = object.__new__(DelayLine)
        other.__dict__.update(self.__dict__)
        other._buf = self._buf.copy()
        return other

    def push(self, u: float) -> "DelayLine":
        """Drop the oldest sample, append ``u`` as the value at ``now + dt``."""
        u = float(u)
        if not math.isfinite(u):
            raise InputError(f"cannot push non-finite input {u!r}")
        length = self.intervals + 1
        self._buf[self._start] = u
        self._buf[self._start + length] = u
        self._start = (self._start + 1) % length
        self._count += 1
        return self

    def replace_latest(self, u: float) -> "DelayLine":
        """Overwrite the newest sample U_i(now).

        The simulator pushes a provisional value and replaces it once the
        control for ``now`` is known.
        """
        u = float(u)
        if not math.isfinite(u):
            raise InputError(f"cannot store non-finite input {u!r}")
        length = self.intervals + 1
        k = (self._start + length - 1) % length
        self._buf[k] = u
        self._buf[k + length] = u
        return self

    def sample(self, theta: float) -> float:
        """U_i(theta) by linear interpolation; exact at grid nodes."""
        pos = (theta - (self.now - self.delay)) / self.step
        if pos < -_GRID_SNAP or pos > self.intervals + _GRID_SNAP:
            raise RangeError(f"theta={theta!r} outside window [{self.now - self.delay}, {self.now}]")
        return self._at(pos)

    def sample_pde(self, x: float) -> float:
        """Actuator state u_i(x, now) for x in [0, D_i]."""
        pos = x / self.step
        if pos < -_GRID_SNAP or pos > self.intervals + _GRID_SNAP:
            raise RangeError(f"x={x!r} outside [0, {self.delay}]")
        return self._at(pos)

    def _at(self, pos: float) -> float:
        window = self.samples
        nearest = round(pos)
        if abs(pos - nearest) <= _GRID_SNAP:
            return float(window[min(max(nearest, 0), self.intervals)])
        j = int(math.floor(pos))
        w = pos - j
        return float((1.0 - w) * window[j] + w * window[j + 1])
