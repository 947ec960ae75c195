"""Sensor anomaly injection and the anomaly-detection abstraction.

Anomalies are additive: inside a scheduled window the measurement becomes
``y + Gamma @ y_a`` where ``Gamma`` is a diagonal 0/1 sensor-selection
matrix.  Detection is abstracted behind :func:`ads_evaluate`, which supports
two detector kinds ("specific" names the flagged sensors, "generic" only
signals presence) and two modes:

* ``oracle`` - flags follow the ground-truth schedule delayed by the
  configured detection time; a window's flag latches from
  ``t_start + detection_time`` until ``t_end``.  A window that ends before
  its detection completes is never flagged.
* ``residual-threshold`` - flags sensors whose windowed mean absolute
  innovation exceeds a threshold.  This detector can miss anomalies and is
  excluded from the bound-related guarantees.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .timebase import to_us


@dataclass(frozen=True)
class AnomalyWindow:
    """One additive anomaly burst: ``[t_start, t_end)`` in seconds."""

    t_start: float
    t_end: float
    y_a: np.ndarray
    gamma: np.ndarray  # diagonal of the sensor-selection matrix, 0/1

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError("anomaly window must satisfy t_start < t_end")
        g = np.asarray(self.gamma, float)
        if not np.all((g == 0) | (g == 1)):
            raise ValueError("gamma diagonal entries must be 0 or 1")
        object.__setattr__(self, "y_a", np.asarray(self.y_a, float))
        object.__setattr__(self, "gamma", g)

    @property
    def start_us(self) -> int:
        return to_us(self.t_start)

    @property
    def end_us(self) -> int:
        return to_us(self.t_end)


@dataclass(frozen=True)
class AnomalySchedule:
    """Non-overlapping anomaly windows for one sub-system."""

    windows: tuple = ()

    def __post_init__(self):
        ws = tuple(sorted(self.windows, key=lambda w: w.t_start))
        for a, b in zip(ws, ws[1:]):
            if a.t_end > b.t_start:
                raise ValueError("anomaly windows must not overlap")
        object.__setattr__(self, "windows", ws)

    def active_window(self, t: float) -> AnomalyWindow | None:
        t_us = to_us(t)
        for w in self.windows:
            if w.start_us <= t_us < w.end_us:
                return w
        return None


@dataclass
class AdsOutput:
    """Detector output: per-sensor flags or one presence Boolean."""

    kind: str  # "specific" | "generic"
    flags: np.ndarray | bool
    detection_time: float


@dataclass
class AdsConfig:
    kind: str = "specific"           # "specific" | "generic"
    mode: str = "oracle"             # "oracle" | "residual-threshold"
    detection_time: float = 0.0      # seconds, multiple of the loop period
    threshold: float = 0.0           # residual-threshold mode only
    zeta: int | None = None          # minimum healthy-sensor capability, unused by oracle

    def __post_init__(self):
        if self.kind not in ("specific", "generic"):
            raise ValueError(f"unknown detector kind {self.kind!r}")
        if self.mode not in ("oracle", "residual-threshold"):
            raise ValueError(f"unknown detector mode {self.mode!r}")
        if self.detection_time < 0:
            raise ValueError("detection_time must be >= 0")


def inject_anomaly(y_healthy, schedule: AnomalySchedule, t: float) -> np.ndarray:
    """Corrupt a measurement if ``t`` falls inside an anomaly window.

    Outside every window the input array is returned unchanged (bit-exact).
    """
    w = schedule.active_window(t)
    if w is None:
        return y_healthy
    return np.asarray(y_healthy, float) + w.gamma * w.y_a


def _oracle_flags(n_y: int, schedule: AnomalySchedule, t: float,
                  detection_time: float) -> np.ndarray:
    t_us = to_us(t)
    d_us = to_us(detection_time)
    flags = np.zeros(n_y, dtype=int)
    for w in schedule.windows:
        if w.start_us + d_us <= t_us < w.end_us:
            flags |= w.gamma.astype(int)
    return flags


def ads_evaluate(config: AdsConfig, window: Sequence[np.ndarray],
                 schedule: AnomalySchedule, t: float,
                 n_y: int | None = None) -> AdsOutput:
    """Run the detector at time ``t``.

    ``window`` holds the most recent innovation vectors (used only in
    residual-threshold mode; at most ``detection_time / dt`` of them).
    ``n_y`` gives the sensor count when the window may be empty.
    """
    if config.mode == "oracle":
        if n_y is None:
            n_y = len(window[-1]) if window else 0
        flags = _oracle_flags(n_y, schedule, t, config.detection_time)
    else:
        if not window:
            flags = np.zeros(0 if n_y is None else n_y, dtype=int)
        else:
            mean_abs = np.mean(np.abs(np.asarray(window, float)), axis=0)
            flags = (mean_abs > config.threshold).astype(int)
    if config.kind == "generic":
        return AdsOutput("generic", bool(np.any(flags)), config.detection_time)
    return AdsOutput("specific", flags, config.detection_time)


def anomaly_detected(out: AdsOutput) -> bool:
    """Union of the flags (specific) or the flag itself (generic)."""
    if out.kind == "generic":
        return bool(out.flags)
    return bool(np.any(out.flags))
