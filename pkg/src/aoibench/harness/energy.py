"""Average power from a recorded current/power trace."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

POWER_HEADER = ["time_s", "power_w"]
CURRENT_HEADER = ["time_s", "current_a", "voltage_v"]


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class EnergySummary:
    energy_j: float
    avg_power_w: float
    duration_s: float


def load_trace(path) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(time_s, power_w)``; power is ``current * voltage`` per sample
    for current/voltage traces."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        rows = [r for r in reader if r]
    if header == POWER_HEADER:
        arr = np.array(rows, dtype=float).reshape(-1, 2)
        t, p = arr[:, 0], arr[:, 1]
    elif header == CURRENT_HEADER:
        arr = np.array(rows, dtype=float).reshape(-1, 3)
        t, p = arr[:, 0], arr[:, 1] * arr[:, 2]
    else:
        raise TraceError(f"unknown trace schema {header!r}")
    if t.size and np.any(np.diff(t) <= 0):
        raise TraceError("time_s must be strictly increasing")
    return t, p


def integrate_power(t: np.ndarray, p: np.ndarray,
                    window: Optional[Tuple[float, float]] = None) -> EnergySummary:
    """Trapezoidal energy over the trace, optionally confined to ``window``.

    Window edges that fall between samples are placed on the trace by linear
    interpolation, so the windowed energy is the exact area of the
    piecewise-linear power curve over the window.
    """
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    if window is not None:
        lo, hi = window
        lo, hi = max(lo, t[0]) if t.size else lo, min(hi, t[-1]) if t.size else hi
        if not hi > lo:
            raise TraceError(f"window {window} selects no time span of the trace")
        inner = (t > lo) & (t < hi)
        t, p = (np.concatenate(([lo], t[inner], [hi])),
                np.concatenate(([np.interp(lo, t, p)], p[inner], [np.interp(hi, t, p)])))
    if t.size < 2:
        raise TraceError("trace needs at least two samples in the window")
    energy = float(np.sum((p[1:] + p[:-1]) * np.diff(t)) / 2)
    duration = float(t[-1] - t[0])
    return EnergySummary(energy, energy / duration, duration)


def ingest_energy_trace(path, window: Optional[Tuple[float, float]] = None) -> EnergySummary:
    t, p = load_trace(path)
    return integrate_power(t, p, window)
