"""Exact Age-of-Information analytics over a timestamp log.

The AoI seen by a receiver is ``Δ(t) = t - U(t)`` where ``U(t)`` is the
largest generation timestamp among the messages received up to ``t``.
Between receptions it grows with slope one, at receptions it drops, so the
whole trajectory is captured by the reception instants and the running
maximum of generation times.  Every statistic here is computed on that
exact piecewise-linear function rather than on samples of it.

All timestamps are integer nanoseconds.  Statistics are returned in
nanoseconds as floats (means and medians need not be integral).
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

PathLike = Union[str, "os.PathLike[str]"]


class AoiDataError(ValueError):
    """The timestamp log cannot describe an AoI trajectory."""


class DegenerateDomain(ValueError):
    """The trajectory spans zero time, so no statistic is defined."""


@dataclass(frozen=True)
class TimestampLog:
    """Per-message ``(seq, gen_ns, rx_ns)`` records as parallel int64 arrays."""

    seq: np.ndarray
    gen_ns: np.ndarray
    rx_ns: np.ndarray

    def __post_init__(self) -> None:
        for name in ("seq", "gen_ns", "rx_ns"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if not (self.seq.shape == self.gen_ns.shape == self.rx_ns.shape) or self.seq.ndim != 1:
            raise AoiDataError("seq, gen_ns and rx_ns must be 1-D arrays of equal length")

    @classmethod
    def from_records(cls, records: Iterable[Tuple[int, int, int]]) -> "TimestampLog":
        rows = list(records)
        if not rows:
            return cls(np.empty(0), np.empty(0), np.empty(0))
        arr = np.array(rows, dtype=np.int64)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    def __len__(self) -> int:
        return int(self.seq.size)

    def records(self):
        return list(zip(self.seq.tolist(), self.gen_ns.tolist(), self.rx_ns.tolist()))

    def shifted(self, offset_ns: int) -> "TimestampLog":
        """Same log with both clocks moved by ``offset_ns``."""
        return TimestampLog(self.seq, self.gen_ns + offset_ns, self.rx_ns + offset_ns)

    def deduplicated(self) -> "TimestampLog":
        """Drop repeated sequence numbers, keeping the earliest reception.

        At-least-once delivery may hand the subscriber the same message twice.
        The result is ordered by reception time.
        """
        order = np.lexsort((self.seq, self.rx_ns))
        seq = self.seq[order]
        _, first = np.unique(seq, return_index=True)
        keep = np.sort(order[first])
        keep = keep[np.argsort(self.rx_ns[keep], kind="stable")]
        return TimestampLog(self.seq[keep], self.gen_ns[keep], self.rx_ns[keep])

    # -- CSV ------------------------------------------------------------------

    def to_csv(self, path: PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv_string())

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        buf.write("seq,gen_ns,rx_ns\n")
        for s, g, r in self.records():
            buf.write(f"{s},{g},{r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path: PathLike) -> "TimestampLog":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["seq", "gen_ns", "rx_ns"]:
                raise AoiDataError(f"unexpected TimestampLog header {header!r}")
            return cls.from_records((int(a), int(b), int(c)) for a, b, c in reader)


@dataclass(frozen=True)
class AoiFunction:
    """The exact sawtooth.

    ``rx`` holds the reception instants (non-decreasing) and ``u`` the newest
    generation time known at each of them.  Segment ``k`` spans
    ``[rx[k], rx[k+1]]`` and starts at AoI ``rx[k] - u[k]``.
    """

    rx: np.ndarray
    u: np.ndarray

    @property
    def t_start(self) -> np.ndarray:
        return self.rx[:-1]

    @property
    def t_end(self) -> np.ndarray:
        return self.rx[1:]

    @property
    def aoi_start(self) -> np.ndarray:
        return (self.rx - self.u)[:-1]

    @property
    def seg_len(self) -> np.ndarray:
        return np.diff(self.rx)

    @property
    def aoi_end(self) -> np.ndarray:
        return self.aoi_start + self.seg_len

    @property
    def domain(self) -> Tuple[int, int]:
        return int(self.rx[0]), int(self.rx[-1])

    @property
    def duration(self) -> int:
        return int(self.rx[-1] - self.rx[0])

    def segments(self):
        """``(t_start, aoi_start, t_end)`` triples, in time order."""
        return list(zip(self.t_start.tolist(), self.aoi_start.tolist(), self.t_end.tolist()))


def build_sawtooth(log: TimestampLog) -> AoiFunction:
    """Construct the AoI trajectory seen by the receiver of ``log``.

    Duplicated sequence numbers are removed first.  A reception whose
    generation time is older than what the receiver already holds leaves
    ``U`` unchanged, so the sawtooth simply keeps rising through it.
    """
    if len(log) == 0:
        raise AoiDataError("empty timestamp log")
    if np.any(log.rx_ns < log.gen_ns):
        bad = int(np.argmax(log.rx_ns < log.gen_ns))
        raise AoiDataError(f"record seq={int(log.seq[bad])} received before it was generated")
    clean = log.deduplicated()
    u = np.maximum.accumulate(clean.gen_ns)
    return AoiFunction(clean.rx_ns.copy(), u)


def _require_extent(f: AoiFunction) -> None:
    if f.rx.size < 2 or f.duration <= 0:
        raise DegenerateDomain("AoI function spans zero time")


def evaluate(f: AoiFunction, t: Union[int, float]) -> float:
    """``Δ(t)``; defined from the first reception onwards."""
    if t < f.rx[0]:
        raise ValueError(f"t={t} precedes the first reception at {int(f.rx[0])}")
    k = int(np.searchsorted(f.rx, t, side="right")) - 1
    return t - int(f.u[k])


def evaluate_many(f: AoiFunction, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t)
    if t.size and t.min() < f.rx[0]:
        raise ValueError("sample precedes the first reception")
    k = np.searchsorted(f.rx, t, side="right") - 1
    return t - f.u[k]


def integral_mean(f: AoiFunction, rtol: float = 1e-9) -> float:
    """Time-average of the sawtooth over its domain.

    Each segment is a right trapezoid.  Its area is computed twice, once as
    rectangle plus triangle and once as a rectangle at the midpoint height;
    the two totals must agree to ``rtol``.
    """
    _require_extent(f)
    length = f.seg_len.astype(np.float64)
    start = f.aoi_start.astype(np.float64)
    rect_tri = float(np.sum(length * start) + np.sum(length * length) / 2.0)
    midpoint = float(np.sum(length * (start + length / 2.0)))
    if not math.isclose(rect_tri, midpoint, rel_tol=rtol, abs_tol=0.0):
        raise ArithmeticError(f"trapezoid methods disagree: {rect_tri} vs {midpoint}")
    return rect_tri / f.duration


def sampled_mean(f: AoiFunction, rate_hz: float = 1000.0) -> float:
    """Arithmetic mean of ``Δ`` sampled at ``rate_hz`` across the domain."""
    _require_extent(f)
    step = 1e9 / rate_hz
    n = int(f.duration // step) + 1
    t = f.rx[0] + np.floor(np.arange(n) * step).astype(np.int64)
    return float(np.mean(evaluate_many(f, t)))


def fraction_below(f: AoiFunction, m: float) -> float:
    """Share of the domain during which ``Δ(t) <= m``."""
    _require_extent(f)
    below = np.clip(m - f.aoi_start, 0, f.seg_len)
    return float(np.sum(below) / f.duration)


def projection_median(f: AoiFunction) -> float:
    """Exact median level of the sawtooth.

    Every segment is projected on the AoI axis; because all slopes are one,
    a projection covers exactly as much AoI range as the segment covers time.
    Overlaps give each elementary region a weight (number of projections
    covering it).  Walking the regions upwards and accumulating
    ``length * weight`` until half of the total is reached gives the level
    below which the function spends half of its time.  Inside the final
    region the remaining extension is divided by that region's weight.

    When the half-way point falls on a gap between projections, the lowest
    such level is returned.
    """
    _require_extent(f)
    starts = f.aoi_start
    ends = f.aoi_end
    lengths = f.seg_len
    live = lengths > 0
    starts, ends = starts[live], ends[live]

    values = np.concatenate((starts, ends))
    deltas = np.concatenate((np.ones(starts.size, np.int64), -np.ones(ends.size, np.int64)))
    order = np.argsort(values, kind="stable")
    values, deltas = values[order], deltas[order]

    weight = np.cumsum(deltas)[:-1]  # weight of region [values[i], values[i+1]]
    region = np.diff(values)
    ext = region * weight
    cum = np.cumsum(ext)
    total = int(cum[-1])  # == domain length
    # compare in doubled units so the half of an odd total stays integral
    hit = int(np.searchsorted(2 * cum, total, side="left"))
    before = int(cum[hit - 1]) if hit else 0
    w = int(weight[hit])
    base = int(values[hit])
    if w == 0:
        return float(base)
    return base + (total - 2 * before) / (2 * w)


def bisection_median(f: AoiFunction, tol: float) -> float:
    """Approximate median by bisection on :func:`fraction_below`.

    Independent of :func:`projection_median`; converges to the lowest level
    ``m`` with ``fraction_below(f, m) >= 1/2`` within ``tol`` nanoseconds, in
    at most ``ceil(log2(range / tol))`` halvings.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    _require_extent(f)
    lo = float(np.min(f.aoi_start))
    hi = float(np.max(f.aoi_end))
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:  # float resolution reached
            break
        if fraction_below(f, mid) >= 0.5:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def bisection_iterations_bound(f: AoiFunction, tol: float) -> int:
    _require_extent(f)
    span = float(np.max(f.aoi_end) - np.min(f.aoi_start))
    return max(0, math.ceil(math.log2(span / tol))) if span > 0 else 0


def peak_aoi(f: AoiFunction) -> int:
    """Largest AoI reached, i.e. the highest segment end (peak AoI)."""
    _require_extent(f)
    return int(np.max(f.aoi_end))


def min_aoi(f: AoiFunction) -> int:
    return int(np.min(f.rx - f.u))


def _rate(ts: np.ndarray) -> float:
    if ts.size < 2:
        raise ValueError("rate needs at least two timestamps")
    span = int(ts.max() - ts.min())
    if span <= 0:
        raise DegenerateDomain("all timestamps coincide")
    return (ts.size - 1) * 1e9 / span


def real_rate(log: TimestampLog) -> float:
    """Reception rate in msg/s: the inverse of the mean inter-arrival time."""
    return _rate(log.rx_ns)


def generation_rate(gen_ns: Union[Sequence[int], np.ndarray]) -> float:
    """Same estimator applied to generation instants."""
    return _rate(np.asarray(gen_ns, dtype=np.int64))


@dataclass(frozen=True)
class AoiSummary:
    mean_ns: float
    median_ns: float
    peak_ns: int
    min_ns: int
    real_rate: float
    messages: int


def summarize(log: TimestampLog) -> AoiSummary:
    f = build_sawtooth(log)
    return AoiSummary(
        mean_ns=integral_mean(f),
        median_ns=projection_median(f),
        peak_ns=peak_aoi(f),
        min_ns=min_aoi(f),
        real_rate=real_rate(log.deduplicated()),
        messages=int(f.rx.size),
    )
