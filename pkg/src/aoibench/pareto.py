"""Non-dominated fronts over (AoI, power), percentile bands and merged fronts.

Both objectives are minimized.  ``q`` dominates ``p`` when it is no worse on
both axes and strictly better on at least one, so points with identical
coordinates never dominate each other and are kept together.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

FRONT_CSV_HEADER = ["label", "aoi_ms", "power_w", "aoi_p25", "aoi_p75",
                    "power_p25", "power_p75", "on_front"]


@dataclass(frozen=True)
class Band:
    aoi_p25: float
    aoi_p75: float
    power_p25: float
    power_p75: float


@dataclass(frozen=True)
class ParetoPoint:
    label: str
    aoi: float  # ms, median AoI
    power: float  # W, average power
    band: Optional[Band] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.aoi > 0:
            raise ValueError(f"{self.label}: aoi must be positive, got {self.aoi}")
        if not self.power >= 0:
            raise ValueError(f"{self.label}: power must be non-negative, got {self.power}")
        b = self.band
        if b is not None and not (b.aoi_p25 <= self.aoi <= b.aoi_p75
                                  and b.power_p25 <= self.power <= b.power_p75):
            raise ValueError(f"{self.label}: band does not bracket the median point")


def dominates(q: ParetoPoint, p: ParetoPoint) -> bool:
    return q.aoi <= p.aoi and q.power <= p.power and (q.aoi < p.aoi or q.power < p.power)


def pareto_front(points: Sequence[ParetoPoint]) -> List[ParetoPoint]:
    """Points not dominated by any other, sorted by AoI then power.

    Sort-and-sweep, O(n log n).
    """
    ordered = sorted(points, key=lambda p: (p.aoi, p.power))
    front: List[ParetoPoint] = []
    best_power = math.inf
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].aoi == ordered[i].aoi:
            j += 1
        # ordered[i] has the lowest power among points sharing this AoI
        lowest = ordered[i].power
        if lowest < best_power:
            front.extend(p for p in ordered[i:j] if p.power == lowest)
            best_power = lowest
        i = j
    return front


def merge_fronts(fronts: Iterable[Sequence[ParetoPoint]]) -> List[ParetoPoint]:
    """Front of the union of several fronts; labels travel with the points."""
    union: List[ParetoPoint] = []
    for f in fronts:
        union.extend(f)
    return pareto_front(union)


def percentile(values: Sequence[float], p: float) -> float:
    """Percentile by linear interpolation between closest ranks.

    The rank is ``p/100 * (n-1)`` on the sorted values.
    """
    if not values:
        raise ValueError("percentile of an empty sequence")
    if not 0 <= p <= 100:
        raise ValueError(f"percentile {p} outside [0, 100]")
    xs = sorted(values)
    rank = p / 100 * (len(xs) - 1)
    lo = math.floor(rank)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (xs[hi] - xs[lo]) * (rank - lo)


def band_from(aoi_values: Sequence[float], power_values: Sequence[float]) -> Band:
    return Band(percentile(aoi_values, 25), percentile(aoi_values, 75),
                percentile(power_values, 25), percentile(power_values, 75))


def write_front_csv(path, points: Sequence[ParetoPoint],
                    front: Optional[Sequence[ParetoPoint]] = None) -> None:
    """Write every point, flagging membership of ``front`` (computed if omitted)."""
    if front is None:
        front = pareto_front(points)
    on = {id(p) for p in front}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRONT_CSV_HEADER)
        for p in points:
            b = p.band
            band_cols = ["", "", "", ""] if b is None else [
                repr(float(v)) for v in (b.aoi_p25, b.aoi_p75, b.power_p25, b.power_p75)]
            w.writerow([p.label, repr(float(p.aoi)), repr(float(p.power)), *band_cols,
                        int(id(p) in on)])


def read_front_csv(path) -> List[ParetoPoint]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != FRONT_CSV_HEADER:
            raise ValueError(f"unexpected front CSV header {reader.fieldnames!r}")
        for row in reader:
            band = None
            if row["aoi_p25"]:
                band = Band(float(row["aoi_p25"]), float(row["aoi_p75"]),
                            float(row["power_p25"]), float(row["power_p75"]))
            out.append(ParetoPoint(row["label"], float(row["aoi_ms"]), float(row["power_w"]), band))
    return out
