"""Walk through the AoI statistics of one small timestamp log.

Three messages generated one second apart, each delivered 100 ms later
except the middle one, which takes 400 ms.  Run with ``python demos/sawtooth_walkthrough.py``.
"""

import numpy as np

from aoibench import aoi

S = 1_000_000_000

log = aoi.TimestampLog.from_records([
    (0, 0, S // 10),
    (1, 1 * S, 1 * S + 4 * S // 10),
    (2, 2 * S, 2 * S + S // 10),
    (3, 3 * S, 3 * S + S // 10),
])
f = aoi.build_sawtooth(log)

print("segments (start age ms, length ms):")
for a, l in zip(f.aoi_start, f.seg_len):
    print(f"  {a / 1e6:7.1f}  {l / 1e6:7.1f}")

print(f"time-average age   {aoi.integral_mean(f) / 1e6:8.3f} ms")
print(f"sampled at 1 kHz   {aoi.sampled_mean(f, 1000.0) / 1e6:8.3f} ms")
m = aoi.projection_median(f)
print(f"median (exact)     {m / 1e6:8.3f} ms, fraction of time below it {aoi.fraction_below(f, m):.6f}")
print(f"median (bisection) {aoi.bisection_median(f, 1.0) / 1e6:8.3f} ms")
print(f"peak / min         {aoi.peak_aoi(f) / 1e6:.1f} / {aoi.min_aoi(f) / 1e6:.1f} ms")

# the age curve itself, for plotting elsewhere
t = np.linspace(f.t_start[0], f.t_end[-1], 9)
print("age at evenly spaced instants (ms):", np.round(aoi.evaluate_many(f, t) / 1e6, 1))
