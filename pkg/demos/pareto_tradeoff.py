"""Pick the AoI/power trade-off front out of a handful of made-up runs."""

from aoibench.pareto import ParetoPoint, pareto_front

runs = [
    ParetoPoint("tcp-fifo16-r10", 120.0, 0.82),
    ParetoPoint("tcp-fifo16-r100", 48.0, 1.10),
    ParetoPoint("tls-fifo16-r100", 52.0, 1.25),
    ParetoPoint("quic-fifo16-r100", 45.0, 1.31),
    ParetoPoint("quic-drop-r1000", 31.0, 1.90),
    ParetoPoint("tls-fifo1-r1000", 60.0, 1.95),
]

front = pareto_front(runs)
for p in runs:
    mark = "*" if p in front else " "
    print(f"{mark} {p.label:18s} median AoI {p.aoi:6.1f} ms  power {p.power:.2f} W")
