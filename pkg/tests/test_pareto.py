import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aoibench.pareto import (
    Band,
    ParetoPoint,
    merge_fronts,
    pareto_front,
    percentile,
    read_front_csv,
    write_front_csv,
)


def pts(*coords):
    return [ParetoPoint(f"p{i}", a, p) for i, (a, p) in enumerate(coords)]


def coords(front):
    return [(p.aoi, p.power) for p in front]


def brute_front(points):
    """O(n^2) dominance filter."""
    keep = []
    for p in points:
        dominated = any(
            q.aoi <= p.aoi and q.power <= p.power and (q.aoi < p.aoi or q.power < p.power)
            for q in points
        )
        if not dominated:
            keep.append(p)
    return sorted(keep, key=lambda p: (p.aoi, p.power))


def test_front_examples():
    assert coords(pareto_front(pts((1, 3)))) == [(1, 3)]
    assert coords(pareto_front(pts((1, 3), (2, 2), (3, 1), (2.5, 2.5)))) == [(1, 3), (2, 2), (3, 1)]
    assert coords(pareto_front(pts((1, 1), (2, 2), (3, 3)))) == [(1, 1)]


def test_duplicates_retained():
    front = pareto_front(pts((1, 2), (1, 2), (2, 1), (1, 3)))
    assert coords(front) == [(1, 2), (1, 2), (2, 1)]


def test_merge_examples():
    a, b = pts((1, 3)), [ParetoPoint("b", 2, 2)]
    assert coords(merge_fronts([a, b])) == [(1, 3), (2, 2)]
    a = [ParetoPoint("tls-1", 1, 3), ParetoPoint("tls-2", 3, 1)]
    b = [ParetoPoint("quic-1", 2, 1.5)]
    merged = merge_fronts([a, b])
    assert [p.label for p in merged] == ["tls-1", "quic-1", "tls-2"]
    assert merge_fronts([a, a]) == pareto_front(a + a)


def test_percentile_examples():
    assert percentile([1, 2, 3, 4, 5], 50) == 3
    assert percentile([1, 2, 3, 4], 25) == 1.75
    assert percentile([7], 13) == 7
    with pytest.raises(ValueError):
        percentile([], 50)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.floats(0, 100))
def test_percentile_matches_numpy_linear(values, p):
    assert percentile(values, p) == pytest.approx(float(np.percentile(values, p)), rel=1e-9, abs=1e-9)


def random_points(rng, n):
    grid = rng.random() < 0.5  # coarse grid provokes ties
    def val():
        return rng.randint(1, 10) if grid else rng.uniform(0.01, 100)
    return [ParetoPoint(f"p{i}", val(), val() - 1 if grid else val()) for i in range(n)]


def test_front_equals_brute_force():
    rng = random.Random(1)
    for _ in range(300):
        points = random_points(rng, rng.randint(1, 200))
        front = pareto_front(points)
        assert [p.label for p in front] == [p.label for p in brute_front(points)]
        assert pareto_front(front) == front
        shuffled = points[:]
        rng.shuffle(shuffled)
        assert {p.label for p in pareto_front(shuffled)} == {p.label for p in front}
        a, b = rng.uniform(0.1, 10), rng.uniform(0.1, 10)
        scaled = [ParetoPoint(p.label, a * p.aoi, b * p.power + 3) for p in points]
        assert {p.label for p in pareto_front(scaled)} == {p.label for p in front}


def test_merge_subset_of_union():
    rng = random.Random(2)
    for _ in range(100):
        fa = pareto_front(random_points(rng, 30))
        fb = pareto_front(random_points(rng, 30))
        merged = merge_fronts([fa, fb])
        assert all(any(m is p for p in fa + fb) for m in merged)


def test_band_validation():
    ParetoPoint("ok", 2, 1, Band(1, 3, 0.5, 1.5))
    with pytest.raises(ValueError):
        ParetoPoint("bad", 2, 1, Band(2.5, 3, 0.5, 1.5))
    with pytest.raises(ValueError):
        ParetoPoint("zero", 0, 1)


def test_front_csv(tmp_path):
    points = [ParetoPoint("a", 1.5, 2.0, Band(1, 2, 1.5, 2.5)), ParetoPoint("b", 3.0, 3.0)]
    path = tmp_path / "front.csv"
    write_front_csv(path, points)
    lines = path.read_text().splitlines()
    assert lines[0] == "label,aoi_ms,power_w,aoi_p25,aoi_p75,power_p25,power_p75,on_front"
    assert lines[1] == "a,1.5,2.0,1.0,2.0,1.5,2.5,1"
    assert lines[2] == "b,3.0,3.0,,,,,0"
    back = read_front_csv(path)
    assert back == points and back[0].band == points[0].band
