from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aoibench.aoi import (
    AoiDataError,
    DegenerateDomain,
    TimestampLog,
    bisection_iterations_bound,
    bisection_median,
    build_sawtooth,
    evaluate,
    fraction_below,
    generation_rate,
    integral_mean,
    min_aoi,
    peak_aoi,
    projection_median,
    real_rate,
    sampled_mean,
)

S = 1_000_000_000  # ns per second


def log_s(*rows):
    """Build a log from (seq, gen_s, rx_s) rows given in seconds."""
    return TimestampLog.from_records((s, round(g * S), round(r * S)) for s, g, r in rows)


def brute_sawtooth(records):
    """Independent construction: scan records in rx order keeping max gen."""
    seen, clean = set(), []
    for seq, gen, rx in sorted(records, key=lambda r: r[2]):
        if seq in seen:
            continue
        seen.add(seq)
        clean.append((gen, rx))
    out, newest = [], None
    for i, (gen, rx) in enumerate(clean[:-1]):
        newest = gen if newest is None else max(newest, gen)
        out.append((rx, rx - newest, clean[i + 1][1]))
    return out


def random_log(rng, n, period_ns=None, reorder=True):
    period_ns = period_ns or int(rng.integers(1_000_000, 1_000_000_000))
    gen = np.cumsum(rng.integers(period_ns // 2, period_ns * 3 // 2, size=n))
    base = int(rng.integers(0, 100_000_000))
    delay = base + rng.exponential(scale=period_ns / 3, size=n).astype(np.int64)
    if rng.random() < 0.3:
        spikes = rng.random(n) < 0.02
        delay[spikes] += int(rng.integers(1, 20)) * period_ns
    rx = gen + delay
    if not reorder:
        rx = np.maximum.accumulate(rx)
    return TimestampLog(np.arange(n), gen, rx)


# -- construction -------------------------------------------------------------


def test_two_record_sawtooth():
    f = build_sawtooth(log_s((0, 0, 0.1), (1, 1, 1.1)))
    assert f.segments() == [(S // 10, S // 10, 11 * S // 10)]
    assert evaluate(f, 11 * S // 10) == S // 10


def test_single_record_is_degenerate():
    f = build_sawtooth(log_s((0, 0, 0.1)))
    assert evaluate(f, S // 10) == S // 10
    for stat in (integral_mean, projection_median, peak_aoi):
        with pytest.raises(DegenerateDomain):
            stat(f)
    with pytest.raises(DegenerateDomain):
        bisection_median(f, 1.0)


def test_stale_generation_keeps_rising():
    f = build_sawtooth(log_s((0, 0, 1), (1, 0.5, 2), (2, 2, 3)))
    assert f.segments() == [(1 * S, 1 * S, 2 * S), (2 * S, 3 * S // 2, 3 * S)]
    assert evaluate(f, 3 * S) == S
    # a message older than the one already held does not make AoI drop
    g = build_sawtooth(log_s((0, 1, 1.5), (1, 0.5, 2), (2, 2, 3)))
    assert g.segments() == [(3 * S // 2, S // 2, 2 * S), (2 * S, S, 3 * S)]


def test_duplicates_keep_earliest():
    f = build_sawtooth(log_s((0, 0, 0.1), (1, 1, 1.3), (1, 1, 1.1), (2, 2, 2.1)))
    assert f.segments() == brute_sawtooth(log_s((0, 0, 0.1), (1, 1, 1.1), (2, 2, 2.1)).records())


def test_bad_logs():
    with pytest.raises(AoiDataError):
        build_sawtooth(TimestampLog.from_records([]))
    with pytest.raises(AoiDataError):
        build_sawtooth(log_s((0, 1, 0.5)))


def test_evaluate_points():
    f = build_sawtooth(log_s((0, 0, 0.1), (1, 1, 1.1)))
    assert evaluate(f, round(1.05 * S)) == round(1.05 * S)
    assert evaluate(f, round(1.2 * S)) == round(0.2 * S)
    with pytest.raises(ValueError):
        evaluate(f, 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10**9), st.integers(0, 10**9)), min_size=1, max_size=60))
def test_sawtooth_matches_brute_force(pairs):
    records = [(i, g, g + d) for i, (g, d) in enumerate(pairs)]
    f = build_sawtooth(TimestampLog.from_records(records))
    assert f.segments() == brute_sawtooth(records)
    assert min_aoi(f) >= 0


# -- mean ---------------------------------------------------------------------


@pytest.mark.parametrize("rows,expected_s", [
    ([(0, 0, 0), (1, 1, 1)], 0.5),
    ([(0, 0, 0.1), (1, 1, 1.1), (2, 2, 2.1)], 0.6),
    ([(0, 0, 0), (1, 1, 1), (2, 4, 4)], 1.25),
])
def test_integral_mean_hand(rows, expected_s):
    f = build_sawtooth(log_s(*rows))
    assert integral_mean(f) == pytest.approx(expected_s * S, rel=1e-12)


def exact_mean(f):
    area = sum(Fraction(2 * a + l, 2) * l for a, l in zip(f.aoi_start.tolist(), f.seg_len.tolist()))
    return area / f.duration


def test_integral_mean_against_exact_rational():
    rng = np.random.default_rng(3)
    for _ in range(50):
        f = build_sawtooth(random_log(rng, int(rng.integers(2, 300))))
        assert integral_mean(f) == pytest.approx(float(exact_mean(f)), rel=1e-12)


def test_sampled_mean_close_to_integral():
    # 1 s period, 40 ms delay, similar to a rate-1 run
    rng = np.random.default_rng(11)
    gen = np.arange(60) * S + rng.integers(0, 1_000_000, 60)
    rx = gen + 40_000_000 + rng.integers(0, 5_000_000, 60)
    f = build_sawtooth(TimestampLog(np.arange(60), gen, rx))
    diff = integral_mean(f) - sampled_mean(f, 1000.0)
    assert abs(diff) < 1_000_000


def test_grid_aligned_sampling_is_half_a_step_low():
    # millisecond timestamps: every tooth starts on the 1 kHz grid, so samples
    # sit at the left of each millisecond and miss half a step of growth
    gen = np.arange(60) * S
    rx = gen + 40_000_000
    f = build_sawtooth(TimestampLog(np.arange(60), gen, rx))
    diff = integral_mean(f) - sampled_mean(f, 1000.0)
    # 59 000 grid samples average 539.5 ms; the sample at the last delivery
    # reads the fresh 40 ms age
    want = 0.54e9 - ((0.54e9 - 0.5e6) * 59_000 + 0.04e9) / 59_001
    assert diff == pytest.approx(want, rel=1e-9)
    assert 0.45e6 < diff < 0.51e6


# -- median -------------------------------------------------------------------


@pytest.mark.parametrize("rows,expected_s", [
    ([(0, 0, 0), (1, 1, 1)], 0.5),
    ([(0, 0, 0), (1, 1, 1), (2, 4, 4)], 1.0),
    ([(0, 0, 0.1), (1, 1, 1.1), (2, 2, 2.1)], 0.6),
])
def test_projection_median_hand(rows, expected_s):
    f = build_sawtooth(log_s(*rows))
    m = projection_median(f)
    assert m == pytest.approx(expected_s * S, abs=1e-6)
    assert fraction_below(f, m) == pytest.approx(0.5, abs=1e-12)


def test_unweighted_walk_would_be_wrong():
    # two identical teeth: the literal walk without dividing by the region
    # weight lands at 1.1 s, where the function spends all of its time below.
    f = build_sawtooth(log_s((0, 0, 0.1), (1, 1, 1.1), (2, 2, 2.1)))
    assert fraction_below(f, 1.1 * S) == 1.0
    assert projection_median(f) == pytest.approx(0.6 * S)


def test_median_in_projection_gap_is_lowest_level():
    # teeth 2->3 then 0->1 (seconds): every level in [1, 2] splits time in half
    f = build_sawtooth(log_s((0, 0, 2), (1, 3, 3), (2, 4, 4)))
    assert [tuple(x / S for x in seg[1:2]) for seg in f.segments()] == [(2.0,), (0.0,)]
    assert fraction_below(f, 1.0 * S) == fraction_below(f, 2.0 * S) == 0.5
    assert projection_median(f) == 1.0 * S
    assert bisection_median(f, 1.0) == pytest.approx(1.0 * S, abs=1.0)


def test_fraction_below_extremes():
    f = build_sawtooth(log_s((0, 0, 0), (1, 1, 1), (2, 4, 4)))
    assert fraction_below(f, -1) == 0.0
    assert fraction_below(f, 10 * S) == 1.0
    assert fraction_below(f, 1.0 * S) == 0.5
    assert peak_aoi(f) == 3 * S


def test_bisection_symmetric_and_bound():
    f = build_sawtooth(log_s((0, 0, 0), (1, 1, 1)))
    assert bisection_median(f, 1e-6 * S) == pytest.approx(0.5 * S, abs=1e-6 * S)
    assert bisection_iterations_bound(f, 1.0) == 30


def dense_sample_median(f, samples=200_001):
    t = np.linspace(f.rx[0], f.rx[-1], samples)
    k = np.searchsorted(f.rx, t, side="right") - 1
    return float(np.median(t - f.u[k]))


def test_projection_median_agrees_with_bisection_and_sampling():
    rng = np.random.default_rng(7)
    for _ in range(200):
        f = build_sawtooth(random_log(rng, int(rng.integers(2, 1000))))
        m = projection_median(f)
        assert abs(fraction_below(f, m) - 0.5) <= 1e-12
        assert abs(m - bisection_median(f, 1.0)) <= 1.0
        step = f.duration / 200_000
        assert abs(m - dense_sample_median(f)) <= 2 * step + 1


def test_median_not_above_mean_with_isolated_peaks():
    rng = np.random.default_rng(5)
    period = S // 2000
    gen = np.arange(20_000) * period
    rx = gen + 10_000_000 + rng.integers(0, 200_000, gen.size)
    spikes = rng.choice(gen.size, 40, replace=False)
    rx[spikes] += 500_000_000
    f = build_sawtooth(TimestampLog(np.arange(gen.size), gen, rx))
    assert projection_median(f) < integral_mean(f)


def test_translation_invariance():
    rng = np.random.default_rng(9)
    log = random_log(rng, 500)
    f, g = build_sawtooth(log), build_sawtooth(log.shifted(123_456_789_012))
    assert integral_mean(f) == pytest.approx(integral_mean(g), rel=1e-12)
    assert projection_median(f) == projection_median(g)
    assert peak_aoi(f) == peak_aoi(g)


# -- rates --------------------------------------------------------------------


def test_real_rate():
    assert real_rate(log_s(*[(i, i, i) for i in range(11)])) == pytest.approx(1.0)
    assert real_rate(log_s((0, 0, 0), (1, 0.5, 0.5), (2, 1.0, 1.0))) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        real_rate(log_s((0, 0, 0)))
    assert generation_rate([0, S // 100, 2 * S // 100]) == pytest.approx(100.0)


def test_csv_round_trip(tmp_path):
    log = log_s((0, 0, 0.1), (1, 1, 1.1))
    path = tmp_path / "log.csv"
    log.to_csv(path)
    assert path.read_text().splitlines()[0] == "seq,gen_ns,rx_ns"
    assert TimestampLog.from_csv(path).records() == log.records()
