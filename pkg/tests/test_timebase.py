import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boardsim import timebase as tb


MHZ = Fraction(10**6)


def test_derive_clock_examples():
    assert tb.derive_clock(tb.REF_HZ, 16) == Fraction(122_880_000)
    assert tb.derive_clock(tb.REF_HZ, 1) == tb.REF_HZ
    assert tb.derive_clock(tb.REF_HZ, 768) == Fraction(5_898_240_000)
    assert tb.derive_clock(Fraction(122_880_000), 3) == Fraction(368_640_000)


def test_derive_clock_rejects_bad_multiplier():
    with pytest.raises(ValueError):
        tb.derive_clock(tb.REF_HZ, 0)


def test_edge_time_epoch_and_rounding():
    dom = tb.ClockDomain("pl_refclk", Fraction(122_880_000), 16)
    assert dom.edge_time(0) == 0
    # 2 / 122.88 MHz = 16.276 ns, rounded at emission
    assert dom.edge_time(2) == 16_276_042
    assert dom.period == Fraction(10**15, 122_880_000)


def test_edge_time_phase_offset():
    dom = tb.ClockDomain("pl_refclk", Fraction(122_880_000), 16,
                         phase_offset_fs=123)
    assert dom.edge_time(0) == 123


def test_edge_time_jitter_statistics():
    sigma = 20_000  # 20 ps in fs
    dom = tb.ClockDomain("pl_refclk", Fraction(122_880_000), 16,
                         jitter_rms_fs=sigma)
    rng = random.Random(7)
    nominal = dom.edge_time(0)
    samples = [dom.edge_time(0, rng) - nominal for _ in range(100_000)]
    mean = sum(samples) / len(samples)
    var = sum((s - mean) ** 2 for s in samples) / (len(samples) - 1)
    assert abs(math.sqrt(var) - sigma) / sigma < 0.02


def test_two_board_skew_rms():
    # skew between two independently jittered boards has RMS sqrt(2)*sigma
    sigma = 20_000
    tree = tb.default_tree(("A", "B"), jitter_rms_fs=sigma)
    rng_a, rng_b = random.Random(1), random.Random(2)
    da, db = tree.domain("A", "pl_refclk"), tree.domain("B", "pl_refclk")
    diffs = [da.edge_time(k, rng_a) - db.edge_time(k, rng_b)
             for k in range(100_000)]
    rms = math.sqrt(sum(d * d for d in diffs) / len(diffs))
    expect = math.sqrt(2) * sigma
    assert abs(rms - expect) / expect < 0.05


def test_boards_agree_without_jitter():
    tree = tb.default_tree(("A", "B"))
    for name in tb.DEFAULT_RATIOS:
        da, db = tree.domain("A", name), tree.domain("B", name)
        for tick in (0, 1, 2, 97, 12345):
            assert da.edge_time(tick) == db.edge_time(tick)


@given(st.integers(min_value=0, max_value=10**9))
def test_edge_time_monotonic(tick):
    dom = tb.ClockDomain("time", Fraction(368_640_000), 48)
    assert dom.edge_time(tick + 1) > dom.edge_time(tick)


def test_edge_at_or_after_is_exact():
    dom = tb.ClockDomain("pl_refclk", Fraction(122_880_000), 16)
    for t in (0, 1, 8_138_020, 8_138_021, 8_138_022, 50_000_000):
        k, when = dom.edge_at_or_after(t)
        assert when >= t
        assert k == 0 or dom.edge_time(k - 1) < t


def test_validate_default_tree():
    tree = tb.default_tree(("A", "B"))
    report = tb.validate_tree(tree)
    assert report.valid
    assert report.ratios["A"] == {1, 16, 32, 48, 768, 320}
    assert report.ratios["B"] == {1, 16, 32, 48, 768, 320}


def test_validate_rejects_non_multiple():
    tree = tb.default_tree(("A",))
    tree.boards["A"]["rogue"] = tb.ClockDomain.__new__(tb.ClockDomain)
    tree.boards["A"]["rogue"].name = "rogue"
    tree.boards["A"]["rogue"].freq = Fraction(100_000_000)
    tree.boards["A"]["rogue"].ratio_to_ref = 13
    tree.boards["A"]["rogue"].phase_offset_fs = 0
    tree.boards["A"]["rogue"].jitter_rms_fs = 0
    report = tb.validate_tree(tree)
    assert not report.valid
    assert any("rogue" in v for v in report.violations)


def test_validate_empty_tree_vacuous():
    report = tb.validate_tree(tb.ClockTree())
    assert report.valid
    assert report.violations == []


@settings(max_examples=200)
@given(st.integers(min_value=1, max_value=10**10))
def test_validate_random_non_multiples(hz):
    tree = tb.ClockTree()
    dom = tb.ClockDomain.__new__(tb.ClockDomain)
    dom.name = "x"
    dom.freq = Fraction(hz)
    dom.ratio_to_ref = max(1, hz // 7_680_000)
    dom.phase_offset_fs = 0
    dom.jitter_rms_fs = 0
    tree.boards["A"] = {"x": dom}
    report = tb.validate_tree(tree)
    assert report.valid == (hz % 7_680_000 == 0
                            and hz // 7_680_000 == dom.ratio_to_ref
                            and hz >= 7_680_000)
