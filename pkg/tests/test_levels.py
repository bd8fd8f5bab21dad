import numpy as np
import pytest
from hypothesis import given, strategies as st

from floodlevel.levels import (
    LEVEL_ANCHORS_CM,
    aggregate_object_levels,
    clamp_depth_cm,
    cm_to_level,
    level_to_cm,
)

# Independent interpolation oracle: numpy's piecewise-linear interp over the
# same anchor table, never touching the implementation under test.


def oracle_level_to_cm(level):
    return float(np.interp(level, np.arange(11), LEVEL_ANCHORS_CM))


def oracle_cm_to_level(depth):
    return float(np.interp(depth, LEVEL_ANCHORS_CM, np.arange(11)))


def test_integer_anchors_exact():
    expected = (0.0, 1.0, 10.0, 21.0, 43.0, 64.0, 85.0, 106.0, 128.0, 149.0, 170.0)
    for lv, cm in enumerate(expected):
        assert level_to_cm(lv) == cm


def test_level_to_cm_examples():
    assert level_to_cm(4) == 43.0
    assert level_to_cm(0) == 0.0
    # fractional level, checked against the independent oracle
    assert oracle_level_to_cm(4.5) == 53.5
    assert level_to_cm(4.5) == pytest.approx(53.5, abs=1e-12)


def test_cm_to_level_examples():
    assert cm_to_level(43.0) == 4.0
    assert cm_to_level(0.0) == 0.0
    assert oracle_cm_to_level(53.5) == 4.5
    assert cm_to_level(53.5) == pytest.approx(4.5, abs=1e-12)


def test_out_of_range_rejected():
    with pytest.raises(ValueError):
        level_to_cm(-0.1)
    with pytest.raises(ValueError):
        level_to_cm(10.01)
    with pytest.raises(ValueError):
        cm_to_level(-1.0)
    with pytest.raises(ValueError):
        cm_to_level(170.5)


@given(st.floats(min_value=0.0, max_value=10.0, allow_nan=False))
def test_round_trip(level):
    assert cm_to_level(level_to_cm(level)) == pytest.approx(level, abs=1e-9)


@given(st.floats(min_value=0.0, max_value=10.0), st.floats(min_value=0.0, max_value=10.0))
def test_monotone(a, b):
    if a > b:
        a, b = b, a
    assert level_to_cm(a) <= level_to_cm(b)


@given(st.floats(min_value=0.0, max_value=10.0))
def test_matches_interp_oracle(level):
    assert level_to_cm(level) == pytest.approx(oracle_level_to_cm(level), abs=1e-9)


def test_aggregate_all_zero():
    assert aggregate_object_levels([0, 0, 0]) == 0.0


def test_aggregate_drops_zeros():
    # mean of {4, 6} is level 5 -> 64 cm
    assert aggregate_object_levels([0, 4, 6]) == 64.0


def test_aggregate_fractional_mean():
    assert oracle_level_to_cm(4.5) == 53.5
    assert aggregate_object_levels([4, 5]) == pytest.approx(53.5, abs=1e-12)


@given(
    st.lists(st.integers(min_value=0, max_value=10), min_size=1, max_size=12),
    st.integers(min_value=1, max_value=5),
)
def test_aggregate_ignores_appended_zeros(levels, extra_zeros):
    if all(lv == 0 for lv in levels):
        levels = levels + [3]
    base = aggregate_object_levels(levels)
    assert aggregate_object_levels(levels + [0] * extra_zeros) == base


def test_aggregate_rejects_bad_input():
    with pytest.raises(ValueError):
        aggregate_object_levels([])
    with pytest.raises(ValueError):
        aggregate_object_levels([11])
    with pytest.raises(ValueError):
        aggregate_object_levels([1.5])


def test_clamp():
    assert clamp_depth_cm(-5.0) == 0.0
    assert clamp_depth_cm(200.0) == 170.0
    assert clamp_depth_cm(42.0) == 42.0
