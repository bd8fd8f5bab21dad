"""Discrete water level scale and conversions to metric depth.

Water levels run from 0 (no water) to 10 (an average-height person fully
submerged, 170 cm). Each integer level has a centimeter anchor value;
fractional levels are interpolated linearly between adjacent anchors.
"""

from __future__ import annotations

from collections.abc import Sequence

MIN_LEVEL = 0
MAX_LEVEL = 10

# Centimeter anchor per integer level, anchored to a 170 cm person.
LEVEL_ANCHORS_CM = (0.0, 1.0, 10.0, 21.0, 43.0, 64.0, 85.0, 106.0, 128.0, 149.0, 170.0)

MAX_DEPTH_CM = LEVEL_ANCHORS_CM[-1]


def level_to_cm(level: float) -> float:
    """Convert a (possibly fractional) water level to centimeters.

    Integer levels map to their anchor value exactly; fractional levels are
    interpolated linearly between the two neighbouring anchors.
    """
    if not MIN_LEVEL <= level <= MAX_LEVEL:
        raise ValueError(f"water level {level!r} outside [{MIN_LEVEL}, {MAX_LEVEL}]")
    lo = min(int(level), MAX_LEVEL - 1)
    frac = level - lo
    a, b = LEVEL_ANCHORS_CM[lo], LEVEL_ANCHORS_CM[lo + 1]
    return a + frac * (b - a)


def cm_to_level(depth_cm: float) -> float:
    """Convert a depth in centimeters back to a (fractional) water level.

    Inverse of :func:`level_to_cm`; piecewise linear over the same anchors.
    """
    if not 0.0 <= depth_cm <= MAX_DEPTH_CM:
        raise ValueError(f"depth {depth_cm!r} cm outside [0, {MAX_DEPTH_CM}]")
    # Anchors are strictly increasing, so find the containing segment.
    for lo in range(MAX_LEVEL):
        a, b = LEVEL_ANCHORS_CM[lo], LEVEL_ANCHORS_CM[lo + 1]
        if depth_cm <= b:
            return lo + (depth_cm - a) / (b - a)
    return float(MAX_LEVEL)


def clamp_depth_cm(depth_cm: float) -> float:
    """Clamp a raw depth prediction into the reportable [0, 170] cm range."""
    return min(max(depth_cm, 0.0), MAX_DEPTH_CM)


def aggregate_object_levels(levels: Sequence[int]) -> float:
    """Reduce per-object integer levels for one image to a single depth in cm.

    Level-0 objects are treated as being outside the water (bridges, boats,
    balconies) and are ignored, unless *every* object is at level 0, in which
    case the image depth is 0 cm. The remaining levels are averaged in level
    space and converted through the anchor table.
    """
    if len(levels) == 0:
        raise ValueError("object level set must not be empty")
    for lv in levels:
        if lv != int(lv) or not MIN_LEVEL <= lv <= MAX_LEVEL:
            raise ValueError(f"object level {lv!r} is not an integer in [0, 10]")
    nonzero = [lv for lv in levels if lv != 0]
    if not nonzero:
        return 0.0
    return level_to_cm(sum(nonzero) / len(nonzero))
