"""Sparklines for state-norm traces."""

import math
from typing import Sequence

SPARK_BLOCKS = " ▁▂▃▄▅▆▇█"
LOG_FLOOR = 1e-12


def _bucket_peaks(values: list[float], width: int) -> list[float]:
    """Downsample to `width` points, keeping the largest value of each bucket."""
    edges = [round(i * len(values) / width) for i in range(width + 1)]
    return [max(values[lo:hi]) for lo, hi in zip(edges, edges[1:]) if hi > lo]


def spark_chart(values: Sequence[float], width: int | None = None, log: bool = False) -> str:
    """One block character per value (or per bucket when width is given).

    With log=True the chart shows log10 of the values, non-positive values
    clipped to LOG_FLOOR, which suits decaying norms. Non-finite values are
    dropped.
    """
    points = [float(v) for v in values]
    if log:
        points = [math.log10(max(v, LOG_FLOOR)) for v in points]
    points = [v for v in points if math.isfinite(v)]
    if not points:
        return ""

    if width and len(points) > width:
        points = _bucket_peaks(points, width)

    low, high = min(points), max(points)
    if high == low:
        return SPARK_BLOCKS[4] * len(points)

    top = len(SPARK_BLOCKS) - 1
    return "".join(SPARK_BLOCKS[int((v - low) / (high - low) * top)] for v in points)
