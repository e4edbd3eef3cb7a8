"""Utility functions for parsing and formatting."""

import math
import re

_DEG = re.compile(r"^\s*([-+]?[\d.eE+-]+)\s*(deg|°)\s*$", re.IGNORECASE)
_SEC = re.compile(r"^\s*([-+]?[\d.eE+-]+)\s*(ms|s)\s*$", re.IGNORECASE)


def parse_angle(value: str | float | int) -> float:
    """Parse an angle to radians.

    Accepts:
        - "7deg", "-35 deg", "4°" -> degrees converted to radians
        - "0.12" or 0.12 -> radians as given
    """
    if isinstance(value, (int, float)):
        return float(value)

    text = str(value).strip()
    match = _DEG.match(text)
    if match:
        return math.radians(float(match.group(1)))
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"Invalid angle '{value}'. Use radians or a 'deg' suffix.")


def parse_seconds(value: str | float | int) -> float:
    """Parse a duration in seconds.

    Accepts:
        - "0.02s", "20ms" -> 0.02
        - 0.02 or "0.02" -> 0.02
    """
    if isinstance(value, (int, float)):
        seconds = float(value)
    else:
        text = str(value).strip()
        match = _SEC.match(text)
        if match:
            seconds = float(match.group(1))
            if match.group(2).lower() == "ms":
                seconds /= 1000.0
        else:
            try:
                seconds = float(text)
            except ValueError:
                raise ValueError(f"Invalid duration '{value}'. Use seconds, 's' or 'ms' suffix.")
    if not math.isfinite(seconds) or seconds <= 0:
        raise ValueError(f"Duration must be positive and finite, got {value!r}")
    return seconds


def parse_grid(value: str) -> list[float]:
    """Parse a comma-separated list of durations ("0.4,0.2,100ms")."""
    items = [item for item in str(value).split(",") if item.strip()]
    if not items:
        raise ValueError("Empty grid")
    return [parse_seconds(item) for item in items]


def format_ms(seconds: float, decimals: int = 2) -> str:
    """Format a duration in seconds as milliseconds."""
    return f"{seconds * 1000.0:.{decimals}f} ms"


def format_ratio(ratio: float | None) -> str:
    """Format a timing ratio like '12.3x'."""
    if ratio is None or not math.isfinite(ratio):
        return "n/a"
    return f"{ratio:.1f}x"
