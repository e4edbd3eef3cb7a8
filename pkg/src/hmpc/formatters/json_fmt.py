"""JSON formatter for machine-readable output."""

import json
import math
from typing import Any

import numpy as np

from hmpc.formatters import RenderOptions, RunReport


class NumpyEncoder(json.JSONEncoder):
    """JSON encoder that handles numpy scalars and arrays; inf/nan become null."""

    def default(self, obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, np.generic):
            return obj.item()
        return super().default(obj)

    def iterencode(self, obj, _one_shot=False):
        return super().iterencode(_finite(obj), _one_shot)


def _finite(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return _finite(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps(data: Any) -> str:
    """Serialize summaries and comparisons (strict JSON, no NaN/Infinity)."""
    return json.dumps(data, indent=2, cls=NumpyEncoder, allow_nan=False)


class JsonFormatter:
    """Formatter that outputs JSON."""

    def render(self, report: RunReport, options: RenderOptions) -> str:
        """Render the comparison as JSON."""
        if options.quiet:
            return dumps({row.name: row.verdict for row in report.rows})

        data = {
            "title": report.title,
            "schemes": [
                {
                    "name": row.name,
                    "t_s": row.t_s,
                    "t_d": row.t_d,
                    "N": row.N,
                    "status": row.status,
                    "converged": row.converged,
                    "constraint_violation_max": row.violation,
                    "solve_time_p50": row.p50,
                    "solve_time_p95": row.p95,
                    "solve_time_max": row.max,
                    "realtime_feasible": row.realtime,
                    "tail_limsup": row.tail_limsup,
                    "ts_ratio": row.ratio,
                    "error": row.error,
                }
                for row in report.rows
            ],
        }
        return dumps(data)
