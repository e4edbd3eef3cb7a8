"""CSV output: comparison rows, closed-loop traces, sweep and study tables."""

import csv
from io import StringIO
from typing import Any, Sequence

from hmpc.formatters import RenderOptions, RunReport
from hmpc.simulator import ClosedLoopTrace

SWEEP_COLUMNS = ["t_s", "t_d", "N", "converged", "tail_limsup", "tail_limsup_worst", "solve_time_p95", "realtime_feasible", "error"]
ISS_COLUMNS = ["bound", "tail_limsup"]
GAIN_COLUMNS = ["t_d", "L"]


class CsvFormatter:
    """Formatter that outputs CSV."""

    def render(self, report: RunReport, options: RenderOptions) -> str:
        """Render one row per scheme."""
        output = StringIO()
        writer = csv.writer(output)

        if options.quiet:
            writer.writerow(["scheme", "verdict"])
            for row in report.rows:
                writer.writerow([row.name, row.verdict])
            return output.getvalue()

        writer.writerow(
            ["scheme", "t_s", "t_d", "N", "status", "converged", "violation_max", "solve_p50_s", "solve_p95_s", "solve_max_s", "realtime_feasible", "tail_limsup"]
        )
        for row in report.rows:
            writer.writerow(
                [row.name, row.t_s, row.t_d, row.N, row.status, row.converged, row.violation, row.p50, row.p95, row.max, row.realtime, row.tail_limsup]
            )
        return output.getvalue()


def trace_to_csv(trace: ClosedLoopTrace) -> str:
    """One row per plant tick: t, x1..xn, u1..um, d1..dm, solve_ms, event.

    u and d are blank on the final row (no interval follows it); solve_ms and
    event are filled only on sample ticks.
    """
    n = trace.states.shape[1]
    m = trace.inputs.shape[1] if trace.inputs.ndim == 2 else 0
    output = StringIO()
    writer = csv.writer(output)
    writer.writerow(
        ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)] + [f"d{j + 1}" for j in range(m)] + ["solve_ms", "event"]
    )

    solve_ms = {int(i): 1000.0 * w for i, w in zip(trace.sample_indices, trace.solve_wall_times)}
    events: dict[float, list[str]] = {}
    for t, event in trace.feasibility_events:
        events.setdefault(t, []).append(event)

    for i, t in enumerate(trace.times):
        row: list[Any] = [float(t), *trace.states[i].tolist()]
        if i < len(trace.inputs):
            row += trace.inputs[i].tolist() + trace.disturbances[i].tolist()
        else:
            row += [""] * (2 * m)
        row.append(solve_ms.get(i, ""))
        row.append(";".join(events.get(t, [])) if i in solve_ms else "")
        writer.writerow(row)
    return output.getvalue()


def sweep_to_csv(rows: Sequence[dict[str, Any]]) -> str:
    output = StringIO()
    writer = csv.DictWriter(output, fieldnames=SWEEP_COLUMNS)
    writer.writeheader()
    for row in rows:
        writer.writerow({key: row.get(key, "") for key in SWEEP_COLUMNS})
    return output.getvalue()


def _pairs_to_csv(columns: Sequence[str], pairs: Sequence[tuple[float, float]]) -> str:
    output = StringIO()
    writer = csv.writer(output)
    writer.writerow(columns)
    for a, b in pairs:
        writer.writerow([a, b])
    return output.getvalue()


def iss_to_csv(pairs: Sequence[tuple[float, float]]) -> str:
    """Disturbance bound against the worst tail limsup ||x|| over seeds."""
    return _pairs_to_csv(ISS_COLUMNS, pairs)


def gain_curve_to_csv(curve: Sequence[tuple[float, float]]) -> str:
    return _pairs_to_csv(GAIN_COLUMNS, curve)
