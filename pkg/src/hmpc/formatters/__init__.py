"""Formatter selection and shared types."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from hmpc.experiments import SchemeResult


@dataclass
class RenderOptions:
    """Options controlling output rendering."""

    show_chart: bool = True
    quiet: bool = False  # Show only the pass/fail line per scheme
    chart_width: int = 40


@dataclass
class SchemeRow:
    """One scheme's line in the comparison table."""

    name: str
    t_s: float
    t_d: float
    N: int
    status: str
    converged: bool = False
    violation: float = math.nan
    p50: float = math.nan
    p95: float = math.nan
    max: float = math.nan
    realtime: bool = False
    tail_limsup: float = math.nan
    ratio: float | None = None
    norms: list[float] = field(default_factory=list)
    error: str | None = None

    @property
    def verdict(self) -> str:
        if self.error is not None:
            return "CRASH"
        return "PASS" if self.converged else "FAIL"


@dataclass
class RunReport:
    """What a formatter renders: a titled list of scheme rows."""

    title: str
    rows: list[SchemeRow]

    @classmethod
    def from_results(cls, title: str, results: Sequence[SchemeResult]) -> RunReport:
        rows = []
        for result in results:
            scheme = result.scheme
            if result.crashed:
                rows.append(SchemeRow(result.name, scheme.t_s, scheme.t_d, result.N, "crashed", error=result.error))
                continue
            s = result.summary
            rows.append(
                SchemeRow(
                    name=result.name,
                    t_s=scheme.t_s,
                    t_d=scheme.t_d,
                    N=result.N,
                    status=s["status"],
                    converged=s["converged"],
                    violation=s["constraint_violation_max"],
                    p50=s["solve_time_p50"],
                    p95=s["solve_time_p95"],
                    max=s["solve_time_max"],
                    realtime=s["realtime_feasible"],
                    tail_limsup=s["tail_limsup"],
                    norms=result.trace.norms[result.trace.sample_indices].tolist(),
                )
            )

        fastest = min((row.p50 for row in rows if row.error is None and row.p50 > 0), default=None)
        for row in rows:
            if fastest and row.error is None:
                row.ratio = row.p50 / fastest
        return cls(title=title, rows=rows)

    def quiet_lines(self) -> str:
        return "\n".join(f"{row.name}: {row.verdict}" for row in self.rows)


class Formatter(Protocol):
    """Protocol for output formatters."""

    def render(self, report: RunReport, options: RenderOptions) -> str:
        """Render the report to a string."""
        ...


def get_formatter(name: str) -> Formatter:
    """Get a formatter by name.

    Args:
        name: One of 'rich', 'plain', 'json', 'csv'

    Returns:
        Formatter instance

    Raises:
        ValueError: If formatter name is unknown
    """
    name = name.lower().strip()

    if name == "rich":
        from hmpc.formatters.rich_fmt import RichFormatter

        return RichFormatter()

    elif name == "plain":
        from hmpc.formatters.plain_fmt import PlainFormatter

        return PlainFormatter()

    elif name == "json":
        from hmpc.formatters.json_fmt import JsonFormatter

        return JsonFormatter()

    elif name == "csv":
        from hmpc.formatters.csv_fmt import CsvFormatter

        return CsvFormatter()

    else:
        raise ValueError(f"Unknown formatter: {name}. Use: rich, plain, json, csv")
