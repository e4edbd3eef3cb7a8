"""Plain text formatter using ASCII characters."""

import math

from hmpc.charts import spark_chart
from hmpc.formatters import RenderOptions, RunReport, SchemeRow
from hmpc.utils import format_ms, format_ratio


def _number(value: float, spec: str = ".2e") -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return f"{value:{spec}}"


class PlainFormatter:
    """ASCII-only plain text formatter."""

    def render(self, report: RunReport, options: RenderOptions) -> str:
        """Render the scheme comparison as plain text."""
        if options.quiet:
            return report.quiet_lines()

        lines = [self._render_header(report), ""]
        lines.append(self._render_table(report.rows))

        if options.show_chart:
            lines.append("")
            width = max(len(row.name) for row in report.rows)
            for row in report.rows:
                spark = spark_chart(row.norms, width=options.chart_width, log=True)
                lines.append(f"{row.name:<{width}}  ||x||: {spark}")

        errors = [row for row in report.rows if row.error]
        if errors:
            lines.append("")
            lines.extend(f"{row.name}: {row.error}" for row in errors)

        return "\n".join(lines)

    def _render_header(self, report: RunReport) -> str:
        """Render the title box."""
        summary = f"{len(report.rows)} scheme(s); realtime = p95 solve time <= t_s"
        width = max(len(summary), len(report.title)) + 4
        border = "+" + "-" * (width - 2) + "+"
        return "\n".join(
            [border, f"|  {report.title:<{width - 4}}|", f"|  {summary:<{width - 4}}|", border]
        )

    def _render_table(self, rows: list[SchemeRow]) -> str:
        header = ["Scheme", "t_s", "t_d", "N", "Status", "Verdict", "Viol max", "p50", "p95", "max", "Realtime", "Ratio"]
        body = [
            [
                row.name,
                f"{row.t_s:g}",
                f"{row.t_d:g}",
                str(row.N),
                row.status,
                row.verdict,
                _number(row.violation),
                format_ms(row.p50) if row.error is None else "-",
                format_ms(row.p95) if row.error is None else "-",
                format_ms(row.max) if row.error is None else "-",
                "yes" if row.realtime else "no",
                format_ratio(row.ratio),
            ]
            for row in rows
        ]
        widths = [max(len(cells[i]) for cells in [header, *body]) for i in range(len(header))]

        def line(cells: list[str]) -> str:
            return " | ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(cells, widths)))

        sep = "-+-".join("-" * w for w in widths)
        return "\n".join([line(header), sep, *[line(cells) for cells in body]])
