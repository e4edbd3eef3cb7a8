"""Rich library formatter for terminal output."""

from hmpc.charts import spark_chart
from hmpc.formatters import RenderOptions, RunReport
from hmpc.formatters.plain_fmt import _number
from hmpc.utils import format_ms, format_ratio

try:
    from rich.console import Console
    from rich.panel import Panel
    from rich.table import Table

    RICH_AVAILABLE = True
except ImportError:
    RICH_AVAILABLE = False

VERDICT_STYLE = {"PASS": "bold green", "FAIL": "bold yellow", "CRASH": "bold red"}


class RichFormatter:
    """Formatter using the rich library."""

    def __init__(self):
        if not RICH_AVAILABLE:
            # Fallback to plain formatter if rich is not installed
            from hmpc.formatters.plain_fmt import PlainFormatter

            self._fallback = PlainFormatter()
        else:
            self._fallback = None

    def render(self, report: RunReport, options: RenderOptions) -> str:
        """Render the scheme comparison with rich formatting."""
        if self._fallback:
            return self._fallback.render(report, options)

        if options.quiet:
            return report.quiet_lines()

        from io import StringIO

        string_buffer = StringIO()
        console = Console(file=string_buffer, force_terminal=True, width=140)

        console.print(
            Panel(
                f"[bold]{len(report.rows)}[/] scheme(s) [dim]realtime = p95 solve time <= t_s[/]",
                title=f"[bold]{report.title}[/]",
                border_style="blue",
            )
        )
        console.print(self._render_table(report, options))

        for row in report.rows:
            if row.error:
                console.print(f"[red]{row.name}[/]: {row.error}")

        return string_buffer.getvalue()

    def _render_table(self, report: RunReport, options: RenderOptions) -> "Table":
        table = Table(border_style="dim")
        table.add_column("Scheme", style="bold")
        table.add_column("t_s", justify="right")
        table.add_column("t_d", justify="right")
        table.add_column("N", justify="right", style="dim")
        table.add_column("Verdict")
        table.add_column("Viol max", justify="right")
        table.add_column("p50", justify="right", style="cyan")
        table.add_column("p95", justify="right", style="cyan")
        table.add_column("max", justify="right", style="cyan")
        table.add_column("Realtime")
        table.add_column("Ratio", justify="right")
        if options.show_chart:
            table.add_column("||x(t)||", style="green")

        for row in report.rows:
            ok = row.error is None
            cells = [
                row.name,
                f"{row.t_s:g}",
                f"{row.t_d:g}",
                str(row.N),
                f"[{VERDICT_STYLE[row.verdict]}]{row.verdict}[/] [dim]{row.status}[/]",
                _number(row.violation),
                format_ms(row.p50) if ok else "-",
                format_ms(row.p95) if ok else "-",
                format_ms(row.max) if ok else "-",
                "[green]yes[/]" if row.realtime else "[red]no[/]",
                format_ratio(row.ratio),
            ]
            if options.show_chart:
                cells.append(spark_chart(row.norms, width=options.chart_width, log=True))
            table.add_row(*cells)
        return table
