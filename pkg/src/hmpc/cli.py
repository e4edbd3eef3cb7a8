"""Command-line interface for the hybrid-sampling MPC experiments."""

from __future__ import annotations

import argparse
import importlib.util
import logging
import sys
from importlib import resources
from pathlib import Path

from hmpc import __version__
from hmpc.config import ExperimentConfig, parse_config
from hmpc.errors import ConfigError, HmpcError
from hmpc.experiments import ModelBuilder, comparison, run_experiment, sweep, sweep_row
from hmpc.formatters import RenderOptions, RunReport, get_formatter
from hmpc.formatters.csv_fmt import gain_curve_to_csv, iss_to_csv, sweep_to_csv, trace_to_csv
from hmpc.formatters.json_fmt import dumps
from hmpc.utils import parse_grid

logger = logging.getLogger("hmpc")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CRASH = 2


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="Config path, comparison.json of a run, or bundled name (double_integrator, lane_change)")
    common.add_argument("--out", type=str, default=None, help="Output directory (overrides the config)")
    common.add_argument("--workers", type=int, default=1, help="Schemes simulated concurrently (default: 1)")
    common.add_argument("--seed", type=int, default=None, help="Disturbance seed (replaces the config seeds)")
    common.add_argument("--validate-only", action="store_true", help="Parse and check the config, run nothing")
    common.add_argument(
        "-o",
        "--output",
        type=str,
        default="rich",
        choices=["rich", "plain", "json", "csv"],
        help="Terminal output format (default: rich)",
    )
    common.add_argument("--no-chart", action="store_true", help="Suppress the ||x(t)|| sparklines")
    common.add_argument("-q", "--quiet", action="store_true", help="Print only the pass/fail line per scheme")
    common.add_argument("-v", "--verbose", action="count", default=0, help="More logging (-v info, -vv debug)")

    parser = argparse.ArgumentParser(
        prog="hmpc",
        description="Simulate and compare sampled-data MPC schemes with decoupled sampling and discretization times.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  hmpc run double_integrator                      # MPC1, HMPC and MPC2 on the double integrator
  hmpc run lane_change --workers 3 --out results  # Lane change, schemes in parallel
  hmpc run my_experiment.json --validate-only     # Check a config
  hmpc run results/comparison.json --out replay   # Replay the config of an earlier run
  hmpc sweep double_integrator --td 0.4,0.2,0.1 --ts 0.02
        """,
    )
    parser.add_argument("-V", "--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("run", parents=[common], help="Run every scheme of a config")

    sweep_parser = sub.add_parser("sweep", parents=[common], help="Run a t_d x t_s grid")
    sweep_parser.add_argument("--td", type=parse_grid, required=True, help="Comma-separated t_d values (s)")
    sweep_parser.add_argument("--ts", type=parse_grid, required=True, help="Comma-separated t_s values (s)")

    return parser


def setup_logging(verbosity: int) -> None:
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(verbosity, 2)]
    try:
        from rich.console import Console
        from rich.logging import RichHandler

        handler: logging.Handler = RichHandler(console=Console(stderr=True), show_path=False)
        logging.basicConfig(level=level, format="%(message)s", handlers=[handler], force=True)
    except ImportError:
        logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)


def read_config(source: str) -> tuple[ExperimentConfig, Path | None]:
    """Load a config from a path, or a bundled config by name.

    Returns:
        The config and the directory relative paths inside it resolve against
    """
    path = Path(source)
    if path.is_file():
        try:
            return parse_config(path.read_text(encoding="utf-8")), path.parent
        except OSError as e:
            raise ConfigError(f"Cannot read {path}: {e}") from e

    name = source if source.endswith(".json") else f"{source}.json"
    bundled = resources.files("hmpc.configs").joinpath(name)
    if bundled.is_file():
        return parse_config(bundled.read_text(encoding="utf-8")), None
    raise ConfigError(f"No config file or bundled config named '{source}'")


def load_model_builder(model_path: str, base: Path | None) -> ModelBuilder:
    """Import build_model(params) from a Python file."""
    path = Path(model_path)
    if not path.is_absolute() and base is not None:
        path = base / path
    if not path.is_file():
        raise ConfigError(f"model_path '{path}' does not exist")

    spec = importlib.util.spec_from_file_location(f"hmpc_user_model_{path.stem}", path)
    module = importlib.util.module_from_spec(spec)
    try:
        spec.loader.exec_module(module)
    except Exception as e:
        raise ConfigError(f"Cannot import {path}: {e}") from e
    builder = getattr(module, "build_model", None)
    if not callable(builder):
        raise ConfigError(f"{path} does not define build_model(params)")
    return builder


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")
    logger.info("Wrote %s", path)


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    parser = create_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    if args.workers < 1:
        print("Error: --workers must be >= 1.", file=sys.stderr)
        return EXIT_CONFIG

    try:
        config, base = read_config(args.config)
        config = config.with_overrides(seed=args.seed, output_dir=args.out)
        builder = None
        if config.experiment == "custom-model-path":
            builder = load_model_builder(config.model_path, base)
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    if args.validate_only:
        print(f"Config OK: {config.experiment}, {len(config.schemes)} scheme(s)")
        return EXIT_OK

    try:
        formatter = get_formatter(args.output)
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(config.output_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"Error: cannot create output directory {out_dir}: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "run":
            experiment = run_experiment(config, workers=args.workers, custom_builder=builder)
            results = list(experiment.results.values())
            for result in results:
                if result.crashed:
                    continue
                _write(out_dir / f"{result.name}.trace.csv", trace_to_csv(result.trace))
                _write(out_dir / f"{result.name}.summary.json", dumps(result.summary))
            if experiment.iss is not None:
                _write(out_dir / "iss.csv", iss_to_csv(experiment.iss.pairs))
            if experiment.gain_curve is not None:
                _write(out_dir / "L_curve.csv", gain_curve_to_csv(experiment.gain_curve))
            _write(out_dir / "comparison.json", dumps(comparison(experiment)))
            title = f"{config.experiment.upper()} COMPARISON"
        else:
            results = sweep(config, args.td, args.ts, workers=args.workers, custom_builder=builder)
            _write(out_dir / "sweep.csv", sweep_to_csv([sweep_row(result) for result in results]))
            title = f"{config.experiment.upper()} SWEEP"
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (HmpcError, OSError) as e:
        print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CRASH
    except Exception as e:
        logger.debug("Experiment setup crashed", exc_info=True)
        print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CRASH

    options = RenderOptions(show_chart=not args.no_chart, quiet=args.quiet)
    print(formatter.render(RunReport.from_results(title, results), options))

    if any(result.crashed for result in results):
        print("Error: one or more schemes crashed.", file=sys.stderr)
        return EXIT_CRASH
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
