"""Experiment runner: config -> plant, terminal ingredients, OCPs, closed loops."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
from pydantic import ValidationError

from hmpc.config import (
    CustomModelParams,
    DisturbanceConfig,
    DoubleIntegratorParams,
    ExperimentConfig,
    GainStudyConfig,
    SchemeConfig,
    SolverConfig,
)
from hmpc.dynamics import ContinuousModel, discretize
from hmpc.errors import ConfigError, MaxIterationsReached, NotNominallyStable
from hmpc.models import DoubleIntegratorSpec, LaneChangeSpec, double_integrator, lane_change
from hmpc.ocp import DiscreteOcp, StageCost
from hmpc.sets import Polyhedron
from hmpc.simulator import (
    ClosedLoopTrace,
    DisturbanceSignal,
    IssReport,
    SimConfig,
    estimate_L,
    fit_decay,
    measure_iss,
    run_closed_loop,
    trace_summary,
)
from hmpc.terminal import TerminalIngredients, build_terminal_ingredients

logger = logging.getLogger(__name__)

Array = np.ndarray
ModelBuilder = Callable[[dict], ContinuousModel]


@dataclass(frozen=True)
class Problem:
    """Plant, cost, and constraint sets shared by every scheme of an experiment."""

    plant: ContinuousModel
    cost: StageCost
    x_set: Polyhedron
    u_set: Polyhedron
    x0: Array


@dataclass
class SchemeResult:
    """Outcome of one scheme; error is set when the scheme crashed."""

    scheme: SchemeConfig
    N: int
    trace: ClosedLoopTrace | None = None
    summary: dict[str, Any] | None = None
    error: str | None = None

    @property
    def name(self) -> str:
        return self.scheme.name

    @property
    def crashed(self) -> bool:
        return self.error is not None


@dataclass
class ExperimentResult:
    """Scheme results plus the optional ISS and L(t_d) studies.

    A study that could not be completed leaves its result unset and its
    reason in study_errors.
    """

    config: ExperimentConfig
    results: dict[str, SchemeResult] = field(default_factory=dict)
    iss: IssReport | None = None
    gain_curve: list[tuple[float, float]] | None = None
    study_errors: dict[str, str] = field(default_factory=dict)

    @property
    def any_crashed(self) -> bool:
        return any(result.crashed for result in self.results.values())


def _bounds(values: Sequence[float | None], sign: float) -> list[float]:
    return [sign * np.inf if v is None else float(v) for v in values]


def build_problem(config: ExperimentConfig, custom_builder: ModelBuilder | None = None) -> Problem:
    """Instantiate the plant and its sets from the experiment params.

    Raises:
        ConfigError: If a custom model is requested without a builder or
            its dimensions disagree with the configured bounds.
    """
    params = config.model_params()

    if isinstance(params, DoubleIntegratorParams):
        spec = DoubleIntegratorSpec(**params.model_dump(), T=config.horizon)
        return Problem(double_integrator(), spec.cost(), spec.x_set(), spec.u_set(), spec.initial_state())

    if isinstance(params, CustomModelParams):
        if custom_builder is None:
            raise ConfigError("custom-model-path experiment needs a model builder")
        plant = custom_builder(params.model)
        if plant.n != len(params.x0) or plant.m != len(params.u_lower):
            raise ConfigError(f"Model has n={plant.n}, m={plant.m}; config bounds disagree")
        x_set = Polyhedron.box(_bounds(params.x_lower, -1.0), _bounds(params.x_upper, 1.0))
        u_set = Polyhedron.box(params.u_lower, params.u_upper)
        cost = StageCost(np.diag(params.Q), np.diag(params.R))
        return Problem(plant, cost, x_set, u_set, np.array(params.x0, dtype=float))

    spec = LaneChangeSpec(**params.model_dump(), T=config.horizon)
    return Problem(lane_change(spec), spec.cost(), spec.x_set(), spec.u_set(), spec.initial_state())


def build_terminal(problem: Problem, solver: SolverConfig) -> TerminalIngredients:
    """CARE cost and LQR law; O_inf only when the OCP uses a terminal set."""
    ti = build_terminal_ingredients(
        problem.plant,
        problem.cost,
        problem.x_set,
        problem.u_set,
        t_d_omega=solver.terminal_t_d,
        with_set=solver.terminal_set,
    )
    logger.info("Terminal ingredients ready (terminal set: %s)", ti.omega is not None)
    return ti


def build_ocp(problem: Problem, terminal: TerminalIngredients, t_d: float, horizon: float, solver: SolverConfig) -> DiscreteOcp:
    model_d = discretize(problem.plant, t_d, solver.discretization, solver.substeps_for(t_d))
    return DiscreteOcp(
        model_d=model_d,
        cost=problem.cost,
        P=terminal.P,
        N=int(round(horizon / t_d)),
        x_set=problem.x_set,
        u_set=problem.u_set,
        terminal_set=terminal.omega if solver.terminal_set else None,
        state_stages=solver.state_constraint_stages,
    )


def build_sim_config(config: ExperimentConfig, scheme: SchemeConfig) -> SimConfig:
    return SimConfig(
        t_s=scheme.t_s,
        t_d=scheme.t_d,
        t_sim=config.t_sim,
        T=config.horizon,
        disturbance=DisturbanceSignal(**config.disturbance.model_dump()),
        scheme=scheme.label,
        inject_delay=config.inject_delay,
    )


def _seed_row(seed: int, trace: ClosedLoopTrace, problem: Problem, t_s: float) -> dict[str, Any]:
    s = trace_summary(trace, problem.x_set, problem.u_set, t_s)
    return {
        "seed": seed,
        "status": s["status"],
        "converged": s["converged"],
        "tail_limsup": s["tail_limsup"],
        "overshoot": s["overshoot"],
    }


def _is_seeded(disturbance: DisturbanceConfig) -> bool:
    return disturbance.kind == "random" and disturbance.amplitude > 0


def run_scheme(
    config: ExperimentConfig,
    problem: Problem,
    terminal: TerminalIngredients,
    scheme: SchemeConfig,
) -> SchemeResult:
    """Build the scheme's OCP and simulate it. Divergence is an outcome, not an error.

    The trace is the run at disturbance.seed. For a random disturbance every
    other entry of config.seeds is simulated too and reported under "seeds"
    in the summary, together with the worst tail limsup over all of them.
    """
    N = int(round(config.horizon / scheme.t_d))
    logger.info("Running %s (t_s=%g, t_d=%g, N=%d)", scheme.name, scheme.t_s, scheme.t_d, N)

    ocp = build_ocp(problem, terminal, scheme.t_d, config.horizon, config.solver)
    cfg = build_sim_config(config, scheme)
    trace = run_closed_loop(problem.plant, ocp, cfg, problem.x0, qp_tol=config.solver.qp_tol)

    seed_rows = [_seed_row(config.disturbance.seed, trace, problem, scheme.t_s)]
    if _is_seeded(config.disturbance):
        for seed in config.seeds:
            if seed == config.disturbance.seed:
                continue
            seeded = replace(cfg, disturbance=replace(cfg.disturbance, seed=seed))
            other = run_closed_loop(problem.plant, ocp, seeded, problem.x0, qp_tol=config.solver.qp_tol)
            seed_rows.append(_seed_row(seed, other, problem, scheme.t_s))
            logger.debug("%s seed %d: tail limsup %.4g", scheme.name, seed, seed_rows[-1]["tail_limsup"])

    summary = trace_summary(trace, problem.x_set, problem.u_set, scheme.t_s)
    rate, prefactor = fit_decay(trace)
    summary.update(
        {
            "scheme": scheme.name,
            "label": scheme.label,
            "t_s": scheme.t_s,
            "t_d": scheme.t_d,
            "N": N,
            "decay_rate": rate,
            "decay_prefactor": prefactor,
            "events": [{"t": t, "event": event} for t, event in trace.feasibility_events],
            "seeds": seed_rows,
            "tail_limsup_worst": max(row["tail_limsup"] for row in seed_rows),
        }
    )
    logger.info("%s finished: status=%s, final ||x||=%.3g", scheme.name, trace.status, summary["final_norm"])
    return SchemeResult(scheme=scheme, N=N, trace=trace, summary=summary)


def _guarded(config: ExperimentConfig, problem: Problem, terminal: TerminalIngredients, scheme: SchemeConfig) -> SchemeResult:
    try:
        return run_scheme(config, problem, terminal, scheme)
    except Exception as exc:
        logger.exception("Scheme %s crashed", scheme.name)
        return SchemeResult(scheme=scheme, N=int(round(config.horizon / scheme.t_d)), error=f"{type(exc).__name__}: {exc}")


def _run_schemes(
    config: ExperimentConfig,
    problem: Problem,
    terminal: TerminalIngredients,
    schemes: Sequence[SchemeConfig],
    workers: int,
) -> list[SchemeResult]:
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(lambda scheme: _guarded(config, problem, terminal, scheme), schemes))


def run_iss_study(config: ExperimentConfig, problem: Problem, terminal: TerminalIngredients, workers: int = 1) -> IssReport:
    """Tail limsup of the study scheme for each disturbance bound, worst over config.seeds.

    Raises:
        NotNominallyStable: If the undisturbed run does not settle.
        ConfigError: If the tail window is too short for the scheme's t_d.
    """
    study = config.iss
    scheme = next(s for s in config.schemes if s.name == study.scheme)
    ocp = build_ocp(problem, terminal, scheme.t_d, config.horizon, config.solver)
    return measure_iss(
        problem.plant,
        ocp,
        build_sim_config(config, scheme),
        problem.x0,
        study.bounds,
        config.seeds,
        hold_time=study.hold_time,
        nominal_tol=study.nominal_tol,
        workers=workers,
        qp_tol=config.solver.qp_tol,
    )


def gain_study_states(study: GainStudyConfig, x_set: Polyhedron) -> list[Array]:
    """Uniform random states for the L(t_d) estimate.

    Raises:
        ConfigError: If the state set is unbounded along some axis and no
            half_widths are given, or half_widths has the wrong length.
    """
    if study.half_widths is not None:
        if len(study.half_widths) != x_set.dim:
            raise ConfigError(f"Gain study half_widths has {len(study.half_widths)} entries, the state has {x_set.dim}")
        upper = np.asarray(study.half_widths, dtype=float)
        lower = -upper
    else:
        lower, upper = x_set.axis_bounds()
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ConfigError("Gain study needs half_widths when the state set is unbounded")
        lower, upper = study.state_scale * lower, study.state_scale * upper
    rng = np.random.default_rng(study.seed)
    return [rng.uniform(lower, upper) for _ in range(study.n_states)]


def run_gain_study(config: ExperimentConfig, problem: Problem, terminal: TerminalIngredients) -> list[tuple[float, float]]:
    """(t_d, L(t_d)) over the study grid.

    Raises:
        MaxIterationsReached: If a solve stops short of optimality.
        ConfigError: If the states cannot be sampled.
    """
    study = config.gain

    def family(t_d: float) -> DiscreteOcp:
        return build_ocp(problem, terminal, t_d, config.horizon, config.solver)

    states = gain_study_states(study, problem.x_set)
    return estimate_L(family, states, study.t_d_grid, study.t_d_ref, tol=study.qp_tol, max_iter=config.solver.qp_max_iter)


def _limsup_table(report: IssReport) -> list[dict[str, float]]:
    return [{"bound": bound, "tail_limsup": value} for bound, value in report.pairs]


def run_experiment(
    config: ExperimentConfig,
    workers: int = 1,
    custom_builder: ModelBuilder | None = None,
) -> ExperimentResult:
    """Run every scheme of the config, then the ISS and L(t_d) studies it enables.

    Schemes may run concurrently. An undisturbed run that does not settle,
    or a gain estimate cut short by the iteration cap, is recorded in
    study_errors rather than raised.
    """
    problem = build_problem(config, custom_builder)
    terminal = build_terminal(problem, config.solver)
    results = _run_schemes(config, problem, terminal, config.schemes, workers)
    experiment = ExperimentResult(config=config, results={result.name: result for result in results})

    if config.iss is not None:
        try:
            experiment.iss = run_iss_study(config, problem, terminal, workers)
        except NotNominallyStable as exc:
            logger.warning("ISS study skipped: %s", exc)
            experiment.study_errors["iss"] = f"{type(exc).__name__}: {exc}"
        else:
            target = experiment.results[config.iss.scheme]
            if not target.crashed:
                target.summary["limsup_table"] = _limsup_table(experiment.iss)
                target.summary["iss_gain_bound"] = experiment.iss.gain_bound()

    if config.gain is not None:
        try:
            experiment.gain_curve = run_gain_study(config, problem, terminal)
        except MaxIterationsReached as exc:
            logger.warning("L(t_d) study stopped: %s", exc)
            experiment.study_errors["L_curve"] = f"{type(exc).__name__}: {exc}"
    return experiment


def comparison(experiment: ExperimentResult) -> dict[str, Any]:
    """Per-scheme verdicts, solve-time ratios, studies, and the resolved config."""
    schemes: dict[str, Any] = {}
    medians: dict[str, float] = {}
    for name, result in experiment.results.items():
        if result.crashed:
            schemes[name] = {"crashed": True, "error": result.error}
            continue
        s = result.summary
        schemes[name] = {
            "crashed": False,
            "status": s["status"],
            "converged": s["converged"],
            "constraint_violation_max": s["constraint_violation_max"],
            "solve_time_p50": s["solve_time_p50"],
            "solve_time_p95": s["solve_time_p95"],
            "solve_time_max": s["solve_time_max"],
            "realtime_feasible": s["realtime_feasible"],
            "tail_limsup": s["tail_limsup"],
            "tail_limsup_worst": s["tail_limsup_worst"],
            "feasibility_events": s["feasibility_events"],
        }
        medians[name] = s["solve_time_p50"]

    fastest = min((v for v in medians.values() if v > 0), default=None)
    ts_ratio = {name: (value / fastest if fastest else None) for name, value in medians.items()}
    document: dict[str, Any] = {
        "schemes": schemes,
        "ts_ratio": ts_ratio,
        "realtime_criterion": "p95 solve time <= t_s",
    }
    if experiment.iss is not None:
        document["iss"] = {
            "scheme": experiment.config.iss.scheme,
            "limsup_table": _limsup_table(experiment.iss),
            "gain_bound": experiment.iss.gain_bound(),
            "decay_rate": experiment.iss.decay_rate,
            "decay_prefactor": experiment.iss.decay_prefactor,
            "seeds": experiment.iss.seeds,
        }
    if experiment.gain_curve is not None:
        document["L_curve"] = [{"t_d": t_d, "L": L} for t_d, L in experiment.gain_curve]
    if experiment.study_errors:
        document["study_errors"] = dict(experiment.study_errors)
    document["config"] = experiment.config.resolved()
    return document


def sweep(
    config: ExperimentConfig,
    t_d_grid: Sequence[float],
    t_s_grid: Sequence[float],
    workers: int = 1,
    custom_builder: ModelBuilder | None = None,
) -> list[SchemeResult]:
    """Run the config's plant over every (t_d, t_s) pair of the grid.

    Each point is simulated for every seed of the config, as in a run; the
    ISS and L(t_d) studies are not repeated per point.

    Raises:
        ConfigError: If a grid point violates t_s <= t_d or the horizon
            is not a multiple of t_d.
    """
    schemes = []
    for t_d in t_d_grid:
        for t_s in t_s_grid:
            try:
                schemes.append(SchemeConfig(name=f"ts{t_s:g}_td{t_d:g}", t_s=t_s, t_d=t_d))
            except ValidationError as exc:
                raise ConfigError(str(exc)) from exc
    try:
        grid_config = ExperimentConfig.model_validate(
            {**config.model_dump(), "schemes": [s.model_dump() for s in schemes], "iss": None, "gain": None}
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    problem = build_problem(grid_config, custom_builder)
    terminal = build_terminal(problem, grid_config.solver)
    return _run_schemes(grid_config, problem, terminal, grid_config.schemes, workers)


def sweep_row(result: SchemeResult) -> dict[str, Any]:
    row = {"t_s": result.scheme.t_s, "t_d": result.scheme.t_d, "N": result.N}
    if result.crashed:
        return {
            **row,
            "converged": False,
            "tail_limsup": None,
            "tail_limsup_worst": None,
            "solve_time_p95": None,
            "realtime_feasible": False,
            "error": result.error,
        }
    s = result.summary
    return {
        **row,
        "converged": s["converged"],
        "tail_limsup": s["tail_limsup"],
        "tail_limsup_worst": s["tail_limsup_worst"],
        "solve_time_p95": s["solve_time_p95"],
        "realtime_feasible": s["realtime_feasible"],
        "error": "",
    }
