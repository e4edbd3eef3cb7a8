"""Sampled-data closed loop: fine-step plant, zero-order-hold MPC, disturbances.

Also holds the empirical estimators: the discretization-error gain L(t_d)
and the asymptotic-gain (ISS) curve.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Sequence

import numpy as np

from hmpc.dynamics import ContinuousModel, rk4_step
from hmpc.errors import (
    ConfigError,
    Diverged,
    InfeasibleProblem,
    IntegrationDiverged,
    MaxIterationsReached,
    NotNominallyStable,
)
from hmpc.ocp import DiscreteOcp, LinearOcpSolver, NonlinearOcpSolver, WarmStart, make_solver, shift_warm_start
from hmpc.qp import DEFAULT_MAX_ITER, SolveStatus
from hmpc.sets import Polyhedron

logger = logging.getLogger(__name__)

Array = np.ndarray
Scheme = Literal["MPC1", "HMPC", "MPC2", "custom"]
Policy = Callable[[Array], Array]

PLANT_SUBSTEPS_PER_SAMPLE = 20
DIVERGENCE_NORM = 1e6
TAIL_FRACTION = 0.25


def _is_multiple(a: float, b: float, rel: float = 1e-9) -> bool:
    ratio = a / b
    return abs(ratio - round(ratio)) <= rel * max(1.0, ratio)


@dataclass(frozen=True)
class DisturbanceSignal:
    """Additive input disturbance d(t), |d_i(t)| <= amplitude."""

    kind: Literal["zero", "constant", "random", "sinusoid"] = "zero"
    amplitude: float = 0.0
    hold_time: float = 0.5
    frequency: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "random", "sinusoid"):
            raise ValueError(f"Unknown disturbance kind '{self.kind}'")
        if self.amplitude < 0:
            raise ValueError("Disturbance amplitude must be non-negative")
        if self.kind == "random" and self.hold_time <= 0:
            raise ValueError("hold_time must be positive")

    @classmethod
    def zero(cls) -> DisturbanceSignal:
        return cls()

    @classmethod
    def piecewise_random(cls, amplitude: float, seed: int = 0, hold_time: float = 0.5) -> DisturbanceSignal:
        return cls(kind="random", amplitude=amplitude, hold_time=hold_time, seed=seed)

    def sample(self, times: Array, m: int) -> Array:
        """d(t) for each time, shape (len(times), m).

        Random realizations depend only on the seed and t, so runs at
        different sampling rates see the same signal.
        """
        times = np.asarray(times, dtype=float)
        if self.kind == "zero" or self.amplitude == 0.0:
            return np.zeros((times.size, m))
        if self.kind == "constant":
            return np.full((times.size, m), self.amplitude)
        if self.kind == "sinusoid":
            wave = self.amplitude * np.sin(2.0 * np.pi * self.frequency * times)
            return np.repeat(wave[:, None], m, axis=1)

        segment = np.floor(times / self.hold_time + 1e-9).astype(int)
        n_segments = int(segment.max(initial=0)) + 1
        rng = np.random.default_rng(self.seed)
        levels = rng.uniform(-self.amplitude, self.amplitude, size=(n_segments, m))
        return levels[segment]


@dataclass(frozen=True)
class SimConfig:
    """Timing of one closed-loop run."""

    t_s: float
    t_d: float
    t_sim: float
    T: float | None = None
    t_p: float | None = None
    disturbance: DisturbanceSignal = field(default_factory=DisturbanceSignal)
    scheme: Scheme = "custom"
    inject_delay: bool = False
    divergence_norm: float = DIVERGENCE_NORM

    def __post_init__(self):
        if self.t_p is None:
            object.__setattr__(self, "t_p", self.t_s / PLANT_SUBSTEPS_PER_SAMPLE)
        if min(self.t_s, self.t_d, self.t_sim, self.t_p) <= 0:
            raise ConfigError("All time constants must be positive")
        if not (self.t_p <= self.t_s <= self.t_sim):
            raise ConfigError(f"Need t_p <= t_s <= t_sim, got {self.t_p}, {self.t_s}, {self.t_sim}")
        if not _is_multiple(self.t_s, self.t_p):
            raise ConfigError(f"t_s={self.t_s} is not a multiple of t_p={self.t_p}")
        if self.T is not None and not _is_multiple(self.T, self.t_d):
            raise ConfigError(f"T={self.T} is not an integer multiple of t_d={self.t_d}")

        same = math.isclose(self.t_s, self.t_d, rel_tol=1e-9)
        if self.scheme in ("MPC1", "MPC2") and not same:
            raise ConfigError(f"{self.scheme} requires t_s == t_d")
        if self.scheme == "HMPC" and not self.t_s < self.t_d:
            raise ConfigError("HMPC requires t_s < t_d")

    @property
    def N(self) -> int | None:
        return None if self.T is None else int(round(self.T / self.t_d))

    @property
    def steps_per_sample(self) -> int:
        return int(round(self.t_s / self.t_p))

    @property
    def n_samples(self) -> int:
        return int(round(self.t_sim / self.t_s))

    @property
    def warm_shift(self) -> int:
        """Prediction stages elapsed per sample (0 when t_s is not a multiple of t_d)."""
        if self.t_s >= self.t_d and _is_multiple(self.t_s, self.t_d):
            return int(round(self.t_s / self.t_d))
        return 0


@dataclass
class ClosedLoopTrace:
    """Time series of one closed-loop run at the plant step t_p.

    inputs[i] and disturbances[i] act on [times[i], times[i+1]).
    """

    times: Array
    states: Array
    inputs: Array
    disturbances: Array
    sample_indices: Array
    solve_wall_times: Array
    solve_iterations: Array
    feasibility_events: list[tuple[float, str]] = field(default_factory=list)
    status: Literal["ok", "diverged"] = "ok"

    @property
    def sample_times(self) -> Array:
        return self.times[self.sample_indices]

    @property
    def norms(self) -> Array:
        return np.linalg.norm(self.states, axis=1)

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    def tail_limsup(self, fraction: float = TAIL_FRACTION) -> float:
        """max ||x|| over the final `fraction` of the run; inf if diverged."""
        if self.diverged:
            return math.inf
        t_end = self.times[-1]
        tail = self.times >= (1.0 - fraction) * t_end
        return float(np.max(self.norms[tail]))


def run_closed_loop(
    plant: ContinuousModel,
    ocp: DiscreteOcp | None,
    cfg: SimConfig,
    x0: Array,
    solver: LinearOcpSolver | NonlinearOcpSolver | None = None,
    policy: Policy | None = None,
    raise_on_divergence: bool = False,
    qp_tol: float = 1e-6,
) -> ClosedLoopTrace:
    """Simulate x' = f(x, u_k + d) with u_k = mu_0*(x(k t_s)) held for t_s.

    The plant is integrated by RK4 at t_p. Each sample solves the OCP
    warm-started from the previous solution. An infeasible OCP holds the
    previous input and records a feasibility event. If ||x|| exceeds
    cfg.divergence_norm or integration fails, the trace is truncated and
    marked diverged.

    Args:
        plant: Continuous-time plant
        ocp: Prediction problem (ignored when policy is given)
        cfg: Timing, disturbance, and scheme label
        x0: Initial state
        solver: Optional pre-built solver owning the OCP workspace
        policy: Optional state-feedback map used instead of the OCP
        raise_on_divergence: Raise Diverged (with the trace) instead of
            returning a diverged trace
        qp_tol: QP tolerance for a solver built here

    Returns:
        ClosedLoopTrace
    """
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    if policy is None:
        if ocp is None:
            raise ValueError("Either an OCP or a policy is required")
        solver = solver or make_solver(ocp, qp_tol=qp_tol)

    n, m = plant.n, plant.m
    steps = cfg.steps_per_sample
    n_samples = cfg.n_samples
    K = n_samples * steps
    t_p = cfg.t_p

    times = np.arange(K + 1) * t_p
    states = np.empty((K + 1, n))
    inputs = np.empty((K, m))
    disturbances = cfg.disturbance.sample(times[:-1], m)
    wall_times = np.zeros(n_samples)
    iterations = np.zeros(n_samples, dtype=int)
    events: list[tuple[float, str]] = []

    states[0] = x0
    u_hold = np.zeros(m)
    warm: WarmStart | None = None
    last = K
    status = "ok"

    for k in range(n_samples):
        i0 = k * steps
        x_k = states[i0]
        t_k = times[i0]

        started = time.perf_counter()
        u_new = u_hold
        if policy is not None:
            u_new = np.asarray(policy(x_k), dtype=float).reshape(m)
        else:
            try:
                sol = solver.solve(x_k, warm)
                u_new = sol.mu[0].copy()
                iterations[k] = sol.iterations
                warm = shift_warm_start(sol, stages=cfg.warm_shift, ocp=solver.ocp)
                if sol.status is SolveStatus.MAX_ITER:
                    events.append((t_k, "max_iter"))
            except InfeasibleProblem:
                logger.warning("OCP infeasible at t=%.3f; holding previous input", t_k)
                events.append((t_k, "infeasible"))
                warm = None
            except IntegrationDiverged:
                logger.warning("Prediction diverged at t=%.3f; holding previous input", t_k)
                events.append((t_k, "prediction_diverged"))
                warm = None
        wall_times[k] = time.perf_counter() - started

        delay_ticks = math.ceil(wall_times[k] / t_p) if cfg.inject_delay else 0

        for j in range(steps):
            i = i0 + j
            u = u_hold if j < delay_ticks else u_new
            inputs[i] = u
            try:
                states[i + 1] = rk4_step(plant, states[i], u + disturbances[i], t_p)
            except IntegrationDiverged:
                status, last = "diverged", i
                break
            if np.linalg.norm(states[i + 1]) > cfg.divergence_norm:
                status, last = "diverged", i + 1
                break
        u_hold = u_new

        if status == "diverged":
            logger.warning("Closed loop diverged at t=%.3f", times[last])
            n_samples = k + 1
            break

    trace = ClosedLoopTrace(
        times=times[: last + 1],
        states=states[: last + 1],
        inputs=inputs[:last],
        disturbances=disturbances[:last],
        sample_indices=np.arange(n_samples) * steps,
        solve_wall_times=wall_times[:n_samples],
        solve_iterations=iterations[:n_samples],
        feasibility_events=events,
        status=status,
    )
    if trace.diverged and raise_on_divergence:
        raise Diverged(f"Closed loop diverged at t={trace.times[-1]:.3f}", trace)
    return trace


def run_dt_mpc(
    plant: ContinuousModel,
    ocp: DiscreteOcp,
    t_sim: float,
    x0: Array,
    disturbance: DisturbanceSignal | None = None,
    plant_substeps: int = PLANT_SUBSTEPS_PER_SAMPLE,
    qp_tol: float = 1e-6,
) -> ClosedLoopTrace:
    """Classical discrete-time MPC: sample every t_d, apply mu_0*, shift by one stage.

    The plant is integrated as in run_closed_loop (RK4 at t_d / plant_substeps)
    and an infeasible OCP holds the previous input, so the hybrid loop with
    t_s = t_d must reproduce this trace exactly.

    Raises:
        IntegrationDiverged: If the plant integration fails.
    """
    disturbance = disturbance or DisturbanceSignal.zero()
    solver = make_solver(ocp, qp_tol=qp_tol)
    t_p = ocp.t_d / plant_substeps
    n_samples = int(round(t_sim / ocp.t_d))
    times = np.arange(n_samples * plant_substeps + 1) * t_p
    d = disturbance.sample(times[:-1], plant.m)

    x = np.asarray(x0, dtype=float)
    u = np.zeros(plant.m)
    states, inputs = [x], []
    wall_times, iterations = [], []
    events: list[tuple[float, str]] = []
    warm: WarmStart | None = None

    for k in range(n_samples):
        t_k = times[k * plant_substeps]
        started = time.perf_counter()
        try:
            sol = solver.solve(x, warm)
            u = sol.mu[0].copy()
            iterations.append(sol.iterations)
            warm = shift_warm_start(sol, stages=1, ocp=ocp)
            if sol.status is SolveStatus.MAX_ITER:
                events.append((t_k, "max_iter"))
        except InfeasibleProblem:
            events.append((t_k, "infeasible"))
            iterations.append(0)
            warm = None
        wall_times.append(time.perf_counter() - started)

        for j in range(plant_substeps):
            x = rk4_step(plant, x, u + d[k * plant_substeps + j], t_p)
            states.append(x)
            inputs.append(u)

    return ClosedLoopTrace(
        times=times,
        states=np.array(states),
        inputs=np.array(inputs).reshape(-1, plant.m),
        disturbances=d,
        sample_indices=np.arange(n_samples) * plant_substeps,
        solve_wall_times=np.array(wall_times),
        solve_iterations=np.array(iterations, dtype=int),
        feasibility_events=events,
    )


def _percentile(values: Array, q: float) -> float:
    return float(np.percentile(values, q)) if len(values) else 0.0


def trace_summary(
    trace: ClosedLoopTrace,
    x_set: Polyhedron,
    u_set: Polyhedron,
    t_s: float,
    converge_tol: float = 1e-2,
    tail_fraction: float = TAIL_FRACTION,
) -> dict:
    """Scalar outcomes of one run (convergence, violations, timing)."""
    states = trace.states
    lower, upper = x_set.axis_bounds()
    above = np.max(states, axis=0) - upper
    below = lower - np.min(states, axis=0)
    overshoot = [float(v) for v in np.maximum(0.0, np.maximum(above, below))]

    x_violation = float(np.max([x_set.violation(x) for x in states], initial=0.0))
    u_violation = float(np.max([u_set.violation(u) for u in trace.inputs], initial=0.0))
    wall = trace.solve_wall_times
    p95 = _percentile(wall, 95)
    final_norm = float(trace.norms[-1])

    return {
        "status": trace.status,
        "converged": (not trace.diverged) and final_norm <= converge_tol,
        "final_norm": final_norm,
        "tail_limsup": trace.tail_limsup(tail_fraction),
        "state_violation_max": x_violation,
        "input_violation_max": u_violation,
        "constraint_violation_max": max(x_violation, u_violation),
        "overshoot": overshoot,
        "solve_time_p50": _percentile(wall, 50),
        "solve_time_p95": p95,
        "solve_time_max": float(np.max(wall, initial=0.0)),
        "solve_iterations_mean": float(np.mean(trace.solve_iterations)) if len(wall) else 0.0,
        "realtime_feasible": p95 <= t_s,
        "feasibility_events": len(trace.feasibility_events),
        "n_samples": int(len(wall)),
    }


def _optimal_u0(solver: LinearOcpSolver | NonlinearOcpSolver, x: Array) -> Array:
    sol = solver.solve(x)
    if sol.status is not SolveStatus.OPTIMAL:
        raise MaxIterationsReached(f"OCP at t_d={solver.ocp.t_d} stopped at the iteration cap for x={x}")
    return sol.mu[0]


def estimate_L(
    ocp_family: Callable[[float], DiscreteOcp],
    states: Sequence[Array],
    t_d_grid: Sequence[float],
    t_d_ref: float,
    tol: float = 1e-9,
    max_iter: int = DEFAULT_MAX_ITER,
) -> list[tuple[float, float]]:
    """Empirical discretization-error gain L(t_d) = max ||Delta mu|| / ||x||.

    Delta mu(x; t_d) = mu_0*(x; t_d) - mu_0*(x; t_d_ref), where the fine
    reference problem stands in for the continuous-time one. States with
    ||x|| < 1e-9 are skipped.

    Raises:
        ValueError: If t_d_ref exceeds a queried t_d.
        MaxIterationsReached: If a solve stops short of optimality, which
            would leave solver error in the estimate.
    """
    if any(t_d < t_d_ref for t_d in t_d_grid):
        raise ValueError("t_d_ref must not exceed any queried t_d")
    points = [np.asarray(x, dtype=float) for x in states if np.linalg.norm(x) >= 1e-9]

    ref_solver = make_solver(ocp_family(t_d_ref), qp_tol=tol, qp_max_iter=max_iter)
    reference = [_optimal_u0(ref_solver, x) for x in points]

    curve = []
    for t_d in t_d_grid:
        if math.isclose(t_d, t_d_ref):
            curve.append((t_d, 0.0))
            continue
        solver = make_solver(ocp_family(t_d), qp_tol=tol, qp_max_iter=max_iter)
        ratios = [np.linalg.norm(_optimal_u0(solver, x) - ref) / np.linalg.norm(x) for x, ref in zip(points, reference)]
        L_hat = float(max(ratios, default=0.0))
        logger.info("L(%.4g) ~ %.4g over %d states", t_d, L_hat, len(points))
        curve.append((t_d, L_hat))
    return curve


@dataclass
class IssReport:
    """Measured asymptotic gains: disturbance bound -> tail limsup ||x||."""

    pairs: list[tuple[float, float]]
    decay_rate: float
    decay_prefactor: float
    seeds: list[int] = field(default_factory=list)

    def gain_bound(self) -> float:
        """max limsup / Delta over Delta > 0."""
        ratios = [value / delta for delta, value in self.pairs if delta > 0]
        return max(ratios, default=0.0)

    def is_monotone(self, slack: float = 1e-3) -> bool:
        values = [value for _, value in sorted(self.pairs)]
        return all(b + slack >= a for a, b in zip(values, values[1:]))

    def small_gain_holds(self, L: float) -> bool:
        """L * gain_bound() < 1 for a discretization-error gain L."""
        return L * self.gain_bound() < 1.0


def fit_decay(trace: ClosedLoopTrace, floor: float = 1e-9) -> tuple[float, float]:
    """(rate, prefactor) with ||x(t)|| <= prefactor * exp(-rate t) on the trace."""
    norms = trace.norms
    keep = norms > floor
    if np.count_nonzero(keep) < 2:
        return 0.0, float(norms[0])
    t = trace.times[keep]
    slope, _ = np.polyfit(t, np.log(norms[keep]), 1)
    rate = float(-slope)
    prefactor = float(np.max(norms[keep] * np.exp(rate * t)))
    return rate, prefactor


def measure_iss(
    plant: ContinuousModel,
    ocp: DiscreteOcp,
    cfg_base: SimConfig,
    x0: Array,
    bounds: Sequence[float],
    seeds: Sequence[int],
    hold_time: float = 0.5,
    nominal_tol: float = 1e-3,
    workers: int = 1,
    qp_tol: float = 1e-6,
) -> IssReport:
    """Asymptotic-gain curve over disturbance bounds and seeds.

    Raises:
        NotNominallyStable: If the zero-disturbance run does not settle
            below nominal_tol.
        ConfigError: If the tail window is shorter than 10 t_d.
    """
    if TAIL_FRACTION * cfg_base.t_sim < 10.0 * cfg_base.t_d:
        raise ConfigError("Tail window must cover at least 10 t_d; increase t_sim")

    nominal = run_closed_loop(plant, ocp, replace(cfg_base, disturbance=DisturbanceSignal.zero()), x0, qp_tol=qp_tol)
    nominal_limsup = nominal.tail_limsup()
    if not nominal_limsup <= nominal_tol:
        raise NotNominallyStable(f"Zero-disturbance tail limsup {nominal_limsup:.3g} > {nominal_tol}")
    rate, prefactor = fit_decay(nominal)

    def worst_case(delta: float) -> float:
        values = []
        for seed in seeds:
            cfg = replace(cfg_base, disturbance=DisturbanceSignal.piecewise_random(delta, seed, hold_time))
            values.append(run_closed_loop(plant, ocp, cfg, x0, qp_tol=qp_tol).tail_limsup())
        return max(values)

    positive = [delta for delta in bounds if delta > 0]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        measured = dict(zip(positive, pool.map(worst_case, positive)))

    pairs = [(float(delta), nominal_limsup if delta <= 0 else measured[delta]) for delta in bounds]
    for delta, value in pairs:
        logger.info("ISS: Delta=%.3g -> limsup ||x|| = %.4g", delta, value)
    return IssReport(pairs=pairs, decay_rate=rate, decay_prefactor=prefactor, seeds=list(seeds))
