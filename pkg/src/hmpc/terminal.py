"""Terminal ingredients: CARE cost, LQR terminal law, and the O_inf set."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from hmpc.dynamics import ContinuousModel, discretize_exact_lti, linearize, rk4_step
from hmpc.errors import NotDetermined, NotStabilizable, SingularR, UnboundedProblem, UnstableClosedLoop
from hmpc.ocp import StageCost
from hmpc.qp import solve_lp
from hmpc.sets import Polyhedron, hit_and_run

logger = logging.getLogger(__name__)

Array = np.ndarray

CONTAINMENT_STEP = 1e-4
CONTAINMENT_SUBSTEPS = 20


@dataclass(frozen=True)
class TerminalIngredients:
    """Terminal cost J(x) = x'Px, terminal law kappa(x) = -Kx, terminal set."""

    P: Array
    K: Array
    omega: Polyhedron | None = None
    t_d_omega: float = 0.02

    def kappa(self, x: Array) -> Array:
        return -self.K @ x

    def cost(self, x: Array) -> float:
        return float(x @ self.P @ x)


def _inverse_r(R: Array) -> Array:
    R = np.atleast_2d(np.asarray(R, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularR(f"R is singular or ill-conditioned (cond={cond:.3g})")
    return np.linalg.inv(R)


def is_hurwitz(A: Array) -> bool:
    return bool(np.max(np.linalg.eigvals(np.atleast_2d(A)).real) < 0.0)


def spectral_radius(A: Array) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(A)))))


def care_residual(A: Array, B: Array, Q: Array, R: Array, P: Array) -> float:
    """Frobenius norm of A'P + PA - PBR^-1B'P + Q."""
    R_inv = _inverse_r(R)
    residual = A.T @ P + P @ A - P @ B @ R_inv @ B.T @ P + Q
    return float(np.linalg.norm(residual, "fro"))


def _stabilizing_seed(A: Array, B: Array, attempts: int = 8) -> Array:
    """A gain K with A - BK Hurwitz, by Bass's eigenvalue-shift construction.

    For beta beyond the spectrum of -A, the solution Z of
    (A + beta I) Z + Z (A + beta I)' = 2BB' gives K = B' Z^+ with
    (A - BK) Z + Z (A - BK)' = -2 beta Z.
    """
    n, m = B.shape
    if is_hurwitz(A):
        return np.zeros((m, n))

    base = np.linalg.norm(A, "fro") + 1.0
    for attempt in range(attempts):
        beta = base * 2.0**attempt
        Z = solve_continuous_lyapunov(A + beta * np.eye(n), 2.0 * B @ B.T)
        K = B.T @ np.linalg.pinv(0.5 * (Z + Z.T))
        if is_hurwitz(A - B @ K):
            logger.debug("Stabilizing seed found with beta=%.3g", beta)
            return K
    raise NotStabilizable(f"No stabilizing seed found after {attempts} eigenvalue shifts")


def solve_care(
    A: Array,
    B: Array,
    Q: Array,
    R: Array,
    tol: float = 1e-13,
    max_iter: int = 60,
) -> Array:
    """Stabilizing solution of A'P + PA - PBR^-1B'P + Q = 0 by Newton-Kleinman.

    Each iteration solves the Lyapunov equation of the current closed loop
    (A - BK)'P + P(A - BK) + Q + K'RK = 0 and updates K = R^-1 B'P.

    Raises:
        NotStabilizable: If no stabilizing seed exists or the iteration
            leaves the stabilizing set.
        SingularR: If R is not invertible.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    R_inv = _inverse_r(R)

    K = _stabilizing_seed(A, B)
    P = np.zeros_like(A)
    for iteration in range(1, max_iter + 1):
        A_k = A - B @ K
        P = solve_continuous_lyapunov(A_k.T, -(Q + K.T @ R @ K))
        P = 0.5 * (P + P.T)
        K_next = R_inv @ B.T @ P
        step = np.linalg.norm(K_next - K)
        K = K_next
        if step <= tol * (1.0 + np.linalg.norm(K)):
            logger.debug("Newton-Kleinman converged in %d iterations", iteration)
            break

    if not is_hurwitz(A - B @ K) or not np.all(np.isfinite(P)):
        raise NotStabilizable("Riccati iteration did not reach a stabilizing solution")
    return P


def lqr_gain(P: Array, B: Array, R: Array) -> Array:
    """K = R^-1 B'P."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    B = np.asarray(B, dtype=float).reshape(P.shape[0], -1)
    return _inverse_r(R) @ B.T @ P


def gilbert_tan(A_cl: Array, cons: Polyhedron, max_iter: int = 200, tol: float = 1e-9) -> tuple[Polyhedron, int]:
    """Maximal output admissible set of x+ = A_cl x under cons, and t*.

    Rows cons.H A_cl^t x <= cons.h are added for t = 1, 2, ... and only when
    an LP shows they cut the current set. The first t at which every row
    is redundant ends the iteration; t* is the last t that added rows.

    Raises:
        UnstableClosedLoop: If the spectral radius of A_cl is >= 1.
        NotDetermined: If t* would exceed max_iter.
        ValueError: If the origin is not strictly inside cons.
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    rho = spectral_radius(A_cl)
    if rho >= 1.0:
        raise UnstableClosedLoop(f"Closed loop spectral radius {rho:.6f} >= 1")
    if cons.n_rows and np.min(cons.h) <= 0.0:
        raise ValueError("The origin must lie strictly inside the constraint set")

    current = cons
    A_t = A_cl.copy()
    for t in range(1, max_iter + 1):
        candidates = cons.H @ A_t
        new_rows = []
        for i, row in enumerate(candidates):
            if np.all(np.abs(row) <= 1e-14):
                continue
            try:
                _, value = solve_lp(row, current)
            except UnboundedProblem:
                value = np.inf
            if value > cons.h[i] + tol:
                new_rows.append(i)

        if not new_rows:
            logger.info("O_inf determined at t*=%d with %d rows", t - 1, current.n_rows)
            return current, t - 1

        logger.debug("O_inf step t=%d adds %d rows", t, len(new_rows))
        current = Polyhedron(
            np.vstack([current.H, candidates[new_rows]]),
            np.concatenate([current.h, cons.h[new_rows]]),
        )
        A_t = A_t @ A_cl

    raise NotDetermined(f"O_inf not determined within {max_iter} steps")


def max_output_admissible_set(A_cl: Array, cons: Polyhedron, max_iter: int = 200) -> Polyhedron:
    """O_inf for the discrete closed loop x+ = A_cl x (see gilbert_tan)."""
    omega, _ = gilbert_tan(A_cl, cons, max_iter)
    return omega


def build_terminal_ingredients(
    model: ContinuousModel,
    cost: StageCost,
    x_set: Polyhedron,
    u_set: Polyhedron,
    t_d_omega: float = 0.02,
    with_set: bool = True,
    max_iter: int = 200,
) -> TerminalIngredients:
    """CARE terminal cost, LQR law, and O_inf of the ZOH closed loop at t_d_omega.

    The O_inf constraints are x in X together with -Kx in U.
    """
    x0 = np.zeros(model.n)
    u0 = np.zeros(model.m)
    A, B = linearize(model, x0, u0)
    P = solve_care(A, B, cost.Q, cost.R)
    K = lqr_gain(P, B, cost.R)

    omega = None
    if with_set:
        A_d, B_d = discretize_exact_lti(A, B, t_d_omega)
        cons = x_set.intersect(u_set.preimage(-K))
        omega = max_output_admissible_set(A_d - B_d @ K, cons, max_iter)
    return TerminalIngredients(P=P, K=K, omega=omega, t_d_omega=t_d_omega)


@dataclass
class ConditionCheck:
    """Outcome of one terminal condition over all samples."""

    name: str
    passed: bool
    worst_violation: float
    worst_point: Array | None = None


@dataclass
class TerminalReport:
    """Sampled check of the three terminal conditions.

    flow_leakage is the worst exit of the Euler step x + h f(x, kappa(x)),
    h = CONTAINMENT_STEP. It is informational: Omega is invariant for the
    sampled loop, and the flow may cut across its vertices between samples.
    """

    n_samples: int
    checks: list[ConditionCheck] = field(default_factory=list)
    flow_leakage: float = 0.0

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def __getitem__(self, name: str) -> ConditionCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)


def _held_input_step(model: ContinuousModel, x: Array, u: Array, t_d: float) -> Array:
    h = t_d / CONTAINMENT_SUBSTEPS
    for _ in range(CONTAINMENT_SUBSTEPS):
        x = rk4_step(model, x, u, h)
    return x


def verify_terminal_conditions(
    model: ContinuousModel,
    ti: TerminalIngredients,
    cost: StageCost,
    n_samples: int,
    u_set: Polyhedron | None = None,
    tol: float = 1e-8,
    bounding_box: Polyhedron | None = None,
    seed: int = 0,
) -> TerminalReport:
    """Check the terminal conditions at sampled points of Omega.

    (a) input admissibility: kappa(x) in U;
    (b) containment: the state reached from x after one t_d_omega step with
        kappa(x) held is in Omega;
    (c) decrease: grad J(x)' f(x, kappa(x)) + l(x, kappa(x)) <= tol.

    The origin is always among the checked points. Failures are reported,
    never raised.
    """
    omega = ti.omega if ti.omega is not None else Polyhedron.unbounded(model.n)
    region = omega if bounding_box is None else omega.intersect(bounding_box)
    points = np.vstack([np.zeros(model.n), hit_and_run(region, n_samples, seed=seed)])

    worst = {"input": (0.0, None), "containment": (0.0, None), "decrease": (-np.inf, None)}
    leakage = 0.0
    for x in points:
        u = ti.kappa(x)
        dx = model(x, u)

        if u_set is not None:
            v = u_set.violation(u)
            if v > worst["input"][0]:
                worst["input"] = (v, x)

        v = omega.violation(_held_input_step(model, x, u, ti.t_d_omega))
        if v > worst["containment"][0]:
            worst["containment"] = (v, x)
        leakage = max(leakage, omega.violation(x + CONTAINMENT_STEP * dx))

        v = float(2.0 * (ti.P @ x) @ dx + cost.continuous(x, u))
        if v > worst["decrease"][0]:
            worst["decrease"] = (v, x)

    report = TerminalReport(n_samples=len(points), flow_leakage=leakage)
    for name, (value, point) in worst.items():
        report.checks.append(ConditionCheck(name, value <= tol, float(value), point))
        if value > tol:
            logger.warning("Terminal condition '%s' violated by %.3g", name, value)
    return report
