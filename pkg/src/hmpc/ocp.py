"""Discretized optimal control problems: condensing, QP and SQP solves."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from hmpc.dynamics import DiscreteModel
from hmpc.errors import InfeasibleProblem, IntegrationDiverged, NotLinear
from hmpc.qp import DEFAULT_MAX_ITER, DEFAULT_TOL, FbNewtonSolver, QuadProg, SolveStatus
from hmpc.sets import Polyhedron

logger = logging.getLogger(__name__)

Array = np.ndarray
StateStages = Literal["1..N", "1..N-1"]

DEFAULT_TRUST_RADIUS = 0.5


@dataclass(frozen=True)
class StageCost:
    """l(x, u) = x'Qx + u'Ru; the prediction model uses l_d = t_d * l."""

    Q: Array
    R: Array

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q)[0] < -1e-12:
            raise ValueError("Q must be symmetric positive semidefinite")
        if not np.allclose(R, R.T) or np.linalg.eigvalsh(R)[0] <= 0.0:
            raise ValueError("R must be symmetric positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    def continuous(self, x: Array, u: Array) -> float:
        return float(x @ self.Q @ x + u @ self.R @ u)

    def discrete(self, x: Array, u: Array, t_d: float) -> float:
        return t_d * self.continuous(x, u)


@dataclass(frozen=True)
class DiscreteOcp:
    """Horizon-N problem: min x_N'P x_N + sum l_d(x_j, u_j) under f_d and sets."""

    model_d: DiscreteModel
    cost: StageCost
    P: Array
    N: int
    x_set: Polyhedron
    u_set: Polyhedron
    terminal_set: Polyhedron | None = None
    state_stages: StateStages = "1..N"

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"Horizon N must be >= 1, got {self.N}")
        if self.state_stages not in ("1..N", "1..N-1"):
            raise ValueError(f"Unknown state_stages '{self.state_stages}'")
        sets = [("x_set", self.x_set), ("u_set", self.u_set), ("terminal_set", self.terminal_set)]
        for name, poly in sets:
            if poly is not None and not poly.contains(np.zeros(poly.dim)):
                raise ValueError(f"{name} must contain the origin")
        object.__setattr__(self, "P", np.atleast_2d(np.asarray(self.P, dtype=float)))

    @property
    def t_d(self) -> float:
        return self.model_d.t_d

    @property
    def T(self) -> float:
        return self.N * self.model_d.t_d

    @property
    def n(self) -> int:
        return self.model_d.n

    @property
    def m(self) -> int:
        return self.model_d.m

    def constrained_stages(self) -> list[int]:
        last = self.N if self.state_stages == "1..N" else self.N - 1
        return list(range(1, last + 1))

    def stacked_constraints(self) -> tuple[Array, Array, Array, Array]:
        """Constraints on the stacked inputs U and stacked states X = (x_1..x_N).

        Returns (H_U, h_U, H_X, h_X) with H_U U <= h_U and H_X X <= h_X.
        """
        N, n = self.N, self.n
        H_U = np.kron(np.eye(N), self.u_set.H)
        h_U = np.tile(self.u_set.h, N)

        blocks, rhs = [], []
        for i in self.constrained_stages():
            block = np.zeros((self.x_set.n_rows, N * n))
            block[:, (i - 1) * n : i * n] = self.x_set.H
            blocks.append(block)
            rhs.append(self.x_set.h)
        if self.terminal_set is not None:
            block = np.zeros((self.terminal_set.n_rows, N * n))
            block[:, (N - 1) * n :] = self.terminal_set.H
            blocks.append(block)
            rhs.append(self.terminal_set.h)
        H_X = np.vstack(blocks) if blocks else np.zeros((0, N * n))
        h_X = np.concatenate(rhs) if rhs else np.zeros(0)
        return H_U, h_U, H_X, h_X

    def weights(self) -> tuple[Array, Array]:
        """Block-diagonal (Qbar, Rbar) = (blkdiag(Q_d, ..., Q_d, P), blkdiag(R_d, ...))."""
        N, n = self.N, self.n
        Q_bar = np.kron(np.eye(N), self.t_d * self.cost.Q)
        Q_bar[(N - 1) * n :, (N - 1) * n :] = self.P
        R_bar = np.kron(np.eye(N), self.t_d * self.cost.R)
        return Q_bar, R_bar


@dataclass
class WarmStart:
    """Initial guess for the next solve."""

    mu: Array
    lam: Array | None = None


@dataclass
class OcpSolution:
    """Optimal input and state sequences for one initial state."""

    mu: Array
    xi: Array
    value: float
    status: SolveStatus
    iterations: int
    wall_time: float
    kkt_residual: float = 0.0
    lam: Array | None = field(default=None, repr=False)

    @property
    def u0(self) -> Array:
        return self.mu[0]


def rollout(model_d: DiscreteModel, x: Array, mu: Array) -> Array:
    """Predicted states xi_0..xi_N under f_d."""
    xi = np.empty((mu.shape[0] + 1, model_d.n))
    xi[0] = x
    for j in range(mu.shape[0]):
        xi[j + 1] = model_d.step(xi[j], mu[j])
    return xi


def ocp_value(ocp: DiscreteOcp, x: Array, mu: Array) -> float:
    """Objective of the OCP for input sequence mu, evaluated by rollout."""
    xi = rollout(ocp.model_d, np.asarray(x, dtype=float), mu)
    return _trajectory_cost(ocp, xi, mu)


def _trajectory_cost(ocp: DiscreteOcp, xi: Array, mu: Array) -> float:
    stage = sum(ocp.cost.discrete(xi[j], mu[j], ocp.t_d) for j in range(ocp.N))
    return float(stage + xi[-1] @ ocp.P @ xi[-1])


def _trajectory_violation(ocp: DiscreteOcp, xi: Array, mu: Array) -> float:
    """l1 sum of positive constraint residuals along a trajectory."""
    H_U, h_U, H_X, h_X = ocp.stacked_constraints()
    total = float(np.sum(np.maximum(H_U @ mu.reshape(-1) - h_U, 0.0)))
    if H_X.shape[0]:
        total += float(np.sum(np.maximum(H_X @ xi[1:].reshape(-1) - h_X, 0.0)))
    return total


def _convolution(A_list: list[Array], B_list: list[Array]) -> Array:
    """Gamma with block (i, j) = A_{i-1} ... A_{j+1} B_j for states 1..N."""
    N = len(B_list)
    n, m = B_list[0].shape
    Gamma = np.zeros((N * n, N * m))
    for j in range(N):
        block = B_list[j]
        for i in range(j, N):
            Gamma[i * n : (i + 1) * n, j * m : (j + 1) * m] = block
            if i + 1 < N:
                block = A_list[i + 1] @ block
    return Gamma


class Condenser:
    """Eliminates states from a linear OCP.

    The x-independent parts (Hqp, A_in, and the maps from x to g and b_in)
    are built once per OCP.
    """

    def __init__(self, ocp: DiscreteOcp):
        if ocp.model_d.linear_part is None:
            raise NotLinear("Condensing needs a discrete model with a linear part")
        self.ocp = ocp
        A_d, B_d = ocp.model_d.linear_part
        N, n = ocp.N, ocp.n

        powers = [np.eye(n)]
        for _ in range(N):
            powers.append(A_d @ powers[-1])
        self.Phi = np.vstack(powers[1:])
        self.Gamma = _convolution([A_d] * N, [B_d] * N)

        Q_bar, R_bar = ocp.weights()
        self.Hqp = 2.0 * (self.Gamma.T @ Q_bar @ self.Gamma + R_bar)
        self.Hqp = 0.5 * (self.Hqp + self.Hqp.T)
        self.G = 2.0 * self.Gamma.T @ Q_bar @ self.Phi
        self.C = self.Phi.T @ Q_bar @ self.Phi + ocp.t_d * ocp.cost.Q

        H_U, h_U, H_X, h_X = ocp.stacked_constraints()
        self.A_in = np.vstack([H_U, H_X @ self.Gamma])
        self.b_const = np.concatenate([h_U, h_X])
        self.E = np.vstack([np.zeros((H_U.shape[0], n)), -H_X @ self.Phi])

    def qp(self, x: Array) -> QuadProg:
        x = np.asarray(x, dtype=float)
        return QuadProg(self.Hqp, self.G @ x, self.A_in, self.b_const + self.E @ x)

    def value(self, x: Array, z: Array) -> float:
        """OCP objective: 1/2 z'Hz + g'z + x'Cx."""
        return float(0.5 * z @ self.Hqp @ z + (self.G @ x) @ z + x @ self.C @ x)


def condense(ocp: DiscreteOcp, x: Array) -> QuadProg:
    """Dense QP in the input sequence for a linear OCP at state x.

    Raises:
        NotLinear: If the discrete model has no linear part.
    """
    return Condenser(ocp).qp(x)


def _shift_blocks(values: Array, rows: int, stages: int) -> Array:
    """Shift per-stage blocks of `rows` entries forward, zero-filling the tail."""
    if rows == 0 or values.size == 0:
        return values.copy()
    blocks = values.reshape(-1, rows)
    shifted = np.zeros_like(blocks)
    shifted[: blocks.shape[0] - stages] = blocks[stages:]
    return shifted.reshape(-1)


def shift_duals(lam: Array, ocp: DiscreteOcp, stages: int) -> Array | None:
    """Shift multipliers laid out as in DiscreteOcp.stacked_constraints.

    Input and state blocks move forward by `stages`; the vacated tail gets
    zero multipliers (the terminal law keeps the tail inside the sets). The
    terminal-set block stays in place. Returns None if lam does not match the
    layout.
    """
    n_u = ocp.u_set.n_rows
    n_x = ocp.x_set.n_rows
    n_stages_x = len(ocp.constrained_stages())
    n_t = 0 if ocp.terminal_set is None else ocp.terminal_set.n_rows
    if lam.size != ocp.N * n_u + n_stages_x * n_x + n_t:
        return None

    stages = min(stages, ocp.N)
    lam_u = lam[: ocp.N * n_u]
    lam_x = lam[ocp.N * n_u : ocp.N * n_u + n_stages_x * n_x]
    lam_t = lam[ocp.N * n_u + n_stages_x * n_x :]
    return np.concatenate(
        [
            _shift_blocks(lam_u, n_u, stages),
            _shift_blocks(lam_x, n_x, min(stages, n_stages_x)),
            lam_t.copy(),
        ]
    )


def shift_warm_start(
    prev: OcpSolution,
    stages: int = 1,
    K: Array | None = None,
    ocp: DiscreteOcp | None = None,
) -> WarmStart:
    """Shift the previous input sequence by `stages`.

    Vacated tail stages repeat the last input, or apply the terminal law
    -K xi_N when K is given. With the OCP at hand the constraint multipliers
    are shifted stage by stage as well. stages=0 reuses the previous solution
    with its duals, which suits controllers sampled faster than t_d.
    """
    if prev.status not in (SolveStatus.OPTIMAL, SolveStatus.MAX_ITER):
        raise ValueError(f"Cannot warm start from a {prev.status.value} solution")
    if stages == 0:
        return WarmStart(mu=prev.mu.copy(), lam=None if prev.lam is None else prev.lam.copy())

    N = prev.mu.shape[0]
    stages = min(stages, N)
    tail = prev.mu[-1] if K is None else -K @ prev.xi[-1]
    mu = np.vstack([prev.mu[stages:], np.tile(tail, (stages, 1))])

    lam = None
    if ocp is not None and prev.lam is not None:
        lam = shift_duals(prev.lam, ocp, stages)
    return WarmStart(mu=mu, lam=lam)


class LinearOcpSolver:
    """Condense-and-solve for linear OCPs; one instance per control loop."""

    def __init__(self, ocp: DiscreteOcp, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
        self.ocp = ocp
        self.condenser = Condenser(ocp)
        self.qp_solver = FbNewtonSolver(tol=tol, max_iter=max_iter)

    def solve(self, x: Array, warm: WarmStart | None = None) -> OcpSolution:
        """Solve the OCP at x.

        Raises:
            InfeasibleProblem: If the QP has an infeasibility certificate.
        """
        start = time.perf_counter()
        x = np.asarray(x, dtype=float)
        ocp = self.ocp
        qp = self.condenser.qp(x)

        pair = None
        if warm is not None:
            pair = (warm.mu.reshape(-1), warm.lam)
        sol = self.qp_solver.solve(qp, pair)
        if sol.status is SolveStatus.INFEASIBLE:
            raise InfeasibleProblem(f"OCP infeasible at x={x}")
        if sol.status is SolveStatus.MAX_ITER:
            logger.warning("OCP QP stopped at the iteration cap (kkt=%.3g)", sol.kkt_residual)

        mu = sol.z.reshape(ocp.N, ocp.m)
        xi = rollout(ocp.model_d, x, mu)
        return OcpSolution(
            mu=mu,
            xi=xi,
            value=self.condenser.value(x, sol.z),
            status=sol.status,
            iterations=sol.iterations,
            wall_time=time.perf_counter() - start,
            kkt_residual=sol.kkt_residual,
            lam=sol.lam,
        )


class NonlinearOcpSolver:
    """SQP with a box trust region and an l1 merit function.

    Each iteration linearizes f_d along the current rollout, condenses the
    local problem with Gauss-Newton curvature, and solves it with
    ||d mu||_inf <= rho.

    The initial radius defaults to the widest input range, so the trust
    region only binds after a rejected step and an affine f_d is solved by
    the first QP. Inputs unbounded along some axis start at
    DEFAULT_TRUST_RADIUS.
    """

    def __init__(
        self,
        ocp: DiscreteOcp,
        qp_tol: float = DEFAULT_TOL,
        qp_max_iter: int = DEFAULT_MAX_ITER,
        max_iter: int = 50,
        rho_init: float | None = None,
        step_tol: float = 1e-6,
        kkt_tol: float = 1e-5,
    ):
        self.ocp = ocp
        self.qp_solver = FbNewtonSolver(tol=qp_tol, max_iter=qp_max_iter)
        self.max_iter = max_iter
        if rho_init is None:
            lower, upper = ocp.u_set.axis_bounds()
            span = upper - lower
            rho_init = float(np.max(span)) if np.all(np.isfinite(span)) else DEFAULT_TRUST_RADIUS
        self.rho_init = rho_init
        self.step_tol = step_tol
        self.kkt_tol = kkt_tol
        self.Q_bar, self.R_bar = ocp.weights()
        self.H_U, self.h_U, self.H_X, self.h_X = ocp.stacked_constraints()

    def _linearized_rollout(self, x: Array, mu: Array) -> tuple[Array, list[Array], list[Array]]:
        model_d = self.ocp.model_d
        xi = np.empty((mu.shape[0] + 1, model_d.n))
        xi[0] = x
        A_list, B_list = [], []
        for j in range(mu.shape[0]):
            xi[j + 1], A_j, B_j = model_d.step_and_jacobians(xi[j], mu[j])
            A_list.append(A_j)
            B_list.append(B_j)
        return xi, A_list, B_list

    def _merit(self, xi: Array, mu: Array, beta: float) -> float:
        return _trajectory_cost(self.ocp, xi, mu) + beta * _trajectory_violation(self.ocp, xi, mu)

    def _local_qp(self, xi, mu, A_list, B_list, rho) -> tuple[QuadProg, int]:
        ocp = self.ocp
        Gamma = _convolution(A_list, B_list)
        X = xi[1:].reshape(-1)
        U = mu.reshape(-1)
        Hqp = 2.0 * (Gamma.T @ self.Q_bar @ Gamma + self.R_bar)
        g = 2.0 * (Gamma.T @ self.Q_bar @ X + self.R_bar @ U)

        d = ocp.N * ocp.m
        A_in = np.vstack([self.H_U, self.H_X @ Gamma, np.eye(d), -np.eye(d)])
        b_in = np.concatenate(
            [self.h_U - self.H_U @ U, self.h_X - self.H_X @ X, np.full(d, rho), np.full(d, rho)]
        )
        n_model_rows = self.H_U.shape[0] + self.H_X.shape[0]
        return QuadProg(0.5 * (Hqp + Hqp.T), g, A_in, b_in), n_model_rows

    def _kkt(self, qp: QuadProg, n_rows: int, lam_model: Array) -> float:
        """KKT residual of the point the local QP is built at, for the given multipliers."""
        A_model, b_model = qp.A_in[:n_rows], qp.b_in[:n_rows]
        stationarity = np.max(np.abs(qp.g + A_model.T @ lam_model), initial=0.0)
        infeasibility = max(0.0, -np.min(b_model, initial=0.0))
        complementarity = np.max(np.abs(lam_model * b_model), initial=0.0)
        return float(max(stationarity, infeasibility, complementarity))

    def solve(self, x: Array, warm: WarmStart | OcpSolution | None = None) -> OcpSolution:
        """Solve the OCP at x.

        Raises:
            InfeasibleProblem: If a local QP is infeasible.
            IntegrationDiverged: If the initial rollout is not finite.
        """
        start = time.perf_counter()
        ocp = self.ocp
        x = np.asarray(x, dtype=float)
        mu = np.zeros((ocp.N, ocp.m)) if warm is None else np.array(warm.mu, dtype=float)

        n_model = self.H_U.shape[0] + self.H_X.shape[0]
        lam_model = np.zeros(n_model)
        if warm is not None and warm.lam is not None and np.size(warm.lam) == n_model:
            lam_model = np.maximum(np.asarray(warm.lam, dtype=float).reshape(n_model), 0.0)

        xi, A_list, B_list = self._linearized_rollout(x, mu)
        rho = self.rho_init
        beta = 1.0
        status = SolveStatus.MAX_ITER
        kkt = np.inf
        qp, n_rows = self._local_qp(xi, mu, A_list, B_list, rho)

        iteration = 0
        for iteration in range(1, self.max_iter + 1):
            lam_warm = np.concatenate([lam_model, np.zeros(qp.k - n_rows)])
            sol = self.qp_solver.solve(qp, (np.zeros(qp.d), lam_warm))
            if sol.status is SolveStatus.INFEASIBLE:
                raise InfeasibleProblem(f"SQP subproblem infeasible at iteration {iteration}")

            step = sol.z.reshape(ocp.N, ocp.m)
            lam_model = sol.lam[:n_rows]
            kkt = self._kkt(qp, n_rows, lam_model)

            step_norm = float(np.max(np.abs(step)))
            if step_norm <= self.step_tol or kkt <= self.kkt_tol:
                status = SolveStatus.OPTIMAL
                break

            beta = max(beta, 10.0 * float(np.max(lam_model, initial=0.0)))
            merit = self._merit(xi, mu, beta)
            violation = _trajectory_violation(ocp, xi, mu)
            predicted = beta * violation - qp.objective(sol.z)
            if predicted <= 1e-12 * (1.0 + abs(merit)):
                status = SolveStatus.OPTIMAL
                break

            mu_trial = mu + step
            try:
                xi_trial = rollout(ocp.model_d, x, mu_trial)
                actual = merit - self._merit(xi_trial, mu_trial, beta)
            except IntegrationDiverged:
                actual = -np.inf

            ratio = actual / predicted
            if ratio >= 0.1:
                mu = mu_trial
                xi, A_list, B_list = self._linearized_rollout(x, mu)
                if ratio > 0.75 and step_norm >= 0.99 * rho:
                    rho *= 1.5
                qp, n_rows = self._local_qp(xi, mu, A_list, B_list, rho)
                # The step's multipliers may already certify the new point,
                # which is always the case for an affine f_d.
                kkt = self._kkt(qp, n_rows, lam_model)
                if kkt <= self.kkt_tol:
                    status = SolveStatus.OPTIMAL
                    break
            else:
                rho *= 0.5
                logger.debug("SQP step rejected (ratio=%.3g), rho=%.3g", ratio, rho)
                qp, n_rows = self._local_qp(xi, mu, A_list, B_list, rho)

        if status is SolveStatus.MAX_ITER:
            logger.warning("SQP stopped at %d iterations (kkt=%.3g)", self.max_iter, kkt)

        return OcpSolution(
            mu=mu,
            xi=xi,
            value=_trajectory_cost(ocp, xi, mu),
            status=status,
            iterations=iteration,
            wall_time=time.perf_counter() - start,
            kkt_residual=kkt,
            lam=lam_model,
        )


def solve_linear_ocp(
    ocp: DiscreteOcp,
    x: Array,
    warm: WarmStart | None = None,
    tol: float = DEFAULT_TOL,
) -> OcpSolution:
    """Condense, solve the QP, and expand (see LinearOcpSolver)."""
    return LinearOcpSolver(ocp, tol=tol).solve(x, warm)


def solve_nonlinear_ocp(
    ocp: DiscreteOcp,
    x: Array,
    warm: WarmStart | OcpSolution | None = None,
    qp_tol: float = DEFAULT_TOL,
    max_iter: int = 50,
) -> OcpSolution:
    """SQP solve (see NonlinearOcpSolver)."""
    return NonlinearOcpSolver(ocp, qp_tol=qp_tol, max_iter=max_iter).solve(x, warm)


def make_solver(
    ocp: DiscreteOcp,
    qp_tol: float = DEFAULT_TOL,
    qp_max_iter: int = DEFAULT_MAX_ITER,
    sqp_max_iter: int = 50,
) -> LinearOcpSolver | NonlinearOcpSolver:
    """Condensing solver for linear prediction models, SQP otherwise."""
    if ocp.model_d.linear_part is not None:
        return LinearOcpSolver(ocp, tol=qp_tol, max_iter=qp_max_iter)
    return NonlinearOcpSolver(ocp, qp_tol=qp_tol, qp_max_iter=qp_max_iter, max_iter=sqp_max_iter)
