"""Convex QP solver (regularized semismooth Newton) and the LP mode.

QPs are written as

    min  1/2 z' Hqp z + g' z
    s.t. A_in z <= b_in,  A_eq z = b_eq.

The QP solver applies proximal-point regularization to the KKT system and
solves each regularized subproblem by semismooth Newton steps on the
Fischer-Burmeister reformulation of the complementarity conditions. The
regularized subproblems are always well posed, which gives warm starts and
rank-deficient constraint sets for free, and a diverging dual proximal
sequence yields a Farkas certificate of infeasibility.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import linprog

from hmpc.errors import InfeasibleProblem, UnboundedProblem
from hmpc.sets import Polyhedron

logger = logging.getLogger(__name__)

Array = np.ndarray

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 4000
CONVEXITY_TOL = 1e-10
INNER_TOL_FACTOR = 0.1
INNER_TOL_FLOOR = 1e-4


class SolveStatus(str, Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class QuadProg:
    """Problem data of a convex QP."""

    Hqp: Array
    g: Array
    A_in: Array
    b_in: Array
    A_eq: Array | None = None
    b_eq: Array | None = None

    def __post_init__(self):
        Hqp = np.atleast_2d(np.asarray(self.Hqp, dtype=float))
        d = Hqp.shape[0]
        if Hqp.shape != (d, d):
            raise ValueError(f"Hqp must be square, got {Hqp.shape}")
        scale = max(1.0, float(np.max(np.abs(Hqp)))) if Hqp.size else 1.0
        if np.max(np.abs(Hqp - Hqp.T), initial=0.0) > 1e-9 * scale:
            raise ValueError("Hqp must be symmetric")
        Hqp = 0.5 * (Hqp + Hqp.T)

        g = np.asarray(self.g, dtype=float).reshape(d)
        A_in = np.asarray(self.A_in, dtype=float).reshape(-1, d)
        b_in = np.asarray(self.b_in, dtype=float).reshape(A_in.shape[0])
        if self.A_eq is None:
            A_eq = np.zeros((0, d))
            b_eq = np.zeros(0)
        else:
            A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, d)
            b_eq = np.asarray(self.b_eq, dtype=float).reshape(A_eq.shape[0])

        object.__setattr__(self, "Hqp", Hqp)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "A_in", A_in)
        object.__setattr__(self, "b_in", b_in)
        object.__setattr__(self, "A_eq", A_eq)
        object.__setattr__(self, "b_eq", b_eq)

    @property
    def d(self) -> int:
        return self.Hqp.shape[0]

    @property
    def k(self) -> int:
        return self.A_in.shape[0]

    @property
    def e(self) -> int:
        return self.A_eq.shape[0]

    def min_eigenvalue(self) -> float:
        if self.d == 0:
            return 0.0
        return float(np.linalg.eigvalsh(self.Hqp)[0])

    def is_convex(self) -> bool:
        return self.min_eigenvalue() >= -CONVEXITY_TOL

    def objective(self, z: Array) -> float:
        return float(0.5 * z @ self.Hqp @ z + self.g @ z)

    def scaled(self, alpha: float) -> QuadProg:
        """Same feasible set, objective multiplied by alpha."""
        return QuadProg(alpha * self.Hqp, alpha * self.g, self.A_in, self.b_in, self.A_eq, self.b_eq)


@dataclass
class QpSolution:
    """Primal-dual result of a QP solve."""

    z: Array
    lam: Array
    status: SolveStatus
    iterations: int
    kkt_residual: float
    wall_time: float
    nu: Array | None = None

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


def kkt_residual(qp: QuadProg, z: Array, lam: Array, nu: Array | None = None) -> float:
    """Largest of stationarity, primal feasibility, complementarity, dual sign."""
    nu = np.zeros(qp.e) if nu is None else nu
    stationarity = qp.Hqp @ z + qp.g + qp.A_in.T @ lam + qp.A_eq.T @ nu
    residuals = [float(np.max(np.abs(stationarity), initial=0.0))]
    if qp.k:
        s = qp.A_in @ z - qp.b_in
        residuals.append(float(max(0.0, np.max(s))))
        residuals.append(float(np.max(np.abs(lam * s))))
        residuals.append(float(max(0.0, -np.min(lam))))
    if qp.e:
        residuals.append(float(np.max(np.abs(qp.A_eq @ z - qp.b_eq))))
    return max(residuals)


def _fischer_burmeister(a: Array, b: Array) -> tuple[Array, Array, Array]:
    """phi(a, b) = a + b - sqrt(a^2 + b^2) and an element of its Clarke Jacobian."""
    r = np.hypot(a, b)
    phi = a + b - r
    degenerate = r < 1e-14
    safe_r = np.where(degenerate, 1.0, r)
    da = np.where(degenerate, 1.0 - 1.0 / np.sqrt(2.0), 1.0 - a / safe_r)
    db = np.where(degenerate, 1.0 - 1.0 / np.sqrt(2.0), 1.0 - b / safe_r)
    return phi, da, db


class FbNewtonSolver:
    """Proximal semismooth Newton QP solver.

    One instance per thread: the instance only holds settings and the
    statistics of its last solve.
    """

    def __init__(
        self,
        tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER,
        sigma: float = 1e-6,
        armijo: float = 1e-4,
    ):
        if tol <= 0:
            raise ValueError(f"tol must be positive, got {tol}")
        self.tol = tol
        self.max_iter = max_iter
        self.sigma = sigma
        self.armijo = armijo
        self.last_outer_iterations = 0

    def _residual(self, qp, z, lam, nu, z_bar, lam_bar, nu_bar):
        sigma = self.sigma
        F1 = qp.Hqp @ z + qp.g + qp.A_in.T @ lam + qp.A_eq.T @ nu + sigma * (z - z_bar)
        F2 = qp.A_eq @ z - qp.b_eq - sigma * (nu - nu_bar)
        y = qp.b_in - qp.A_in @ z + sigma * (lam - lam_bar)
        F3, da, db = _fischer_burmeister(lam, y)
        return F1, F2, F3, da, db

    def _newton_direction(self, qp, F1, F2, F3, da, db):
        sigma = self.sigma
        M = da + sigma * db
        W = db / M
        K = qp.Hqp + sigma * np.eye(qp.d) + (qp.A_in.T * W) @ qp.A_in
        rhs = -F1 + qp.A_in.T @ (F3 / M)
        if qp.e:
            K = K + (qp.A_eq.T @ qp.A_eq) / sigma
            rhs = rhs - qp.A_eq.T @ F2 / sigma
        try:
            dz = cho_solve(cho_factor(K), rhs)
        except LinAlgError:
            dz = np.linalg.lstsq(K, rhs, rcond=None)[0]
        dlam = (-F3 + db * (qp.A_in @ dz)) / M
        dnu = (qp.A_eq @ dz + F2) / sigma
        return dz, dlam, dnu

    def _certificate(self, qp: QuadProg, dlam: Array, dnu: Array) -> bool:
        """True if (dlam, dnu) proves {A_in z <= b_in, A_eq z = b_eq} empty."""
        size = max(np.max(np.abs(dlam), initial=0.0), np.max(np.abs(dnu), initial=0.0))
        if size <= 1e-8:
            return False
        if np.min(dlam, initial=0.0) < -1e-6 * size:
            return False
        combination = qp.A_in.T @ dlam + qp.A_eq.T @ dnu
        gap = qp.b_in @ dlam + qp.b_eq @ dnu
        return bool(np.max(np.abs(combination), initial=0.0) <= 1e-6 * size and gap < -1e-6 * size)

    def solve(self, qp: QuadProg, warm: tuple[Array, Array | None] | None = None) -> QpSolution:
        """Solve qp to self.tol, optionally starting from (z, lam)."""
        start = time.perf_counter()

        z = np.zeros(qp.d)
        lam = np.zeros(qp.k)
        if warm is not None:
            z = np.asarray(warm[0], dtype=float).reshape(qp.d).copy()
            if warm[1] is not None:
                lam = np.maximum(np.asarray(warm[1], dtype=float).reshape(qp.k), 0.0)
        nu = np.zeros(qp.e)

        def finish(status: SolveStatus, iterations: int) -> QpSolution:
            lam_out = np.maximum(lam, 0.0)
            return QpSolution(
                z=z.copy(),
                lam=lam_out,
                nu=nu.copy(),
                status=status,
                iterations=iterations,
                kkt_residual=kkt_residual(qp, z, lam_out, nu),
                wall_time=time.perf_counter() - start,
            )

        if kkt_residual(qp, z, lam, nu) <= self.tol:
            self.last_outer_iterations = 0
            return finish(SolveStatus.OPTIMAL, 0)

        iterations = 0
        inner_tol = INNER_TOL_FACTOR * self.tol
        for outer in range(1, self.max_iter + 1):
            self.last_outer_iterations = outer
            z_bar, lam_bar, nu_bar = z.copy(), lam.copy(), nu.copy()

            # Every outer round takes at least one Newton step: a small FB
            # residual does not bound lam * s when lam is large.
            stepped = False
            while iterations < self.max_iter:
                F1, F2, F3, da, db = self._residual(qp, z, lam, nu, z_bar, lam_bar, nu_bar)
                theta = 0.5 * (F1 @ F1 + F2 @ F2 + F3 @ F3)
                if theta == 0.0 or (stepped and np.sqrt(2.0 * theta) <= inner_tol):
                    break
                stepped = True

                dz, dlam, dnu = self._newton_direction(qp, F1, F2, F3, da, db)
                t = 1.0
                while True:
                    z_t, lam_t, nu_t = z + t * dz, lam + t * dlam, nu + t * dnu
                    G1, G2, G3, _, _ = self._residual(qp, z_t, lam_t, nu_t, z_bar, lam_bar, nu_bar)
                    theta_t = 0.5 * (G1 @ G1 + G2 @ G2 + G3 @ G3)
                    if theta_t <= (1.0 - 2.0 * self.armijo * t) * theta or t < 1e-12:
                        break
                    t *= 0.5
                z, lam, nu = z_t, lam_t, nu_t
                iterations += 1

                if kkt_residual(qp, z, np.maximum(lam, 0.0), nu) <= self.tol:
                    logger.debug("QP optimal after %d Newton / %d outer iterations", iterations, outer)
                    return finish(SolveStatus.OPTIMAL, iterations)

            if iterations >= self.max_iter:
                break

            if kkt_residual(qp, z, np.maximum(lam, 0.0), nu) <= self.tol:
                return finish(SolveStatus.OPTIMAL, iterations)

            if self._certificate(qp, lam - lam_bar, nu - nu_bar):
                logger.debug("QP infeasibility certificate after %d outer iterations", outer)
                return finish(SolveStatus.INFEASIBLE, iterations)

            inner_tol = max(INNER_TOL_FACTOR * inner_tol, INNER_TOL_FLOOR * self.tol)

        logger.debug("QP hit the iteration cap (%d)", self.max_iter)
        return finish(SolveStatus.MAX_ITER, iterations)


def solve_qp(
    qp: QuadProg,
    tol: float = DEFAULT_TOL,
    warm: tuple[Array, Array | None] | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
) -> QpSolution:
    """Solve a convex QP.

    Args:
        qp: Problem data
        tol: KKT tolerance for the Optimal status
        warm: Optional (z, lam) starting point
        max_iter: Newton iteration cap

    Returns:
        QpSolution; status reports MaxIter or Infeasible instead of raising
    """
    return FbNewtonSolver(tol=tol, max_iter=max_iter).solve(qp, warm)


def solve_lp(c: Array, poly: Polyhedron) -> tuple[Array, float]:
    """Maximize c'z over poly.

    Raises:
        InfeasibleProblem: If poly is empty.
        UnboundedProblem: If c'z is unbounded above on poly.
    """
    c = np.asarray(c, dtype=float).reshape(poly.dim)
    result = linprog(
        -c,
        A_ub=poly.H if poly.n_rows else None,
        b_ub=poly.h if poly.n_rows else None,
        bounds=[(None, None)] * poly.dim,
        method="highs",
    )
    if result.status == 2:
        raise InfeasibleProblem("LP feasible set is empty")
    if result.status == 3:
        raise UnboundedProblem("LP objective is unbounded")
    if result.status != 0:
        raise InfeasibleProblem(f"LP solver failed: {result.message}")
    return result.x, float(-result.fun)
