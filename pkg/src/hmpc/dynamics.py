"""Continuous-time models, fixed-step integration, and discretization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from hmpc.errors import IntegrationDiverged, NotLinear

Array = np.ndarray
RhsFn = Callable[[Array, Array], Array]
JacobianFn = Callable[[Array, Array], tuple[Array, Array]]
StepFn = Callable[[Array, Array], Array]
StepJacobianFn = Callable[[Array, Array], tuple[Array, Array, Array]]

FD_REL_STEP = 1e-6


@dataclass(frozen=True)
class ContinuousModel:
    """An ODE x' = f(x, u) with n states and m inputs."""

    n: int
    m: int
    f: RhsFn
    jacobians: JacobianFn | None = None
    linear_part: tuple[Array, Array] | None = None
    name: str = "model"

    def __call__(self, x: Array, u: Array) -> Array:
        return self.f(np.asarray(x, dtype=float), np.asarray(u, dtype=float))


@dataclass(frozen=True)
class DiscreteModel:
    """A prediction model x+ = f_d(x, u) obtained at step t_d."""

    n: int
    m: int
    t_d: float
    step: StepFn
    linear_part: tuple[Array, Array] | None = None
    step_jacobians: StepJacobianFn | None = field(default=None, repr=False)
    method: str = "custom"

    def __post_init__(self):
        if self.t_d <= 0:
            raise ValueError(f"t_d must be positive, got {self.t_d}")

    def step_and_jacobians(self, x: Array, u: Array) -> tuple[Array, Array, Array]:
        """Return (f_d(x, u), df_d/dx, df_d/du)."""
        if self.linear_part is not None:
            A_d, B_d = self.linear_part
            return A_d @ x + B_d @ u, A_d, B_d
        if self.step_jacobians is not None:
            return self.step_jacobians(x, u)
        A_d, B_d = _central_difference(self.step, x, u)
        return self.step(x, u), A_d, B_d

    def jacobians(self, x: Array, u: Array) -> tuple[Array, Array]:
        _, A_d, B_d = self.step_and_jacobians(x, u)
        return A_d, B_d


def _central_difference(fun: StepFn, x: Array, u: Array) -> tuple[Array, Array]:
    """Central finite differences of fun with respect to x and u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    y0 = np.asarray(fun(x, u), dtype=float)
    A = np.empty((y0.size, x.size))
    B = np.empty((y0.size, u.size))

    for i in range(x.size):
        h = FD_REL_STEP * (1.0 + abs(x[i]))
        dx = np.zeros_like(x)
        dx[i] = h
        A[:, i] = (fun(x + dx, u) - fun(x - dx, u)) / (2.0 * h)

    for j in range(u.size):
        h = FD_REL_STEP * (1.0 + abs(u[j]))
        du = np.zeros_like(u)
        du[j] = h
        B[:, j] = (fun(x, u + du) - fun(x, u - du)) / (2.0 * h)

    return A, B


def linearize(model: ContinuousModel, x: Array, u: Array) -> tuple[Array, Array]:
    """Jacobians (df/dx, df/du) at (x, u).

    Uses the model's analytic Jacobians when it has them, otherwise central
    differences with step 1e-6 * (1 + |component|).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if model.jacobians is not None:
        A, B = model.jacobians(x, u)
        return np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    return _central_difference(model.f, x, u)


def rk4_step(model: ContinuousModel, x: Array, u: Array, h: float) -> Array:
    """One classical Runge-Kutta step with u held constant over [0, h].

    Raises:
        ValueError: If h is not positive.
        IntegrationDiverged: If the result is not finite.
    """
    if h <= 0:
        raise ValueError(f"Step must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    f = model.f

    k1 = f(x, u)
    k2 = f(x + 0.5 * h * k1, u)
    k3 = f(x + 0.5 * h * k2, u)
    k4 = f(x + h * k3, u)
    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    if not np.all(np.isfinite(x_next)):
        raise IntegrationDiverged(f"Non-finite state after RK4 step from x={x}, u={u}")
    return x_next


def rk4_step_with_jacobians(
    model: ContinuousModel, x: Array, u: Array, h: float
) -> tuple[Array, Array, Array]:
    """RK4 step plus the exact derivative of the RK4 map.

    The model Jacobians are propagated through each stage, so the result is
    the Jacobian of the discrete map itself rather than an approximation of
    the flow sensitivity.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    f = model.f
    eye = np.eye(model.n)

    k1 = f(x, u)
    A1, B1 = linearize(model, x, u)
    dk1x, dk1u = A1, B1

    x2 = x + 0.5 * h * k1
    k2 = f(x2, u)
    A2, B2 = linearize(model, x2, u)
    dk2x = A2 @ (eye + 0.5 * h * dk1x)
    dk2u = A2 @ (0.5 * h * dk1u) + B2

    x3 = x + 0.5 * h * k2
    k3 = f(x3, u)
    A3, B3 = linearize(model, x3, u)
    dk3x = A3 @ (eye + 0.5 * h * dk2x)
    dk3u = A3 @ (0.5 * h * dk2u) + B3

    x4 = x + h * k3
    k4 = f(x4, u)
    A4, B4 = linearize(model, x4, u)
    dk4x = A4 @ (eye + h * dk3x)
    dk4u = A4 @ (h * dk3u) + B4

    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise IntegrationDiverged(f"Non-finite state after RK4 step from x={x}, u={u}")

    Jx = eye + (h / 6.0) * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x)
    Ju = (h / 6.0) * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)
    return x_next, Jx, Ju


def discretize_exact_lti(A: Array, B: Array, t_d: float) -> tuple[Array, Array]:
    """Zero-order-hold discretization via the augmented matrix exponential.

    expm([[A, B], [0, 0]] * t_d) = [[A_d, B_d], [0, I]].
    """
    if t_d <= 0:
        raise ValueError(f"t_d must be positive, got {t_d}")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = B.shape

    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    E = expm(M * t_d)
    return E[:n, :n], E[:n, n:]


def discretize_rk4(model: ContinuousModel, t_d: float, substeps: int = 1) -> DiscreteModel:
    """f_d as `substeps` RK4 steps of size t_d / substeps, u held constant."""
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    if t_d <= 0:
        raise ValueError(f"t_d must be positive, got {t_d}")
    h = t_d / substeps

    def step(x: Array, u: Array) -> Array:
        for _ in range(substeps):
            x = rk4_step(model, x, u, h)
        return x

    def step_jacobians(x: Array, u: Array) -> tuple[Array, Array, Array]:
        Jx = np.eye(model.n)
        Ju = np.zeros((model.n, model.m))
        for _ in range(substeps):
            x, Ax, Bu = rk4_step_with_jacobians(model, x, u, h)
            Ju = Ax @ Ju + Bu
            Jx = Ax @ Jx
        return x, Jx, Ju

    return DiscreteModel(
        n=model.n,
        m=model.m,
        t_d=t_d,
        step=step,
        step_jacobians=step_jacobians,
        method="rk4",
    )


def discretize_euler(model: ContinuousModel, t_d: float) -> DiscreteModel:
    """Forward-Euler prediction model x+ = x + t_d f(x, u)."""
    if t_d <= 0:
        raise ValueError(f"t_d must be positive, got {t_d}")

    def step(x: Array, u: Array) -> Array:
        x_next = x + t_d * model.f(x, u)
        if not np.all(np.isfinite(x_next)):
            raise IntegrationDiverged(f"Non-finite state after Euler step from x={x}")
        return x_next

    def step_jacobians(x: Array, u: Array) -> tuple[Array, Array, Array]:
        A, B = linearize(model, x, u)
        return step(x, u), np.eye(model.n) + t_d * A, t_d * B

    return DiscreteModel(
        n=model.n,
        m=model.m,
        t_d=t_d,
        step=step,
        step_jacobians=step_jacobians,
        method="euler",
    )


def discretize_lti(model: ContinuousModel, t_d: float) -> DiscreteModel:
    """Exact ZOH prediction model for a model carrying (A, B)."""
    if model.linear_part is None:
        raise NotLinear(f"Model '{model.name}' has no linear part")
    A_d, B_d = discretize_exact_lti(*model.linear_part, t_d)
    return DiscreteModel(
        n=model.n,
        m=model.m,
        t_d=t_d,
        step=lambda x, u: A_d @ x + B_d @ u,
        linear_part=(A_d, B_d),
        method="exact",
    )


def discretize(
    model: ContinuousModel, t_d: float, method: str = "exact", substeps: int = 1
) -> DiscreteModel:
    """Build f_d by name: 'exact' (ZOH, LTI only), 'rk4', or 'euler'.

    'exact' falls back to RK4 for models without a linear part.
    """
    method = method.lower().strip()

    if method == "exact":
        if model.linear_part is not None:
            return discretize_lti(model, t_d)
        return discretize_rk4(model, t_d, substeps)
    elif method == "rk4":
        return discretize_rk4(model, t_d, substeps)
    elif method == "euler":
        return discretize_euler(model, t_d)
    else:
        raise ValueError(f"Unknown discretization: {method}. Use: exact, rk4, euler")


def consistency_error(model: ContinuousModel, f_d: DiscreteModel, x: Array, u: Array) -> float:
    """||(f_d(x, u) - x) / t_d - f(x, u)||."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return float(np.linalg.norm((f_d.step(x, u) - x) / f_d.t_d - model.f(x, u)))
