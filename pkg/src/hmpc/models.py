"""Benchmark plants: the double integrator and the nonlinear lane change."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hmpc.dynamics import ContinuousModel
from hmpc.ocp import StageCost
from hmpc.sets import Polyhedron

Array = np.ndarray

DOUBLE_INTEGRATOR_A = np.array([[0.0, 1.0], [0.0, 0.0]])
DOUBLE_INTEGRATOR_B = np.array([[0.0], [1.0]])


@dataclass(frozen=True)
class DoubleIntegratorSpec:
    """Constants of the double-integrator study.

    The disturbance enters through the input channel B.
    """

    x1_max: float = 2.0
    x2_max: float = 0.4
    u_min: float = -4.0
    u_max: float = 10.0
    Q: tuple[float, float] = (1.0, 0.0)
    R: float = 0.04
    T: float = 2.0
    x0: tuple[float, float] = (2.0, 0.0)

    def x_set(self) -> Polyhedron:
        return Polyhedron.box([-self.x1_max, -self.x2_max], [self.x1_max, self.x2_max])

    def u_set(self) -> Polyhedron:
        return Polyhedron.box([self.u_min], [self.u_max])

    def cost(self) -> StageCost:
        return StageCost(np.diag(self.Q), np.array([[self.R]]))

    def initial_state(self) -> Array:
        return np.array(self.x0, dtype=float)


@dataclass(frozen=True)
class LaneChangeSpec:
    """Vehicle parameters, bounds, and weights of the lane-change study.

    State x = [y, psi, v, omega, delta_f, delta_r], input u = [delta_f', delta_r'].
    Angles are radians. The vehicle parameters are nominal sedan values with
    a linear tire F(alpha) = C alpha and no wind force.
    """

    mass: float = 1500.0
    I_zz: float = 2500.0
    l_f: float = 1.1
    l_r: float = 1.6
    speed: float = 20.0
    C_f: float = 6.0e4
    C_r: float = 6.0e4
    F_w: float = 0.0
    y_bounds: tuple[float, float] = (-0.4, 10.0)
    psi_max: float = float(np.deg2rad(7.0))
    delta_f_max: float = float(np.deg2rad(35.0))
    delta_r_max: float = float(np.deg2rad(4.0))
    u1_max: float = 1.2
    u2_max: float = 0.6
    T: float = 2.0
    x0: tuple[float, ...] = (5.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    Q: tuple[float, ...] = field(default=(1.0,) * 6)
    R: tuple[float, ...] = field(default=(1.0, 1.0))

    def __post_init__(self):
        for name in ("mass", "I_zz", "speed", "C_f", "C_r"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def x_set(self) -> Polyhedron:
        inf = np.inf
        lower = [self.y_bounds[0], -self.psi_max, -inf, -inf, -self.delta_f_max, -self.delta_r_max]
        upper = [self.y_bounds[1], self.psi_max, inf, inf, self.delta_f_max, self.delta_r_max]
        return Polyhedron.box(lower, upper)

    def u_set(self) -> Polyhedron:
        return Polyhedron.box([-self.u1_max, -self.u2_max], [self.u1_max, self.u2_max])

    def cost(self) -> StageCost:
        return StageCost(np.diag(self.Q), np.diag(self.R))

    def initial_state(self) -> Array:
        return np.array(self.x0, dtype=float)


def double_integrator() -> ContinuousModel:
    """x' = [[0, 1], [0, 0]] x + [0; 1] u."""
    A = DOUBLE_INTEGRATOR_A
    B = DOUBLE_INTEGRATOR_B

    def f(x: Array, u: Array) -> Array:
        return A @ x + B @ u

    def jacobians(x: Array, u: Array) -> tuple[Array, Array]:
        return A.copy(), B.copy()

    return ContinuousModel(n=2, m=1, f=f, jacobians=jacobians, linear_part=(A, B), name="double-integrator")


def lane_change(params: LaneChangeSpec | None = None) -> ContinuousModel:
    """Lateral vehicle dynamics with front and rear steering.

    y'       = s sin(psi) + v cos(psi)
    psi'     = omega
    v'       = -s omega + (F(a_f) cos(d_f) + F(a_r) cos(d_r) + F_w) / m
    omega'   = (F(a_f) cos(d_f) l_f - F(a_r) cos(d_r) l_r) / I_zz
    d_f', d_r' = u

    with slip angles a_f = d_f - (v + l_f omega) / s, a_r = d_r - (v - l_r omega) / s.
    """
    p = params or LaneChangeSpec()
    s, m, I = p.speed, p.mass, p.I_zz
    l_f, l_r, C_f, C_r = p.l_f, p.l_r, p.C_f, p.C_r

    def f(x: Array, u: Array) -> Array:
        _, psi, v, omega, d_f, d_r = x
        a_f = d_f - (v + l_f * omega) / s
        a_r = d_r - (v - l_r * omega) / s
        F_f = C_f * a_f * np.cos(d_f)
        F_r = C_r * a_r * np.cos(d_r)
        return np.array(
            [
                s * np.sin(psi) + v * np.cos(psi),
                omega,
                -s * omega + (F_f + F_r + p.F_w) / m,
                (F_f * l_f - F_r * l_r) / I,
                u[0],
                u[1],
            ]
        )

    def jacobians(x: Array, u: Array) -> tuple[Array, Array]:
        _, psi, v, omega, d_f, d_r = x
        a_f = d_f - (v + l_f * omega) / s
        a_r = d_r - (v - l_r * omega) / s
        c_f, c_r = np.cos(d_f), np.cos(d_r)
        # d(C a cos(d))/d(d) for each axle
        dF_f = C_f * (c_f - a_f * np.sin(d_f))
        dF_r = C_r * (c_r - a_r * np.sin(d_r))

        A = np.zeros((6, 6))
        A[0, 1] = s * np.cos(psi) - v * np.sin(psi)
        A[0, 2] = np.cos(psi)
        A[1, 3] = 1.0
        A[2, 2] = -(C_f * c_f + C_r * c_r) / (m * s)
        A[2, 3] = -s + (-C_f * c_f * l_f + C_r * c_r * l_r) / (m * s)
        A[2, 4] = dF_f / m
        A[2, 5] = dF_r / m
        A[3, 2] = (-C_f * c_f * l_f + C_r * c_r * l_r) / (I * s)
        A[3, 3] = -(C_f * c_f * l_f**2 + C_r * c_r * l_r**2) / (I * s)
        A[3, 4] = dF_f * l_f / I
        A[3, 5] = -dF_r * l_r / I

        B = np.zeros((6, 2))
        B[4, 0] = 1.0
        B[5, 1] = 1.0
        return A, B

    return ContinuousModel(n=6, m=2, f=f, jacobians=jacobians, name="lane-change")
