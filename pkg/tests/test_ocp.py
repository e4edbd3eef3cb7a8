import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from hmpc.dynamics import DiscreteModel, discretize
from hmpc.errors import InfeasibleProblem, NotLinear
from hmpc.ocp import (
    Condenser,
    DiscreteOcp,
    LinearOcpSolver,
    NonlinearOcpSolver,
    OcpSolution,
    StageCost,
    WarmStart,
    condense,
    make_solver,
    ocp_value,
    rollout,
    shift_duals,
    shift_warm_start,
    solve_linear_ocp,
    solve_nonlinear_ocp,
)
from hmpc.qp import QuadProg, SolveStatus, solve_qp


def test_stage_cost_validation():
    with pytest.raises(ValueError):
        StageCost(-np.eye(2), np.eye(1))
    with pytest.raises(ValueError):
        StageCost(np.eye(2), np.zeros((1, 1)))
    cost = StageCost(np.diag([1.0, 0.0]), np.array([[0.04]]))
    assert cost.discrete(np.array([2.0, 0.0]), np.array([1.0]), 0.1) == pytest.approx(0.1 * 4.04)


def test_ocp_validation(make_di_ocp, di_spec):
    ocp = make_di_ocp(0.4)
    assert ocp.N == 5 and ocp.T == pytest.approx(2.0)
    with pytest.raises(ValueError, match="Horizon"):
        DiscreteOcp(ocp.model_d, ocp.cost, ocp.P, 0, ocp.x_set, ocp.u_set)
    with pytest.raises(ValueError, match="origin"):
        DiscreteOcp(ocp.model_d, ocp.cost, ocp.P, 5, ocp.x_set, type(ocp.u_set).box([1.0], [2.0]))


def test_state_stage_ranges(make_di_ocp):
    full = make_di_ocp(0.4).stacked_constraints()[2]
    short = make_di_ocp(0.4, state_stages="1..N-1").stacked_constraints()[2]
    assert full.shape[0] == 5 * 4
    assert short.shape[0] == 4 * 4


def test_terminal_set_adds_rows(make_di_ocp, di_terminal):
    with_set = make_di_ocp(0.4, terminal_set=True).stacked_constraints()[2]
    assert with_set.shape[0] == 5 * 4 + di_terminal.omega.n_rows


def test_condensed_value_matches_rollout(make_di_ocp, rng):
    ocp = make_di_ocp(0.4)
    condenser = Condenser(ocp)
    x = np.array([1.0, -0.2])
    z = rng.uniform(-1.0, 1.0, ocp.N)
    assert condenser.value(x, z) == pytest.approx(ocp_value(ocp, x, z.reshape(ocp.N, 1)), rel=1e-12)
    xi = rollout(ocp.model_d, x, z.reshape(ocp.N, 1))
    np.testing.assert_allclose(condenser.Phi @ x + condenser.Gamma @ z, xi[1:].reshape(-1), atol=1e-12)


def test_condense_needs_linear_model(lc_model, lc_spec):
    ocp = DiscreteOcp(discretize(lc_model, 0.2, "rk4"), lc_spec.cost(), np.eye(6), 10, lc_spec.x_set(), lc_spec.u_set())
    with pytest.raises(NotLinear):
        condense(ocp, np.zeros(6))


def test_inactive_constraints_give_the_unconstrained_lq_solution(make_di_ocp):
    ocp = make_di_ocp(0.4)
    x = np.array([0.05, 0.0])
    qp = condense(ocp, x)
    expected = -np.linalg.solve(qp.Hqp, qp.g)

    sol = solve_linear_ocp(ocp, x, tol=1e-10)
    assert sol.status is SolveStatus.OPTIMAL
    np.testing.assert_allclose(sol.mu.reshape(-1), expected, atol=1e-8)
    np.testing.assert_allclose(sol.xi[0], x)
    assert sol.value == pytest.approx(ocp_value(ocp, x, sol.mu), rel=1e-9)


def test_constraints_are_respected(make_di_ocp):
    ocp = make_di_ocp(0.4)
    sol = solve_linear_ocp(ocp, np.array([2.0, 0.0]), tol=1e-9)
    assert np.all(sol.mu >= -4.0 - 1e-7) and np.all(sol.mu <= 10.0 + 1e-7)
    assert all(ocp.x_set.contains(x, tol=1e-7) for x in sol.xi[1:])


def test_value_decreases_along_the_nominal_trajectory(make_di_ocp, di_spec):
    t_d = 0.4
    base = make_di_ocp(t_d)
    A_d, B_d = base.model_d.linear_part
    cost = di_spec.cost()
    P = solve_discrete_are(A_d, B_d, t_d * cost.Q, t_d * cost.R)
    ocp = make_di_ocp(t_d, P=P)

    x = np.array([0.2, 0.0])
    sol = solve_linear_ocp(ocp, x, tol=1e-10)
    x_next = sol.xi[1]
    following = solve_linear_ocp(ocp, x_next, tol=1e-10)
    assert following.value <= sol.value - cost.discrete(x, sol.u0, t_d) + 1e-9


def sparse_qp(ocp, x0):
    """Inputs and states as variables, dynamics as equality constraints."""
    A_d, B_d = ocp.model_d.linear_part
    N, n, m = ocp.N, ocp.n, ocp.m
    Q_bar, R_bar = ocp.weights()
    H_U, h_U, H_X, h_X = ocp.stacked_constraints()

    Hqp = 2.0 * np.block([[R_bar, np.zeros((N * m, N * n))], [np.zeros((N * n, N * m)), Q_bar]])
    A_in = np.block([[H_U, np.zeros((H_U.shape[0], N * n))], [np.zeros((H_X.shape[0], N * m)), H_X]])
    A_eq = np.zeros((N * n, N * (m + n)))
    b_eq = np.zeros(N * n)
    for j in range(N):
        rows = slice(j * n, (j + 1) * n)
        A_eq[rows, j * m : (j + 1) * m] = -B_d
        A_eq[rows, N * m + j * n : N * m + (j + 1) * n] = np.eye(n)
        if j == 0:
            b_eq[rows] = A_d @ x0
        else:
            A_eq[rows, N * m + (j - 1) * n : N * m + j * n] = -A_d
    return QuadProg(Hqp, np.zeros(N * (m + n)), A_in, np.concatenate([h_U, h_X]), A_eq=A_eq, b_eq=b_eq)


def test_sparse_and_condensed_solutions_agree(make_di_ocp):
    ocp = make_di_ocp(0.4)
    x = np.array([2.0, 0.0])
    condensed = solve_linear_ocp(ocp, x, tol=1e-10)
    sparse = solve_qp(sparse_qp(ocp, x), tol=1e-10)
    assert sparse.status is SolveStatus.OPTIMAL

    n_u = ocp.N * ocp.m
    np.testing.assert_allclose(sparse.z[:n_u], condensed.mu.reshape(-1), atol=1e-6)
    np.testing.assert_allclose(sparse.z[n_u:].reshape(ocp.N, ocp.n), condensed.xi[1:], atol=1e-6)
    stage_zero = ocp.cost.discrete(x, np.zeros(ocp.m), ocp.t_d)
    assert sparse_qp(ocp, x).objective(sparse.z) + stage_zero == pytest.approx(condensed.value, rel=1e-6)


def test_infeasible_state_raises(make_di_ocp):
    with pytest.raises(InfeasibleProblem):
        solve_linear_ocp(make_di_ocp(0.4), np.array([2.0, 5.0]))


@pytest.mark.parametrize("x", [[0.05, 0.0], [2.0, 0.0]])
def test_sqp_on_a_linear_model_matches_condensing(make_di_ocp, x):
    ocp = make_di_ocp(0.4)
    A_d, B_d = ocp.model_d.linear_part
    opaque = DiscreteModel(
        n=2,
        m=1,
        t_d=0.4,
        step=lambda x, u: A_d @ x + B_d @ u,
        step_jacobians=lambda x, u: (A_d @ x + B_d @ u, A_d, B_d),
    )
    ocp_nl = DiscreteOcp(opaque, ocp.cost, ocp.P, ocp.N, ocp.x_set, ocp.u_set)
    x = np.array(x)

    linear = solve_linear_ocp(ocp, x, tol=1e-9)
    nonlinear = solve_nonlinear_ocp(ocp_nl, x, qp_tol=1e-9)
    assert nonlinear.status is SolveStatus.OPTIMAL
    assert nonlinear.iterations <= 2
    np.testing.assert_allclose(nonlinear.mu, linear.mu, atol=1e-6)


def test_sqp_improves_the_lane_change_cost(lc_model, lc_spec):
    from hmpc.terminal import build_terminal_ingredients

    ti = build_terminal_ingredients(lc_model, lc_spec.cost(), lc_spec.x_set(), lc_spec.u_set(), with_set=False)
    ocp = DiscreteOcp(discretize(lc_model, 0.2, "rk4", substeps=4), lc_spec.cost(), ti.P, 10, lc_spec.x_set(), lc_spec.u_set())
    x0 = lc_spec.initial_state()

    sol = NonlinearOcpSolver(ocp).solve(x0)
    assert sol.status in (SolveStatus.OPTIMAL, SolveStatus.MAX_ITER)
    assert np.all(np.abs(sol.mu[:, 0]) <= lc_spec.u1_max + 1e-6)
    assert np.all(np.abs(sol.mu[:, 1]) <= lc_spec.u2_max + 1e-6)
    assert sol.value < 0.9 * ocp_value(ocp, x0, np.zeros((10, 2)))


def test_make_solver_picks_the_path(make_di_ocp, lc_model, lc_spec):
    assert isinstance(make_solver(make_di_ocp(0.4)), LinearOcpSolver)
    ocp = DiscreteOcp(discretize(lc_model, 0.2, "rk4"), lc_spec.cost(), np.eye(6), 10, lc_spec.x_set(), lc_spec.u_set())
    assert isinstance(make_solver(ocp), NonlinearOcpSolver)


def _solution(mu, status=SolveStatus.OPTIMAL):
    xi = np.zeros((mu.shape[0] + 1, 2))
    xi[-1] = [1.0, 2.0]
    return OcpSolution(mu=mu, xi=xi, value=0.0, status=status, iterations=1, wall_time=0.0, lam=np.arange(3.0))


def test_shift_warm_start():
    mu = np.array([[1.0], [2.0], [3.0]])

    same = shift_warm_start(_solution(mu), stages=0)
    np.testing.assert_array_equal(same.mu, mu)
    np.testing.assert_array_equal(same.lam, np.arange(3.0))

    shifted = shift_warm_start(_solution(mu), stages=1)
    np.testing.assert_array_equal(shifted.mu, [[2.0], [3.0], [3.0]])
    assert shifted.lam is None

    terminal = shift_warm_start(_solution(mu), stages=2, K=np.array([[1.0, 1.0]]))
    np.testing.assert_array_equal(terminal.mu, [[3.0], [-3.0], [-3.0]])

    with pytest.raises(ValueError):
        shift_warm_start(_solution(mu, SolveStatus.INFEASIBLE))


def test_warm_started_resolve_is_immediate(make_di_ocp):
    solver = LinearOcpSolver(make_di_ocp(0.4), tol=1e-9)
    x = np.array([1.0, 0.1])
    first = solver.solve(x)
    again = solver.solve(x, shift_warm_start(first, stages=0))
    assert again.iterations == 0
    np.testing.assert_array_equal(again.mu, first.mu)


def test_warm_start_dataclass_defaults():
    assert WarmStart(mu=np.zeros((2, 1))).lam is None


def test_shift_duals_layout(make_di_ocp, di_terminal):
    ocp = make_di_ocp(0.4, terminal_set=True)
    n_u, n_x, n_t = ocp.u_set.n_rows, ocp.x_set.n_rows, di_terminal.omega.n_rows
    lam_u = np.arange(1.0, ocp.N * n_u + 1)
    lam_x = 100.0 + np.arange(ocp.N * n_x)
    lam_t = np.full(n_t, -1.0)

    shifted = shift_duals(np.concatenate([lam_u, lam_x, lam_t]), ocp, 1)
    np.testing.assert_array_equal(shifted[: (ocp.N - 1) * n_u], lam_u[n_u:])
    np.testing.assert_array_equal(shifted[(ocp.N - 1) * n_u : ocp.N * n_u], 0.0)
    states = shifted[ocp.N * n_u : ocp.N * n_u + ocp.N * n_x]
    np.testing.assert_array_equal(states[: (ocp.N - 1) * n_x], lam_x[n_x:])
    np.testing.assert_array_equal(states[(ocp.N - 1) * n_x :], 0.0)
    np.testing.assert_array_equal(shifted[-n_t:], lam_t)

    assert shift_duals(np.zeros(3), ocp, 1) is None


def test_shifted_duals_warm_start_the_next_sample(make_di_ocp):
    ocp = make_di_ocp(0.4)
    solver = LinearOcpSolver(ocp, tol=1e-9)
    first = solver.solve(np.array([2.0, 0.0]))
    x_next = first.xi[1]

    cold = solver.solve(x_next)
    start = shift_warm_start(first, stages=1, ocp=ocp)
    assert start.lam is not None and start.lam.shape == first.lam.shape
    warm = solver.solve(x_next, start)
    assert warm.iterations <= cold.iterations
    np.testing.assert_allclose(warm.mu, cold.mu, atol=1e-6)
