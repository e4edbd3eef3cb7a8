import numpy as np
import pytest

from hmpc import experiments
from hmpc.config import DisturbanceConfig, GainStudyConfig, IssStudyConfig, SolverConfig, load_config
from hmpc.dynamics import ContinuousModel
from hmpc.errors import ConfigError, NotNominallyStable
from hmpc.experiments import (
    build_ocp,
    build_problem,
    build_sim_config,
    build_terminal,
    comparison,
    gain_study_states,
    run_experiment,
    sweep,
    sweep_row,
)
from hmpc.sets import Polyhedron


def test_build_problem_for_each_benchmark(config_data):
    di = build_problem(load_config(config_data()))
    assert di.plant.n == 2 and di.plant.m == 1
    np.testing.assert_array_equal(di.x0, [2.0, 0.0])

    lc_config = load_config(
        config_data(experiment="lane-change", schemes=[{"name": "MPC2", "t_s": 0.2, "t_d": 0.2}], params={"speed": 15.0})
    )
    lc = build_problem(lc_config)
    assert lc.plant.n == 6 and lc.plant.m == 2
    assert lc.x_set.n_rows == 8


def test_custom_problem_needs_a_matching_builder(config_data):
    params = {"x_lower": [-2.0], "x_upper": [2.0], "u_lower": [-1.0], "u_upper": [1.0], "Q": [1.0], "R": [1.0], "x0": [1.0]}
    config = load_config(config_data(experiment="custom-model-path", model_path="m.py", params=params))
    with pytest.raises(ConfigError):
        build_problem(config)

    def two_states(_):
        return ContinuousModel(n=2, m=1, f=lambda x, u: x)

    with pytest.raises(ConfigError, match="disagree"):
        build_problem(config, custom_builder=two_states)


def test_ocp_and_sim_config_follow_the_scheme(tiny_config):
    problem = build_problem(tiny_config)
    terminal = build_terminal(problem, tiny_config.solver)
    assert terminal.omega is None

    scheme = tiny_config.schemes[0]
    ocp = build_ocp(problem, terminal, scheme.t_d, tiny_config.horizon, tiny_config.solver)
    assert ocp.N == 5
    assert ocp.model_d.linear_part is not None

    cfg = build_sim_config(tiny_config, scheme)
    assert cfg.scheme == "MPC2"
    assert cfg.n_samples == 5


def test_terminal_set_is_built_on_request(tiny_config):
    problem = build_problem(tiny_config)
    solver = SolverConfig(terminal_set=True)
    terminal = build_terminal(problem, solver)
    assert terminal.omega is not None
    ocp = build_ocp(problem, terminal, 0.4, 2.0, solver)
    assert ocp.terminal_set is terminal.omega


def test_run_experiment_summaries(tiny_experiment):
    assert set(tiny_experiment.results) == {"HMPC", "MPC2"}
    assert not tiny_experiment.any_crashed

    hmpc = tiny_experiment.results["HMPC"]
    assert hmpc.N == 5
    assert hmpc.summary["label"] == "HMPC"
    assert hmpc.summary["n_samples"] == 20
    assert hmpc.summary["constraint_violation_max"] <= 1e-4
    assert hmpc.trace.status == "ok"

    mpc2 = tiny_experiment.results["MPC2"]
    assert mpc2.summary["n_samples"] == 5
    assert mpc2.summary["final_norm"] < 2.0


def test_comparison_document(tiny_experiment):
    doc = comparison(tiny_experiment)
    assert set(doc) == {"schemes", "ts_ratio", "realtime_criterion", "config"}
    assert set(doc["schemes"]) == {"HMPC", "MPC2"}
    assert doc["config"]["params"]["x1_max"] == 2.0
    ratios = [r for r in doc["ts_ratio"].values() if r is not None]
    assert ratios and min(ratios) == pytest.approx(1.0)


def test_crashed_scheme_is_reported_not_raised(config_data):
    def exploding(_):
        def f(x, u):
            raise RuntimeError("model exploded")

        return ContinuousModel(n=1, m=1, f=f, jacobians=lambda x, u: (-np.eye(1), np.eye(1)))

    params = {"x_lower": [-2.0], "x_upper": [2.0], "u_lower": [-1.0], "u_upper": [1.0], "Q": [1.0], "R": [1.0], "x0": [1.0]}
    config = load_config(config_data(experiment="custom-model-path", model_path="m.py", params=params))
    result = run_experiment(config, custom_builder=exploding)
    assert result.any_crashed
    crashed = result.results["MPC2"]
    assert "model exploded" in crashed.error
    assert comparison(result)["schemes"]["MPC2"]["crashed"]
    assert sweep_row(crashed)["error"] == crashed.error


def test_sweep_grid(tiny_config):
    results = sweep(tiny_config, [0.4], [0.4, 0.2])
    assert [r.name for r in results] == ["ts0.4_td0.4", "ts0.2_td0.4"]
    row = sweep_row(results[1])
    assert row["N"] == 5
    assert row["t_s"] == 0.2
    assert row["error"] == ""

    with pytest.raises(ConfigError):
        sweep(tiny_config, [0.2], [0.4])
    with pytest.raises(ConfigError):
        sweep(tiny_config, [0.3], [0.3])


def test_sweep_rows_cover_every_seed(tiny_config):
    config = tiny_config.model_copy(
        update={"disturbance": DisturbanceConfig(kind="random", amplitude=0.2, seed=1), "seeds": [0, 1, 2]}
    )
    (result,) = sweep(config, [0.4], [0.4])
    assert [row["seed"] for row in result.summary["seeds"]] == [1, 0, 2]
    row = sweep_row(result)
    assert row["tail_limsup_worst"] == max(seed["tail_limsup"] for seed in result.summary["seeds"])
    assert row["tail_limsup_worst"] >= row["tail_limsup"]


def test_deterministic_disturbance_runs_once(tiny_experiment):
    for result in tiny_experiment.results.values():
        assert [row["seed"] for row in result.summary["seeds"]] == [0]
        assert result.summary["tail_limsup_worst"] == result.summary["tail_limsup"]


def test_sweep_ignores_the_studies(tiny_config):
    config = tiny_config.model_copy(update={"iss": IssStudyConfig(scheme="MPC2"), "gain": GainStudyConfig()})
    results = sweep(config, [0.4], [0.2])
    assert [r.name for r in results] == ["ts0.2_td0.4"]


def test_gain_study_states(tiny_config):
    problem = build_problem(tiny_config)
    states = gain_study_states(GainStudyConfig(n_states=50, seed=4), problem.x_set)
    assert len(states) == 50
    assert all(abs(x[0]) <= 1.0 and abs(x[1]) <= 0.2 for x in states)

    wide = gain_study_states(GainStudyConfig(n_states=5, half_widths=[0.1, 3.0]), problem.x_set)
    assert all(abs(x[0]) <= 0.1 for x in wide)
    assert any(abs(x[1]) > 0.4 for x in gain_study_states(GainStudyConfig(n_states=50, half_widths=[0.1, 3.0]), problem.x_set))

    unbounded = Polyhedron.box([-1.0, -np.inf], [1.0, np.inf])
    with pytest.raises(ConfigError, match="half_widths"):
        gain_study_states(GainStudyConfig(), unbounded)
    with pytest.raises(ConfigError, match="entries"):
        gain_study_states(GainStudyConfig(half_widths=[1.0]), unbounded)


def test_gain_study_on_the_double_integrator(config_data):
    config = load_config(config_data(gain={"t_d_grid": [0.4, 0.2], "t_d_ref": 0.1, "n_states": 10}))
    experiment = run_experiment(config)
    assert experiment.iss is None
    t_ds = [t_d for t_d, _ in experiment.gain_curve]
    values = [L for _, L in experiment.gain_curve]
    assert t_ds == [0.4, 0.2]
    assert values[0] > values[1] > 0.0
    assert comparison(experiment)["L_curve"][0] == {"t_d": 0.4, "L": values[0]}


def test_unsettled_iss_study_is_an_outcome(config_data, monkeypatch):
    def unsettled(*args, **kwargs):
        raise NotNominallyStable("Zero-disturbance tail limsup 0.5 > 0.001")

    monkeypatch.setattr(experiments, "measure_iss", unsettled)
    config = load_config(config_data(iss={"scheme": "MPC2", "bounds": [0.0, 0.1]}))
    experiment = run_experiment(config)
    assert not experiment.any_crashed
    assert experiment.iss is None
    assert "NotNominallyStable" in experiment.study_errors["iss"]
    assert "limsup_table" not in experiment.results["MPC2"].summary
    assert "NotNominallyStable" in comparison(experiment)["study_errors"]["iss"]


def test_iss_study_fills_the_scheme_summary(config_data):
    config = load_config(
        config_data(
            schemes=[{"name": "MPC2", "t_s": 0.4, "t_d": 0.4}],
            t_sim=16.0,
            seeds=[0, 1],
            iss={"scheme": "MPC2", "bounds": [0.0, 0.1, 0.2], "nominal_tol": 1e-2},
        )
    )
    experiment = run_experiment(config)
    table = experiment.results["MPC2"].summary["limsup_table"]
    assert [row["bound"] for row in table] == [0.0, 0.1, 0.2]
    assert experiment.iss.seeds == [0, 1]
    assert experiment.results["MPC2"].summary["iss_gain_bound"] == experiment.iss.gain_bound()
    assert comparison(experiment)["iss"]["limsup_table"] == table
