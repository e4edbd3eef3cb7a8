"""Shared fixtures: benchmark plants, constraint sets, and OCP builders."""

import numpy as np
import pytest

from hmpc.dynamics import ContinuousModel, discretize
from hmpc.models import DoubleIntegratorSpec, LaneChangeSpec, double_integrator, lane_change
from hmpc.ocp import DiscreteOcp
from hmpc.terminal import build_terminal_ingredients


@pytest.fixture
def di_spec():
    return DoubleIntegratorSpec()


@pytest.fixture
def di_model():
    return double_integrator()


@pytest.fixture
def lc_spec():
    return LaneChangeSpec()


@pytest.fixture
def lc_model():
    return lane_change()


@pytest.fixture
def decay_model():
    """x' = -x + u, scalar."""
    return ContinuousModel(n=1, m=1, f=lambda x, u: -x + u, name="decay")


@pytest.fixture(scope="session")
def di_terminal():
    spec = DoubleIntegratorSpec()
    return build_terminal_ingredients(double_integrator(), spec.cost(), spec.x_set(), spec.u_set(), t_d_omega=0.02)


@pytest.fixture
def make_di_ocp(di_terminal):
    """Builder for double-integrator OCPs at a given t_d (horizon T = 2)."""
    spec = DoubleIntegratorSpec()
    model = double_integrator()

    def build(t_d: float, terminal_set: bool = False, state_stages: str = "1..N", P=None) -> DiscreteOcp:
        return DiscreteOcp(
            model_d=discretize(model, t_d),
            cost=spec.cost(),
            P=di_terminal.P if P is None else P,
            N=int(round(spec.T / t_d)),
            x_set=spec.x_set(),
            u_set=spec.u_set(),
            terminal_set=di_terminal.omega if terminal_set else None,
            state_stages=state_stages,
        )

    return build


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _tiny_config_data(**overrides):
    """A double-integrator experiment small enough to run in a test."""
    data = {
        "experiment": "double-integrator",
        "schemes": [{"name": "MPC2", "t_s": 0.4, "t_d": 0.4}],
        "horizon": 2.0,
        "t_sim": 2.0,
        "disturbance": {"kind": "zero", "amplitude": 0.0},
    }
    data.update(overrides)
    return data


@pytest.fixture
def tiny_config():
    from hmpc.config import load_config

    return load_config(_tiny_config_data())


@pytest.fixture(scope="session")
def tiny_experiment():
    from hmpc.config import load_config
    from hmpc.experiments import run_experiment

    config = load_config(
        _tiny_config_data(
            schemes=[
                {"name": "HMPC", "t_s": 0.1, "t_d": 0.4},
                {"name": "MPC2", "t_s": 0.4, "t_d": 0.4},
            ]
        )
    )
    return run_experiment(config, workers=2)


@pytest.fixture
def config_data():
    """Factory for tiny experiment documents; keyword arguments override fields."""
    return _tiny_config_data
