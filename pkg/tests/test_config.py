import json
import math

import pytest

from hmpc.charts import SPARK_BLOCKS, spark_chart
from hmpc.config import (
    LaneChangeParams,
    SchemeConfig,
    SolverConfig,
    load_config,
    parse_config,
)
from hmpc.errors import ConfigError
from hmpc.utils import format_ms, format_ratio, parse_angle, parse_grid, parse_seconds


def minimal(**overrides):
    data = {
        "experiment": "double-integrator",
        "schemes": [{"name": "MPC2", "t_s": 0.4, "t_d": 0.4}],
    }
    data.update(overrides)
    return data


class TestParsing:
    def test_angles(self):
        assert parse_angle("7deg") == pytest.approx(math.radians(7.0))
        assert parse_angle("-35 deg") == pytest.approx(math.radians(-35.0))
        assert parse_angle("4°") == pytest.approx(math.radians(4.0))
        assert parse_angle("0.12") == 0.12
        assert parse_angle(1) == 1.0
        with pytest.raises(ValueError):
            parse_angle("seven degrees")

    def test_seconds(self):
        assert parse_seconds("20ms") == pytest.approx(0.02)
        assert parse_seconds("0.4s") == 0.4
        assert parse_seconds("0.4") == 0.4
        for bad in ("0", -1.0, "inf", "soon"):
            with pytest.raises(ValueError):
                parse_seconds(bad)

    def test_grid(self):
        assert parse_grid("0.4,0.2, 100ms") == pytest.approx([0.4, 0.2, 0.1])
        with pytest.raises(ValueError, match="Empty"):
            parse_grid(" , ")

    def test_formatting(self):
        assert format_ms(0.01234) == "12.34 ms"
        assert format_ratio(12.34) == "12.3x"
        assert format_ratio(None) == "n/a"
        assert format_ratio(math.inf) == "n/a"


class TestSparkChart:
    def test_empty_and_flat(self):
        assert spark_chart([]) == ""
        assert spark_chart([1.0, 1.0, 1.0]) == SPARK_BLOCKS[4] * 3

    def test_rising_values_span_the_blocks(self):
        chart = spark_chart([0.0, 1.0, 2.0, 3.0])
        assert chart[0] == SPARK_BLOCKS[0]
        assert chart[-1] == SPARK_BLOCKS[-1]

    def test_width_and_log_scale(self):
        assert len(spark_chart(list(range(100)), width=10)) == 10
        chart = spark_chart([1.0, 1e-2, 1e-4, 0.0], log=True)
        assert len(chart) == 4
        assert chart[0] == SPARK_BLOCKS[-1]
        assert spark_chart([math.inf, math.nan]) == ""


class TestSchemes:
    def test_labels(self):
        assert SchemeConfig(name="HMPC", t_s=0.02, t_d=0.4).label == "HMPC"
        assert SchemeConfig(name="fast", t_s=0.02, t_d=0.4).label == "custom"
        assert SchemeConfig(name="fast", t_s="20ms", t_d="0.4s", kind="HMPC").t_s == pytest.approx(0.02)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(name="x", t_s=0.4, t_d=0.2),
            dict(name="MPC1", t_s=0.02, t_d=0.4),
            dict(name="HMPC", t_s=0.4, t_d=0.4),
            dict(name="x", t_s=0.0, t_d=0.4),
        ],
    )
    def test_invalid_schemes(self, kwargs):
        with pytest.raises(ValueError):
            SchemeConfig(**kwargs)


class TestExperimentConfig:
    def test_defaults(self):
        cfg = load_config(minimal())
        assert cfg.horizon == 2.0
        assert cfg.t_sim == 20.0
        assert cfg.disturbance.kind == "random"
        assert cfg.disturbance.amplitude == 0.5
        assert cfg.solver.discretization == "exact"
        assert cfg.model_params().x1_max == 2.0

    @pytest.mark.parametrize(
        "overrides",
        [
            {"schemes": []},
            {"schemes": [{"name": "a", "t_s": 0.4, "t_d": 0.4}, {"name": "a", "t_s": 0.2, "t_d": 0.2}]},
            {"schemes": [{"name": "a", "t_s": 0.3, "t_d": 0.3}]},
            {"t_sim": 0.2},
            {"experiment": "custom-model-path"},
            {"params": {"x1_max": -1.0}},
            {"params": {"unknown": 1}},
            {"solver": {"qp_tol": 0}},
            {"surprise": True},
        ],
    )
    def test_invalid_documents(self, overrides):
        with pytest.raises(ConfigError):
            load_config(minimal(**overrides))

    def test_parse_config_errors(self):
        with pytest.raises(ConfigError, match="Invalid JSON"):
            parse_config("{not json")
        with pytest.raises(ConfigError, match="object"):
            parse_config("[1, 2]")

    def test_lane_change_angles_in_degrees(self):
        cfg = load_config(
            minimal(
                experiment="lane-change",
                schemes=[{"name": "MPC2", "t_s": 0.2, "t_d": 0.2}],
                params={"psi_max": "7deg", "delta_r_max": 0.05},
            )
        )
        params = cfg.model_params()
        assert isinstance(params, LaneChangeParams)
        assert params.psi_max == pytest.approx(math.radians(7.0))
        assert params.delta_r_max == 0.05

    def test_custom_params_shapes(self):
        params = {
            "x_lower": [-1.0, None],
            "x_upper": [1.0, None],
            "u_lower": [-1.0],
            "u_upper": [1.0],
            "Q": [1.0, 1.0],
            "R": [1.0],
            "x0": [0.5, 0.0],
        }
        cfg = load_config(minimal(experiment="custom-model-path", model_path="model.py", params=params))
        assert cfg.model_params().x_lower == [-1.0, None]

        params["R"] = [1.0, 1.0]
        with pytest.raises(ConfigError):
            load_config(minimal(experiment="custom-model-path", model_path="model.py", params=params))

    def test_overrides_and_resolved(self):
        cfg = load_config(minimal())
        changed = cfg.with_overrides(seed=7, output_dir="elsewhere")
        assert changed.disturbance.seed == 7
        assert changed.seeds == [7]
        assert changed.output_dir == "elsewhere"
        assert cfg.disturbance.seed == 0

        resolved = cfg.resolved()
        assert resolved["params"]["R"] == 0.04
        assert resolved["schemes"][0]["t_d"] == 0.4

    def test_studies(self):
        cfg = load_config(
            minimal(
                schemes=[{"name": "HMPC", "t_s": 0.1, "t_d": 0.4}],
                iss={"bounds": [0.0, 0.1]},
                gain={"t_d_grid": [0.4, "200ms"], "t_d_ref": 0.05},
            )
        )
        assert cfg.iss.scheme == "HMPC"
        assert cfg.iss.hold_time == 0.5
        assert cfg.gain.t_d_grid == [0.4, 0.2]
        assert cfg.gain.n_states == 100
        assert cfg.resolved()["gain"]["t_d_ref"] == 0.05
        assert load_config(minimal()).iss is None

    @pytest.mark.parametrize(
        "overrides",
        [
            {"iss": {"scheme": "MISSING"}},
            {"iss": {"scheme": "MPC2", "bounds": [-0.1]}},
            {"gain": {"t_d_grid": [0.4], "t_d_ref": 0.5}},
            {"gain": {"t_d_grid": [0.3], "t_d_ref": 0.01}},
            {"gain": {"half_widths": [1.0, 0.0]}},
            {"seeds": []},
        ],
    )
    def test_invalid_studies(self, overrides):
        with pytest.raises(ConfigError):
            load_config(minimal(**overrides))

    def test_comparison_document_replays_its_config(self):
        cfg = load_config(minimal(seeds=[3, 4], iss={"scheme": "MPC2"}))
        document = {"schemes": {}, "ts_ratio": {}, "realtime_criterion": "", "config": cfg.resolved()}
        replayed = parse_config(json.dumps(document))
        assert replayed.resolved() == cfg.resolved()
        assert replayed.seeds == [3, 4]

        with pytest.raises(ConfigError):
            load_config({"config": cfg.resolved()})


def test_substeps_rule():
    solver = SolverConfig()
    assert solver.substeps_for(0.02) == 1
    assert solver.substeps_for(0.05) == 1
    assert solver.substeps_for(0.2) == 1
    assert solver.substeps_for(0.4) == 2
    assert SolverConfig(rk4_substeps=3).substeps_for(0.2) == 3
