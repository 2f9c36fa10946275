import numpy as np
import pytest

from hinfplatoon.core.config import RunConfig, get_shipped_configs
from hinfplatoon.core.enums import DisturbanceKind, DynamicsMode
from hinfplatoon.core.errors import ConfigError


def config_error(data) -> ConfigError:
    with pytest.raises(ConfigError) as info:
        RunConfig(data).validate()
    return info.value


class TestDefaults:
    def test_small_platoon(self):
        config = RunConfig()
        assert config.lookup("fleet.n") == 3
        assert config.lookup("learner.schedule.tol_inner") == 1e-4
        fleet = config.fleet()
        assert fleet.cav_indices == (1,)
        assert config.equilibrium().s_star == pytest.approx(20.0)

    def test_typed_accessors(self):
        config = RunConfig()
        config.validate()
        assert len(config.value_basis()) == 203
        assert config.box().upper == pytest.approx((4.0, 5.0) * 3)
        assert config.schedule().outer_max == 20
        assert config.dynamics() is DynamicsMode.EXACT
        assert config.disturbance().kind is DisturbanceKind.SINUSOID
        assert config.simulation_config().initial_state is None
        np.testing.assert_array_equal(config.initial_controller().gains(), [[0.5, -1.0, 0, 0, 0, 0]])

    def test_partial_sections_are_filled(self):
        config = RunConfig({"learner": {"schedule": {"outer_max": 3}}})
        assert config.schedule().outer_max == 3
        assert config.schedule().inner_max == 15
        assert config.lookup("sim.dt") == 0.01


class TestValidation:
    @pytest.mark.parametrize(
        "data, key",
        [
            ({"fleet": {"bogus": 1}}, "fleet.bogus"),
            ({"solver": {}}, "solver"),
            ({"learner": {"schedule": {"outer_max": "ten"}}}, "learner.schedule.outer_max"),
            ({"learner": {"schedule": {"localize": "yes"}}}, "learner.schedule.localize"),
            ({"sim": {"dt": [0.1]}}, "sim.dt"),
            ({"fleet": {"hdv": 0.6}}, "fleet.hdv"),
            ({"fleet": {"hdv": {"gamma": 0.1}}}, "fleet.hdv.gamma"),
        ],
    )
    def test_rejected_keys_are_named(self, data, key):
        assert config_error(data).key == key

    @pytest.mark.parametrize(
        "data, key",
        [
            ({"fleet": {"cav_indices": [4]}}, "fleet.cav_indices"),
            ({"fleet": {"v_star": 40.0}}, "fleet.v_star"),
            ({"fleet": {"fit_degree": 0}}, "fleet.fit_degree"),
            ({"learner": {"basis": {"deg_min": 1}}}, "learner.basis"),
            ({"learner": {"schedule": {"outer_max": 0}}}, "learner.schedule"),
            ({"sim": {"dynamics": "fast"}}, "sim.dynamics"),
            ({"sim": {"disturbance": {"kind": "gust"}}}, "sim.disturbance.kind"),
            ({"sim": {"initial_state": [1.0, 2.0]}}, "sim.initial_state"),
            ({"weights": {"theta_u": 0.0}}, "weights"),
        ],
    )
    def test_invalid_values_are_named(self, data, key):
        assert config_error(data).key == key

    def test_root_must_be_mapping(self):
        with pytest.raises(ConfigError):
            RunConfig([1, 2])

    def test_float_strings_are_coerced(self):
        config = RunConfig({"learner": {"schedule": {"tol_inner": "1e-4"}}})
        assert config.lookup("learner.schedule.tol_inner") == 1e-4

    def test_integers_promote_to_floats(self):
        config = RunConfig({"sim": {"horizon": 10}})
        assert isinstance(config.lookup("sim.horizon"), float)


class TestFleetOverrides:
    def test_hdv_override(self):
        config = RunConfig({"fleet": {"hdv_overrides": {2: {"alpha": 0.4}}}})
        fleet = config.fleet()
        assert fleet.params_for(2).alpha == 0.4
        assert fleet.params_for(2).beta == 0.9
        assert fleet.params_for(3).alpha == 0.6

    def test_override_on_cav(self):
        assert config_error({"fleet": {"hdv_overrides": {1: {"alpha": 0.4}}}}).key == "fleet.hdv_overrides.1"


class TestAccess:
    def test_override(self):
        config = RunConfig()
        config.override("sim.horizon", 5)
        assert config.lookup("sim.horizon") == 5.0
        with pytest.raises(ConfigError):
            config.override("sim.nothing", 1)
        with pytest.raises(ConfigError):
            config.override("sim.horizon", "long")

    def test_lookup_unknown(self):
        with pytest.raises(ConfigError) as info:
            RunConfig().lookup("fleet.missing")
        assert info.value.key == "fleet.missing"

    def test_random_initial_state_is_seeded(self):
        config = RunConfig({"sim": {"initial_state": "random"}})
        a = config.simulation_config(seed=3).initial_state
        b = config.simulation_config(seed=3).initial_state
        assert a == b
        assert np.all(np.abs(a) <= 0.5 * np.asarray(config.box().upper))

    def test_explicit_initial_state(self):
        config = RunConfig({"sim": {"initial_state": [0.1, 0.0, 0.0, 0.0, 0.0, 0.0]}})
        assert config.simulation_config().initial_state == (0.1, 0.0, 0.0, 0.0, 0.0, 0.0)


class TestFiles:
    def test_echo_round_trip(self, tmp_path):
        config = RunConfig({"fleet": {"n": 4, "cav_indices": [1, 3]}, "sim": {"horizon": 12.5}})
        path = config.dump(tmp_path / "echo" / "config.resolved.yaml")
        assert RunConfig.from_file(path) == config

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            RunConfig.from_file(tmp_path / "nope.yaml")
        assert info.value.key == "<file>"

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("fleet: [1, 2\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            RunConfig.from_file(path)

    def test_empty_file_uses_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("", encoding="utf-8")
        assert RunConfig.from_file(path) == RunConfig()

    def test_shipped_configs_validate(self):
        shipped = get_shipped_configs()
        assert {p.stem for p in shipped} == {"small_platoon", "moderate_platoon"}
        for path in shipped:
            RunConfig.from_file(path).validate()

    def test_moderate_fleet(self):
        (path,) = [p for p in get_shipped_configs() if p.stem == "moderate_platoon"]
        fleet = RunConfig.from_file(path).fleet()
        assert fleet.n == 15
        assert fleet.cav_indices == (1, 4, 7, 10, 13)
