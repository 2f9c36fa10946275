from __future__ import annotations

import copy as copylib

from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, TypeVar, Union

import numpy as np
import yaml

from .enums import DisturbanceKind, DynamicsMode
from .errors import ConfigError
from .learner import Controller, LearnerSchedule, value_basis, state_box
from .models import getLogger
from .polyalg import Box, Monomial
from .sdp import SdpOptions
from .sim import DisturbanceSignal, SimulationConfig, random_initial_state
from .traffic import (
    Equilibrium,
    FleetConfig,
    MixedTrafficModel,
    OvmParams,
    PerformanceWeights,
    assemble_model,
    spacing_index,
    velocity_index,
)


__all__ = (
    "RunConfig",
    "get_shipped_configs",
)


logger = getLogger(__name__)

TypeT = TypeVar("TypeT")
DataT = Dict[str, Any]


_default_config: DataT = {
    "fleet": {
        "n": 3,
        "cav_indices": [1],
        "v_star": 15.0,
        "s_st": 5.0,
        "s_go": 35.0,
        "v_max": 30.0,
        "hdv": {"alpha": 0.6, "beta": 0.9},
        # per-vehicle alpha/beta, keyed by the 1-based vehicle index
        "hdv_overrides": {},
        "baseline": {"alpha": 0.6, "beta": 0.9},
        "fit_degree": 5,
        "max_fit_error": 0.5,
    },
    "weights": {
        "theta_s": 0.03,
        "theta_v": 0.15,
        "theta_u": 1.0,
    },
    "learner": {
        "omega": {"spacing": 4.0, "velocity": 5.0},
        "basis": {"deg_min": 2, "deg_max": 4},
        # u_j = spacing * s_l + velocity * v_l for the CAV at index l
        "initial_controller": {"spacing": 0.5, "velocity": -1.0},
        "schedule": {
            "outer_max": 20,
            "inner_max": 15,
            "tol_inner": 1.0e-4,
            "tol_outer": 1.0e-3,
            "fixed_gamma": None,
            "gamma_margin": 1.0e-4,
            "localize": False,
            "prune": True,
        },
        "solver": {
            "tol_gap": 1.0e-7,
            "tol_feas": 1.0e-7,
            "max_iter": 200,
        },
    },
    "sim": {
        "dt": 0.01,
        "horizon": 30.0,
        "dynamics": "exact",
        # "zero", "random" or an explicit deviation vector
        "initial_state": "zero",
        "random_scale": 0.5,
        "peak_window": 10.0,
        "disturbance": {
            "kind": "sinusoid",
            "amplitude": 5.0,
            "rate": 20.0 / np.pi,
            "start": 0.0,
            "duration": 0.0,
            "times": [],
            "values": [],
        },
    },
    "output": {
        "directory": "out",
        "plots": True,
    },
}

# keys whose value may take a different type than their default
_LOOSE_KEYS = {"sim.initial_state", "learner.schedule.fixed_gamma"}
# mappings whose keys are user data rather than config names
_OPEN_MAPPINGS = {"fleet.hdv_overrides"}


def get_shipped_configs() -> List[Path]:
    """Return the paths of the example configs packaged with the toolkit."""
    configs_path = Path(__file__).parent.parent.resolve() / "configs"
    return sorted(configs_path.glob("*.yaml"))


@contextmanager
def _resolving(key: str) -> Iterator[None]:
    # domain constructors validate themselves; surface their complaints with the key
    try:
        yield
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(key, str(exc)) from exc


class RunConfig:
    """
    Represents a dictionary-like run configuration with every default pre-filled.

    Missing keys are resolved from the defaults, unknown keys are rejected with their
    dotted path, and the typed accessors build validated domain objects.

    Parameters
    -----------
    data : Optional[DataT]
        The user configuration, nested by section.
    defaults : Optional[DataT]
        A dictionary containing the default key value pairs. Defaults to the three-vehicle platoon.
    source : Optional[Path]
        File the data came from, for messages.
    """

    def __init__(
        self,
        data: Optional[DataT] = None,
        *,
        defaults: Optional[DataT] = None,
        source: Optional[Path] = None,
    ):
        if defaults is not None and not isinstance(defaults, dict):
            raise TypeError(
                "Invalid type for defaults parameter. "
                f"Expected dict, got {defaults.__class__.__name__} instead."
            )
        if data is not None and not isinstance(data, dict):
            raise ConfigError("<root>", f"Expected a mapping of sections, got {type(data).__name__} instead.")
        self.defaults: DataT = self.deepcopy(defaults if defaults is not None else _default_config)
        self.source: Optional[Path] = source
        self._cache: DataT = self.deepcopy(data) if data is not None else {}
        self._check_keys(self.defaults, self._cache)
        self._recursive_resolve_keys(self.defaults, self._cache)

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} source='{self.source}' sections={list(self._cache)}>"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RunConfig):
            return NotImplemented
        return self._cache == other._cache

    __hash__ = None

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        """
        Raises
        ------
        ConfigError
            The file is missing or is not valid YAML.
        """
        path = Path(path)
        if not path.is_file():
            raise ConfigError("<file>", f"Config file `{path}` not found.")
        with path.open(encoding="utf-8") as file:
            try:
                data = yaml.safe_load(file)
            except yaml.error.YAMLError as exc:
                raise ConfigError("<file>", "YAML parsing failed.") from exc
        return cls(data or {}, source=path)

    # <!-- dotted access -->

    def lookup(self, dotted: str) -> Any:
        """
        Returns the value at a dotted path such as `learner.schedule.outer_max`.
        """
        node: Any = self._cache
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(dotted, "No such key.")
            node = node[part]
        return node

    def override(self, dotted: str, value: Any) -> None:
        """
        Sets the value at a dotted path, checking it against the default's type.
        """
        parts = dotted.split(".")
        node: Any = self._cache
        default: Any = self.defaults
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(dotted, "No such key.")
            node, default = node[part], default[part]
        if parts[-1] not in default:
            raise ConfigError(dotted, "Unknown key.")
        node[parts[-1]] = self._coerce(dotted, default[parts[-1]], value)

    @staticmethod
    def deepcopy(obj: TypeT) -> TypeT:
        """
        Returns a deep copy of object.
        """
        return copylib.deepcopy(obj)

    def to_dict(self) -> DataT:
        return self.deepcopy(self._cache)

    def dump(self, path: Union[str, Path]) -> Path:
        """
        Writes the resolved configuration; loading it back yields an equal config.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as file:
            yaml.safe_dump(self._cache, file, sort_keys=False, default_flow_style=None)
        return path

    # <!-- resolution -->

    def _coerce(self, key: str, default: Any, value: Any) -> Any:
        if key in _LOOSE_KEYS or default is None:
            return value
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(key, f"Expected true or false, got {value!r}.")
            return value
        if isinstance(default, float):
            if isinstance(value, str):
                # YAML 1.1 reads `1e-4` as a string
                try:
                    return float(value)
                except ValueError:
                    pass
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(key, f"Expected a number, got {value!r}.")
            return float(value)
        if isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(key, f"Expected an integer, got {value!r}.")
            return value
        if not isinstance(value, type(default)):
            raise ConfigError(key, f"Expected {type(default).__name__}, got {type(value).__name__}.")
        return value

    def _check_keys(
        self, base: DataT, data: DataT, prefix: str = "", depth: int = 0, max_depth: int = 10
    ) -> None:
        if depth > max_depth:
            raise ValueError("Maximum depth of recursion reached.")
        for key in list(data):
            dotted = f"{prefix}{key}"
            if key not in base:
                raise ConfigError(dotted, "Unknown key.")
            if isinstance(base[key], dict) and dotted not in _OPEN_MAPPINGS:
                if not isinstance(data[key], dict):
                    raise ConfigError(dotted, f"Expected a section, got {type(data[key]).__name__}.")
                self._check_keys(base[key], data[key], f"{dotted}.", depth + 1)
            else:
                data[key] = self._coerce(dotted, base[key], data[key])

    def _recursive_resolve_keys(
        self,
        base: Dict[str, Any],
        data: Dict[str, Any],
        *,
        depth: Optional[int] = None,
        max_depth: int = 10,
    ) -> None:
        """
        Copies every key of the base data that the compared data lacks, nested
        dictionaries included.

        Raises
        -----
        ValueError
            Maximum depth of recursion has reached.
        """
        if depth is None:
            depth = 0
        if depth > max_depth:
            # a check to break the recursion
            raise ValueError("Maximum depth of recursion reached.")
        for key, value in base.items():
            if key not in data:
                data[key] = self.deepcopy(value)
                continue
            if isinstance(value, dict):
                self._recursive_resolve_keys(value, data[key], depth=depth + 1)

    # <!-- typed accessors -->

    def _ovm(self, key: str, entry: Dict[str, Any]) -> OvmParams:
        fleet = self._cache["fleet"]
        with _resolving(key):
            extra = set(entry) - {"alpha", "beta"}
            if extra:
                raise ConfigError(f"{key}.{sorted(extra)[0]}", "Unknown key.")
            return OvmParams(
                float(entry["alpha"]), float(entry["beta"]), fleet["s_st"], fleet["s_go"], fleet["v_max"]
            )

    def fleet(self) -> FleetConfig:
        data = self._cache["fleet"]
        baseline = self._ovm("fleet.baseline", data["baseline"])
        hdv = self._ovm("fleet.hdv", data["hdv"])
        overrides = {}
        for raw, entry in data["hdv_overrides"].items():
            key = f"fleet.hdv_overrides.{raw}"
            with _resolving(key):
                overrides[int(raw)] = self._ovm(key, dict(data["hdv"], **entry))
        with _resolving("fleet.cav_indices"):
            cavs = [int(i) for i in data["cav_indices"]]
            stray = set(overrides) & set(cavs)
            if stray:
                raise ConfigError(f"fleet.hdv_overrides.{min(stray)}", "Vehicle is a CAV.")
            params = {i: overrides.get(i, hdv) for i in range(1, data["n"] + 1) if i not in cavs}
            return FleetConfig(data["n"], tuple(cavs), params, baseline)

    def equilibrium(self) -> Equilibrium:
        with _resolving("fleet.v_star"):
            return Equilibrium.from_velocity(self._cache["fleet"]["v_star"], self.fleet().baseline_params)

    def model(self) -> MixedTrafficModel:
        data = self._cache["fleet"]
        fleet, eq = self.fleet(), self.equilibrium()
        with _resolving("fleet.fit_degree"):
            return assemble_model(
                fleet,
                eq,
                data["fit_degree"],
                spacing_bound=self._cache["learner"]["omega"]["spacing"],
                max_fit_error=data["max_fit_error"],
            )

    def weights(self) -> PerformanceWeights:
        data = self._cache["weights"]
        with _resolving("weights"):
            return PerformanceWeights(data["theta_s"], data["theta_v"], data["theta_u"])

    def box(self) -> Box:
        omega = self._cache["learner"]["omega"]
        with _resolving("learner.omega"):
            return state_box(self._cache["fleet"]["n"], omega["spacing"], omega["velocity"])

    def value_basis(self) -> List[Monomial]:
        basis = self._cache["learner"]["basis"]
        with _resolving("learner.basis"):
            return value_basis(2 * self._cache["fleet"]["n"], basis["deg_min"], basis["deg_max"])

    def initial_controller(self) -> Controller:
        gains = self._cache["learner"]["initial_controller"]
        fleet = self.fleet()
        K = np.zeros((fleet.m, 2 * fleet.n))
        for j, i in enumerate(fleet.cav_indices):
            K[j, spacing_index(i)] = gains["spacing"]
            K[j, velocity_index(i)] = gains["velocity"]
        return Controller.linear(K)

    def schedule(self) -> LearnerSchedule:
        data = self._cache["learner"]["schedule"]
        solver = self._cache["learner"]["solver"]
        with _resolving("learner.solver"):
            options = SdpOptions(
                tol_gap=solver["tol_gap"], tol_feas=solver["tol_feas"], max_iter=solver["max_iter"]
            )
        with _resolving("learner.schedule"):
            fixed = data["fixed_gamma"]
            return LearnerSchedule(
                outer_max=data["outer_max"],
                inner_max=data["inner_max"],
                tol_inner=data["tol_inner"],
                tol_outer=data["tol_outer"],
                fixed_gamma=None if fixed is None else float(fixed),
                gamma_margin=data["gamma_margin"],
                localize=data["localize"],
                prune=data["prune"],
                sdp=options,
            )

    def disturbance(self) -> DisturbanceSignal:
        data = self._cache["sim"]["disturbance"]
        kind = DisturbanceKind.from_value(data["kind"])
        with _resolving("sim.disturbance"):
            if kind is DisturbanceKind.SINUSOID:
                return DisturbanceSignal.sinusoid(data["amplitude"], data["rate"])
            if kind is DisturbanceKind.CONSTANT:
                return DisturbanceSignal.constant(data["amplitude"])
            if kind is DisturbanceKind.BRAKING_PULSE:
                return DisturbanceSignal.braking_pulse(data["amplitude"], data["start"], data["duration"])
            if kind is DisturbanceKind.CUSTOM:
                return DisturbanceSignal.custom(data["times"], data["values"])
        raise ConfigError("sim.disturbance.kind", f"Unknown disturbance kind {data['kind']!r}.")

    def dynamics(self) -> DynamicsMode:
        mode = DynamicsMode.from_value(self._cache["sim"]["dynamics"])
        if mode is DynamicsMode.INVALID:
            raise ConfigError("sim.dynamics", "Expected `exact` or `approximated`.")
        return mode

    def simulation_config(self, seed: Optional[int] = None) -> SimulationConfig:
        data = self._cache["sim"]
        initial = data["initial_state"]
        with _resolving("sim.initial_state"):
            if initial == "zero":
                state = None
            elif initial == "random":
                rng = np.random.default_rng(seed)
                state = tuple(random_initial_state(self.box(), rng, data["random_scale"]))
            elif isinstance(initial, list):
                state = tuple(float(v) for v in initial)
                if len(state) != 2 * self._cache["fleet"]["n"]:
                    raise ValueError(f"Expected {2 * self._cache['fleet']['n']} values, got {len(state)}.")
            else:
                raise ValueError("Expected `zero`, `random` or a list of deviations.")
        with _resolving("sim"):
            return SimulationConfig(data["dt"], data["horizon"], state)

    def output_directory(self) -> Path:
        return Path(self._cache["output"]["directory"])

    def validate(self) -> None:
        """
        Builds every domain object once so that configuration errors surface before any work.
        """
        self.model()
        self.weights()
        self.box()
        self.value_basis()
        self.initial_controller()
        self.schedule()
        self.disturbance()
        self.dynamics()
        self.simulation_config(seed=0)
