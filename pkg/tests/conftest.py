from __future__ import annotations

from typing import List, NamedTuple

import pytest

from hinfplatoon.core.learner import (
    Controller,
    LearnerSchedule,
    LearningResult,
    OuterRound,
    run,
    state_box,
    value_basis,
)
from hinfplatoon.core.polyalg import Box
from hinfplatoon.core.traffic import (
    Equilibrium,
    FleetConfig,
    MixedTrafficModel,
    OvmParams,
    PerformanceWeights,
    assemble_model,
)


@pytest.fixture(scope="session")
def ovm() -> OvmParams:
    return OvmParams()


@pytest.fixture(scope="session")
def equilibrium(ovm) -> Equilibrium:
    return Equilibrium.from_velocity(15.0, ovm)


@pytest.fixture(scope="session")
def weights() -> PerformanceWeights:
    return PerformanceWeights()


@pytest.fixture(scope="session")
def small_fleet(ovm) -> FleetConfig:
    return FleetConfig.uniform(3, (1,), ovm)


@pytest.fixture(scope="session")
def small_model(small_fleet, equilibrium) -> MixedTrafficModel:
    return assemble_model(small_fleet, equilibrium)


@pytest.fixture(scope="session")
def linear_model(small_fleet, equilibrium) -> MixedTrafficModel:
    return assemble_model(small_fleet, equilibrium, fit_degree=1)


@pytest.fixture(scope="session")
def small_box() -> Box:
    return state_box(3)


@pytest.fixture(scope="session")
def initial_controller() -> Controller:
    # u = 0.5 s_1 - 1.0 v_1
    return Controller.linear([[0.5, -1.0, 0.0, 0.0, 0.0, 0.0]])


class LearnedRun(NamedTuple):
    result: LearningResult
    rounds: List[OuterRound]


@pytest.fixture(scope="session")
def learned(small_model, weights, small_box, initial_controller) -> LearnedRun:
    """
    Twenty outer rounds of five evaluations each with a quadratic value function.
    """
    rounds: List[OuterRound] = []
    schedule = LearnerSchedule(outer_max=20, inner_max=5, tol_outer=0.0)
    result = run(
        small_model,
        weights,
        small_box,
        value_basis(6, 2, 2),
        initial_controller,
        schedule,
        on_round=rounds.append,
    )
    return LearnedRun(result, rounds)
