import csv

import numpy as np
import pytest

from hinfplatoon.core.errors import ScheduleError, SolverError
from hinfplatoon.core.learner import (
    AttenuationLevel,
    Controller,
    IterationLog,
    IterationRecord,
    LearnerSchedule,
    ValueFunction,
    gap_identity_check,
    negative_hamiltonian,
    optimize_attenuation,
    policy_evaluation,
    policy_improvement,
    run,
    stability_polynomial,
    state_box,
    value_basis,
)
from hinfplatoon.core.enums import SolveStatus
from hinfplatoon.core.polyalg import AffinePoly, Polynomial
from hinfplatoon.core.sosprog import SosProgram
from hinfplatoon.core.traffic import Equilibrium, FleetConfig, OvmParams, assemble_model
from oracles import closed_loop, game_riccati, hinf_norm, newton_riccati, quadratic_coefficients, sweep_gain


def random_value(nvars: int, seed: int, deg_max: int = 4) -> ValueFunction:
    basis = value_basis(nvars, 2, deg_max)
    rng = np.random.default_rng(seed)
    return ValueFunction(tuple(basis), rng.normal(size=len(basis)))


def quadratic_value(P: np.ndarray) -> ValueFunction:
    basis = value_basis(P.shape[0], 2, 2)
    return ValueFunction(tuple(basis), quadratic_coefficients(P, basis))


class TestValueFunction:
    def test_basis(self):
        assert len(value_basis(6)) == 203
        assert value_basis(2, 2, 2) == [(2, 0), (1, 1), (0, 2)]

    @pytest.mark.parametrize("deg_min, deg_max", [(1, 2), (0, 4), (3, 2)])
    def test_invalid_basis(self, deg_min, deg_max):
        with pytest.raises(ValueError):
            value_basis(2, deg_min, deg_max)

    def test_constant_monomial_rejected(self):
        with pytest.raises(ValueError):
            ValueFunction(((0, 0), (2, 0)), np.ones(2))

    def test_coefficient_count(self):
        with pytest.raises(ValueError):
            ValueFunction(((2, 0), (0, 2)), np.ones(3))

    def test_from_polynomial(self):
        a, b = Polynomial.variable(2, 0), Polynomial.variable(2, 1)
        V = ValueFunction.from_polynomial(a**2 + 3 * a * b, value_basis(2, 2, 2))
        np.testing.assert_array_equal(V.coeffs, [1.0, 3.0, 0.0])
        assert V([1.0, 1.0]) == 4.0
        with pytest.raises(ValueError):
            ValueFunction.from_polynomial(a**3, value_basis(2, 2, 2))

    def test_payload(self):
        V = random_value(3, seed=2)
        again = ValueFunction.from_payload(V.to_payload())
        assert again.basis == V.basis
        np.testing.assert_array_equal(again.coeffs, V.coeffs)

    def test_integral(self):
        V = quadratic_value(np.eye(2))
        # int over [-4, 4] x [-5, 5] of s^2 + v^2
        box = state_box(1)
        assert V.integral(box) == pytest.approx(10 * 128 / 3 + 8 * 250 / 3)


class TestController:
    def test_linear(self, initial_controller):
        np.testing.assert_array_equal(initial_controller.gains(), [[0.5, -1.0, 0, 0, 0, 0]])
        assert initial_controller([2.0, 1.0, 0, 0, 0, 0])[0] == pytest.approx(0.0)
        assert initial_controller.degree == 1

    def test_nonzero_at_origin(self):
        comp = Polynomial.linear([1.0, 0.0]) + 1.0
        with pytest.raises(ValueError):
            Controller((comp,))

    def test_mixed_dimensions(self):
        with pytest.raises(ValueError):
            Controller((Polynomial.linear([1.0, 0.0]), Polynomial.linear([1.0])))

    def test_payload(self, initial_controller):
        again = Controller.from_payload(6, initial_controller.to_payload())
        assert again == initial_controller

    def test_attenuation_level(self):
        assert AttenuationLevel.from_gamma(2.0).gamma_sq == 4.0
        for bad in (0.0, -1.0, float("inf")):
            with pytest.raises(ValueError):
                AttenuationLevel(bad)


class TestNegativeHamiltonian:
    def test_zero_value_and_input(self, small_model, weights):
        V = ValueFunction(tuple(value_basis(6, 2, 2)), np.zeros(21))
        u = Controller.zero(1, 6)
        L = negative_hamiltonian(V, u, 4.0, small_model, weights)
        assert isinstance(L, Polynomial)
        states = [Polynomial.variable(7, i) for i in range(6)]
        q = np.diag(weights.Q(3))
        expected = Polynomial.variable(7, 6) ** 2 * 4.0
        for i, x_i in enumerate(states):
            expected = expected - x_i * x_i * float(q[i])
        assert L.is_close(expected, atol=1e-15)

    def test_input_penalty(self, small_model, weights, initial_controller):
        V = ValueFunction(tuple(value_basis(6, 2, 2)), np.zeros(21))
        L = negative_hamiltonian(V, initial_controller, 1.0, small_model, weights)
        point = [2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        # only -x'Qx - u'Ru survives: u = 1
        assert L.evaluate(point) == pytest.approx(-(weights.theta_s**2) * 4.0 - 1.0)

    def test_decision_gamma(self, small_model, weights, initial_controller):
        program = SosProgram()
        gamma_sq = program.declare_scalar()
        V = quadratic_value(np.eye(6))
        L = negative_hamiltonian(V, initial_controller, gamma_sq, small_model, weights)
        assert isinstance(L, AffinePoly)
        assert L.decision_variables() == [gamma_sq.index]

    def test_quadratic_value_matches_matrix_form(self, linear_model, weights, initial_controller):
        rng = np.random.default_rng(23)
        M = rng.normal(size=(6, 6))
        P = M @ M.T
        V = quadratic_value(P)
        A, B, E = linear_model.linearization()
        K = initial_controller.gains()
        L = negative_hamiltonian(V, initial_controller, 2.0, linear_model, weights)
        for _ in range(5):
            x = rng.normal(size=6)
            w = rng.normal()
            dx = (A + B @ K) @ x + E[:, 0] * w
            u = K @ x
            expected = -2 * x @ P @ dx - x @ weights.Q(3) @ x - u @ u + 2.0 * w**2
            assert L.evaluate(np.append(x, w)) == pytest.approx(expected, rel=1e-9, abs=1e-9)

    def test_stability_polynomial_is_hamiltonian_at_zero_disturbance(
        self, small_model, weights, initial_controller
    ):
        V = random_value(6, seed=4)
        full = negative_hamiltonian(V, initial_controller, 3.0, small_model, weights)
        reduced = stability_polynomial(V, initial_controller, small_model, weights)
        x = np.random.default_rng(4).normal(size=6)
        assert reduced.evaluate(x) == pytest.approx(full.evaluate(np.append(x, 0.0)), rel=1e-12)

    def test_dimension_mismatch(self, small_model, weights):
        V = random_value(4, seed=1, deg_max=2)
        with pytest.raises(ValueError):
            negative_hamiltonian(V, Controller.zero(1, 6), 1.0, small_model, weights)
        with pytest.raises(ValueError):
            V6 = random_value(6, seed=1, deg_max=2)
            negative_hamiltonian(V6, Controller.zero(2, 6), 1.0, small_model, weights)


class TestPolicyImprovement:
    def test_quadratic_value_gives_riccati_gain(self, small_model, weights):
        rng = np.random.default_rng(9)
        M = rng.normal(size=(6, 6))
        P = M @ M.T
        u = policy_improvement(quadratic_value(P), small_model, weights)
        expected = -np.linalg.solve(weights.R(1), small_model.g.T @ P)
        np.testing.assert_allclose(u.gains(), expected, atol=1e-12)
        assert u.degree == 1

    def test_quartic_value_gives_cubic_controller(self, small_model, weights):
        u = policy_improvement(random_value(6, seed=3), small_model, weights)
        assert u.m == 1
        assert u.degree == 3
        assert u(np.zeros(6))[0] == 0.0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("gamma_sq", [0.5, 4.0])
    def test_gap_identity(self, small_model, weights, initial_controller, seed, gamma_sq):
        V = random_value(6, seed=seed)
        u_new = policy_improvement(V, small_model, weights)
        residual = gap_identity_check(V, u_new, initial_controller, gamma_sq, small_model, weights)
        assert residual <= 1e-9

    def test_gap_identity_detects_other_controllers(self, small_model, weights, initial_controller):
        V = random_value(6, seed=5)
        other = Controller.linear([[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]])
        assert gap_identity_check(V, other, initial_controller, 1.0, small_model, weights) > 1e-3


class TestSchedule:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"outer_max": 0},
            {"inner_max": 0},
            {"tol_inner": -1e-4},
            {"tol_outer": -1.0},
            {"gamma_margin": -0.1},
            {"fixed_gamma": 0.0},
            {"fixed_gamma": -2.0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ScheduleError):
            LearnerSchedule(**kwargs)

    def test_defaults(self):
        schedule = LearnerSchedule()
        assert schedule.outer_max == 20
        assert schedule.inner_max == 15
        assert schedule.tol_inner == 1e-4
        assert schedule.prune


class TestIterationLog:
    def test_rounds_and_gammas(self):
        log = IterationLog()
        log.append(IterationRecord(1, 0, "attenuation", 4.0, 3.0, SolveStatus.OPTIMAL))
        log.append(IterationRecord(1, 1, "evaluation", 4.0, 2.0, SolveStatus.OPTIMAL))
        log.close_round(1, 4.0)
        log.append(IterationRecord(2, 0, "attenuation", 2.25, 1.5, SolveStatus.OPTIMAL))
        log.close_round(2, 2.25)
        assert log.rounds == [1, 2]
        assert log.gammas() == pytest.approx([2.0, 1.5])
        assert log.inner_objectives(1) == [3.0, 2.0]
        assert len(log) == 3

    def test_csv(self, tmp_path):
        log = IterationLog()
        log.append(IterationRecord(1, 0, "attenuation", 4.0, 3.0, SolveStatus.OPTIMAL, seconds=0.5))
        path = tmp_path / "log.csv"
        log.to_csv(path)
        header, row = path.read_text(encoding="utf-8").strip().splitlines()
        assert header.startswith("outer,inner")
        assert row.startswith("1,0,attenuation")

    def test_csv_marks_loose_certificates(self, tmp_path):
        log = IterationLog()
        log.append(IterationRecord(1, 0, "attenuation", 4.0, 3.0, SolveStatus.OPTIMAL))
        log.append(
            IterationRecord(1, 1, "evaluation", 4.0, 2.0, SolveStatus.OPTIMAL, inaccurate=True, sdp_gap=2e-3)
        )
        path = tmp_path / "log.csv"
        log.to_csv(path)
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert [r["inaccurate"] for r in rows] == ["false", "true"]
        assert float(rows[1]["sdp_gap"]) == 2e-3
        assert float(rows[0]["sdp_gap"]) == 0.0


class TestSynthesisOnLinearModel:
    """
    With a linear fit the drift is linear and a quadratic value function is exact, so the
    programs reduce to the bounded-real lemma and the game Riccati equation.
    """

    def test_attenuation_matches_hinf_norm(self, linear_model, weights, initial_controller):
        A_cl, E, C = closed_loop(linear_model, weights, initial_controller.gains())
        expected = hinf_norm(A_cl, E, C)
        level, V = optimize_attenuation(
            initial_controller, value_basis(6, 2, 2), state_box(3), linear_model, weights
        )
        assert level.gamma == pytest.approx(expected, rel=0.05)
        points = np.random.default_rng(8).normal(size=(50, 6))
        assert np.all(V.evaluate_many(points) >= -1e-6)

    def test_evaluation_below_attenuation_fails(self, linear_model, weights, initial_controller):
        A_cl, E, C = closed_loop(linear_model, weights, initial_controller.gains())
        too_small = AttenuationLevel.from_gamma(0.5 * hinf_norm(A_cl, E, C))
        with pytest.raises(SolverError):
            policy_evaluation(
                initial_controller, too_small, None, state_box(3), value_basis(6, 2, 2), linear_model, weights
            )

    def test_riccati_limit(self, linear_model, weights, initial_controller):
        A_cl, E, C = closed_loop(linear_model, weights, initial_controller.gains())
        gamma = 1.1 * hinf_norm(A_cl, E, C)
        basis = value_basis(6, 2, 2)
        schedule = LearnerSchedule(fixed_gamma=gamma, inner_max=20, tol_inner=1e-10)
        result = run(linear_model, weights, state_box(3), basis, initial_controller, schedule)

        P = game_riccati(linear_model, weights, gamma)
        P_newton = newton_riccati(linear_model, weights, gamma, initial_controller.gains())
        np.testing.assert_allclose(P_newton, P, rtol=1e-6, atol=1e-9)

        expected = quadratic_coefficients(P, basis)
        error = np.linalg.norm(result.value.coeffs - expected) / np.linalg.norm(expected)
        assert error <= 1e-3

        K_opt = -np.linalg.solve(weights.R(1), linear_model.g.T @ P)
        np.testing.assert_allclose(result.controller.gains(), K_opt, rtol=1e-2, atol=1e-4)
        A_opt, E_opt, C_opt = closed_loop(linear_model, weights, result.controller.gains())
        assert sweep_gain(A_opt, E_opt, C_opt) < gamma


class TestLocalization:
    """
    A quadratic value function cannot dominate a positive quintic drift term globally: the
    `v_i^2` coefficient of the Hamiltonian forces `V` to couple `s_i` and `v_i`, which
    leaves a negative `s_i^6` coefficient.
    """

    @pytest.mark.slow
    def test_localized_level_is_no_worse(self, small_model, weights, small_box, initial_controller):
        basis = value_basis(6, 2, 2)
        global_level, _ = optimize_attenuation(initial_controller, basis, small_box, small_model, weights)
        local_level, _ = optimize_attenuation(
            initial_controller, basis, small_box, small_model, weights, LearnerSchedule(localize=True)
        )
        assert local_level.gamma <= global_level.gamma * (1 + 1e-3)

    @pytest.mark.slow
    def test_global_certificate_fails_on_strong_nonlinearity(self, weights, initial_controller):
        ovm = OvmParams(s_st=17.0, s_go=23.0)
        model = assemble_model(FleetConfig.uniform(3, (1,), ovm), Equilibrium.from_velocity(15.0, ovm))
        assert model.f[3].coefficient((0, 0, 5, 0, 0, 0)) > 1e-3
        with pytest.raises(SolverError):
            optimize_attenuation(initial_controller, value_basis(6, 2, 2), state_box(3), model, weights)
