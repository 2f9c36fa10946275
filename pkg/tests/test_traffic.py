import math

import numpy as np
import pytest

from hinfplatoon.core.enums import VehicleType
from hinfplatoon.core.errors import FitError
from hinfplatoon.core.polyalg import Polynomial
from hinfplatoon.core.traffic import (
    Equilibrium,
    FleetConfig,
    OvmParams,
    PerformanceWeights,
    assemble_model,
    desired_velocity,
    equilibrium_spacing,
    fit_desired_velocity,
    hdv_acceleration,
    performance_output,
)


class TestDesiredVelocity:
    def test_branches(self, ovm):
        assert desired_velocity(ovm.s_st, ovm) == 0.0
        assert desired_velocity(ovm.s_go, ovm) == ovm.v_max
        assert desired_velocity(20.0, ovm) == pytest.approx(15.0, abs=1e-9)
        assert desired_velocity(1.0, ovm) == 0.0
        assert desired_velocity(100.0, ovm) == ovm.v_max

    def test_continuity(self, ovm):
        eps = 1e-9
        for edge in (ovm.s_st, ovm.s_go):
            left, right = desired_velocity(edge - eps, ovm), desired_velocity(edge + eps, ovm)
            assert left == pytest.approx(right, abs=1e-6)

    def test_vectorised(self, ovm):
        s = np.array([0.0, 20.0, 50.0])
        np.testing.assert_allclose(desired_velocity(s, ovm), [0.0, 15.0, 30.0], atol=1e-9)


class TestEquilibrium:
    def test_reference_equilibrium(self, ovm):
        assert equilibrium_spacing(15.0, ovm) == pytest.approx(20.0, abs=1e-9)

    def test_small_velocity_tends_to_standstill(self, ovm):
        assert equilibrium_spacing(1e-9, ovm) == pytest.approx(ovm.s_st, abs=1e-3)

    def test_half_velocity_is_midpoint(self):
        p = OvmParams(s_st=3.0, s_go=41.0, v_max=24.0)
        assert equilibrium_spacing(12.0, p) == pytest.approx(22.0, abs=1e-9)

    @pytest.mark.parametrize("v_star", [0.0, 30.0, -1.0, 45.0])
    def test_out_of_range(self, ovm, v_star):
        with pytest.raises(ValueError):
            equilibrium_spacing(v_star, ovm)

    def test_check(self, ovm, equilibrium):
        equilibrium.check(ovm)
        with pytest.raises(ValueError):
            Equilibrium(15.0, 22.0).check(ovm)


class TestHdvAcceleration:
    def test_fixed_point(self, ovm, equilibrium):
        assert hdv_acceleration(0.0, 0.0, 0.0, ovm, equilibrium) == 0.0
        assert hdv_acceleration(0.0, 0.0, 0.0, ovm, equilibrium, approx=True) == 0.0

    @pytest.mark.parametrize("v_star", [7.5, 15.0, 22.0])
    def test_exact_dynamics_vanish_at_equilibrium(self, ovm, v_star):
        eq = Equilibrium.from_velocity(v_star, ovm)
        model = assemble_model(FleetConfig.uniform(3, (1,), ovm), eq)
        assert not model.exact_rhs(np.zeros(6), [0.0], 0.0).any()
        assert not model.approx_rhs(np.zeros(6), [0.0], 0.0).any()

    def test_saturation(self, ovm, equilibrium):
        a = hdv_acceleration(100.0, 0.0, 0.0, ovm, equilibrium)
        assert a == pytest.approx(ovm.alpha * (ovm.v_max - equilibrium.v_star))

    def test_velocity_damping_without_beta(self, equilibrium):
        p = OvmParams(beta=0.0)
        assert hdv_acceleration(0.0, 1.0, 0.0, p, equilibrium) == pytest.approx(-p.alpha)


class TestFleet:
    def test_uniform(self, ovm):
        fleet = FleetConfig.uniform(5, (1, 4), ovm)
        assert fleet.m == 2
        assert fleet.hdv_indices == (2, 3, 5)
        assert fleet.vehicle_type(4) is VehicleType.CAV
        assert fleet.vehicle_type(3) is VehicleType.HDV

    @pytest.mark.parametrize("cavs", [(2,), (1, 1), (1, 4)])
    def test_invalid_indices(self, ovm, cavs):
        with pytest.raises(ValueError):
            FleetConfig.uniform(3, cavs, ovm)

    def test_heterogeneous_curve_rejected(self, ovm):
        other = OvmParams(s_go=40.0)
        with pytest.raises(ValueError):
            FleetConfig(2, (1,), {2: other}, ovm)

    def test_heterogeneous_gains_accepted(self, ovm):
        fleet = FleetConfig(3, (1,), {2: OvmParams(alpha=0.4), 3: ovm}, ovm)
        assert fleet.params_for(2).alpha == 0.4
        assert fleet.params_for(1) == ovm


class TestPerformanceOutput:
    def test_zero(self):
        z, norm = performance_output(np.zeros(6), [0.0], PerformanceWeights())
        assert norm == 0.0
        assert not z.any()

    def test_unit_velocity(self):
        x = np.zeros(6)
        x[1] = 1.0
        _, norm = performance_output(x, [0.0], PerformanceWeights())
        assert norm == pytest.approx(0.0225, abs=1e-15)

    def test_unit_input(self):
        _, norm = performance_output(np.zeros(6), [1.0], PerformanceWeights())
        assert norm == pytest.approx(1.0)

    def test_odd_state(self):
        with pytest.raises(ValueError):
            performance_output(np.zeros(5), [0.0], PerformanceWeights())


class TestAssembly:
    def test_input_and_disturbance_channels(self, small_model):
        np.testing.assert_array_equal(small_model.g[:, 0], [0, 1, 0, 0, 0, 0])
        np.testing.assert_array_equal(small_model.k, [1, 0, 0, 0, 0, 0])

    def test_origin_is_equilibrium(self, small_model):
        np.testing.assert_allclose(small_model.drift(np.zeros(6)), 0.0, atol=1e-12)

    def test_all_cav_fleet_has_no_ovm_terms(self, ovm, equilibrium):
        model = assemble_model(FleetConfig.uniform(2, (1, 2), ovm), equilibrium)
        assert model.nonlinear_variables() == set()
        assert model.f[1].is_zero() and model.f[3].is_zero()
        assert model.f[2] == Polynomial.variable(4, 1) - Polynomial.variable(4, 3)

    def test_nonlinear_variables(self, small_model):
        # spacings of the two HDVs
        assert small_model.nonlinear_variables() == {2, 4}

    def test_approximation_error_bounded_by_fit(self, small_model):
        rng = np.random.default_rng(11)
        fit = small_model.fit
        alpha = small_model.fleet.params_for(2).alpha
        for _ in range(10):
            x = rng.uniform(-1.0, 1.0, size=6) * np.tile([4.0, 5.0], 3)
            diff = small_model.approx_rhs(x, [0.0], 0.0) - small_model.exact_rhs(x, [0.0], 0.0)
            # sampled fit error, with room for the gaps between samples
            assert np.max(np.abs(diff)) <= 1.1 * alpha * fit.max_error + 1e-9

    def test_approx_rhs_matches_closed_form(self, small_model):
        x = np.array([0.3, -0.2, 1.0, 0.5, -0.7, 0.1])
        np.testing.assert_allclose(
            small_model.approx_rhs(x, [0.4], 0.2),
            small_model.rhs(x, [0.4], 0.2, approx=True),
            atol=1e-12,
        )

    def test_baseline_ignores_input(self, small_model):
        x = np.array([0.3, -0.2, 1.0, 0.5, -0.7, 0.1])
        a = small_model.rhs(x, [10.0], 0.0, baseline=True)
        b = small_model.rhs(x, [-10.0], 0.0, baseline=True)
        np.testing.assert_array_equal(a, b)

    def test_linear_fit(self, linear_model):
        assert linear_model.nonlinear_variables() == set()
        A, B, E = linear_model.linearization()
        slope = linear_model.fit.polynomial.coefficient((1,))
        # the fitted slope is close to the curve's derivative at s* = 20
        assert slope == pytest.approx(15.0 * math.pi / 30.0, rel=0.05)
        assert A[3, 2] == pytest.approx(0.6 * slope)

    def test_low_degree_rejected(self, small_fleet, equilibrium):
        with pytest.raises(FitError):
            assemble_model(small_fleet, equilibrium, fit_degree=0)

    def test_fit_error_threshold(self, small_fleet, equilibrium):
        with pytest.raises(FitError):
            assemble_model(small_fleet, equilibrium, max_fit_error=1e-9)

    def test_fingerprint(self, small_model, small_fleet, equilibrium, linear_model):
        again = assemble_model(small_fleet, equilibrium)
        assert again.fingerprint() == small_model.fingerprint()
        assert linear_model.fingerprint() != small_model.fingerprint()

    def test_fit_passes_through_equilibrium(self, ovm, equilibrium):
        fit = fit_desired_velocity(ovm, equilibrium)
        assert fit.polynomial.evaluate([0.0]) == 0.0
        assert fit.degree == 5
        assert fit.spacing_range == pytest.approx((16.0, 24.0), abs=1e-9)
