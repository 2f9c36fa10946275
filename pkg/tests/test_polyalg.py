import math

import numpy as np
import pytest

from hinfplatoon.core.errors import FitError
from hinfplatoon.core.polyalg import (
    AffinePoly,
    Box,
    Polynomial,
    box_moment,
    fit_polynomial,
    integrate_box,
    monomial_basis,
)


def x(nvars: int, i: int) -> Polynomial:
    return Polynomial.variable(nvars, i)


def random_poly(rng: np.random.Generator, nvars: int = 3, terms: int = 6, degree: int = 3) -> Polynomial:
    out = {}
    for _ in range(terms):
        mono = tuple(int(e) for e in rng.integers(0, degree + 1, size=nvars))
        out[mono] = float(rng.normal())
    return Polynomial(nvars, out)


class TestArithmetic:
    def test_difference_of_squares(self):
        p = (x(1, 0) + 1) * (x(1, 0) - 1)
        assert p == Polynomial(1, {(2,): 1.0, (0,): -1.0})

    def test_additive_identity(self):
        p = Polynomial(2, {(1, 2): 3.0, (0, 0): -1.0})
        assert p + Polynomial.zero(2) == p
        assert p + 0 == p

    def test_scalar_product(self):
        p = 2 * (x(2, 0) * x(2, 1))
        assert p.terms == {(1, 1): 2.0}

    def test_cancellation_drops_terms(self):
        p = x(2, 0) * x(2, 1) - x(2, 1) * x(2, 0)
        assert p.is_zero()
        assert len(p) == 0

    def test_power(self):
        p = (x(1, 0) + 1) ** 3
        assert p == Polynomial(1, {(3,): 1.0, (2,): 3.0, (1,): 3.0, (0,): 1.0})
        assert (x(1, 0) ** 0) == Polynomial.constant(1, 1.0)

    def test_mismatched_variables(self):
        with pytest.raises(ValueError):
            x(2, 0) + x(3, 0)

    def test_ring_axioms(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            p, q, r = (random_poly(rng) for _ in range(3))
            assert ((p + q) + r).is_close(p + (q + r), atol=1e-12)
            assert (p * (q + r)).is_close(p * q + p * r, atol=1e-9)
            assert (p * q).is_close(q * p, atol=1e-12)


class TestCalculus:
    def test_gradient_power_rule(self):
        p = x(2, 0) ** 2 * x(2, 1)
        grad = p.gradient()
        assert grad[0] == 2 * x(2, 0) * x(2, 1)
        assert grad[1] == x(2, 0) ** 2

    def test_gradient_of_constant(self):
        assert all(g.is_zero() for g in Polynomial.constant(3, 4.0).gradient())

    def test_gradient_evaluation(self):
        p = x(2, 0) ** 2 + x(2, 1) ** 2
        assert [g.evaluate([1.0, 1.0]) for g in p.gradient()] == [2.0, 2.0]

    def test_linear_part(self):
        p = 3 * x(3, 0) - x(3, 2) + x(3, 1) ** 2
        np.testing.assert_array_equal(p.linear_part(), [3.0, 0.0, -1.0])


class TestEvaluation:
    def test_examples(self):
        assert (x(1, 0) ** 2 - 1).evaluate([2.0]) == 3.0
        assert Polynomial.zero(2).evaluate([5.0, -1.0]) == 0.0
        assert (x(2, 0) * x(2, 1)).evaluate([3.0, -2.0]) == -6.0

    def test_wrong_point_length(self):
        with pytest.raises(ValueError):
            x(2, 0).evaluate([1.0])

    def test_evaluate_many_matches_pointwise(self):
        rng = np.random.default_rng(3)
        p = random_poly(rng)
        pts = rng.normal(size=(20, 3))
        np.testing.assert_allclose(p.evaluate_many(pts), [p.evaluate(row) for row in pts], atol=1e-12)

    def test_embed_appends_variables(self):
        p = x(2, 0) * x(2, 1)
        lifted = p.embed(3)
        assert lifted.nvars == 3
        assert lifted.evaluate([2.0, 3.0, 100.0]) == 6.0


class TestMonomialBasis:
    def test_linear(self):
        assert monomial_basis(2, 1, 1) == [(1, 0), (0, 1)]

    def test_quadratic(self):
        assert monomial_basis(2, 2, 2) == [(2, 0), (1, 1), (0, 2)]

    def test_counts(self):
        assert len(monomial_basis(6, 2, 4)) == 21 + 56 + 126

    def test_empty_range(self):
        with pytest.raises(ValueError):
            monomial_basis(2, 3, 2)


class TestBoxMoments:
    def test_examples(self):
        box1 = Box.symmetric([1.0])
        assert box_moment((2,), box1) == pytest.approx(2 / 3, abs=1e-15)
        assert box_moment((1,), box1) == 0.0
        assert box_moment((2, 2), Box.symmetric([1.0, 1.0])) == pytest.approx(4 / 9, abs=1e-15)

    def test_integrate_matches_quadrature(self):
        box = Box((0.0, -1.0), (2.0, 3.0))
        p = x(2, 0) ** 3 * x(2, 1) + 2 * x(2, 1) ** 2 - 1
        # exact: int x^3 dx = 4, int y dy = 4, int y^2 dy = 28/3, area 8
        assert integrate_box(p, box) == pytest.approx(16 + 2 * 2 * 28 / 3 - 8, rel=1e-12)

    def test_invalid_box(self):
        with pytest.raises(ValueError):
            Box((1.0,), (1.0,))


class TestFit:
    def test_exact_line(self):
        s = np.linspace(0.0, 1.0, 11)
        fit = fit_polynomial(np.column_stack([s, s]), 1)
        assert fit.polynomial.coefficient((0,)) == pytest.approx(0.0, abs=1e-12)
        assert fit.polynomial.coefficient((1,)) == pytest.approx(1.0, abs=1e-12)

    def test_interpolation_constraint(self):
        s = np.linspace(5.0, 35.0, 301)
        v = 15.0 * (1.0 - np.cos(math.pi * (s - 5.0) / 30.0))
        fit = fit_polynomial(np.column_stack([s, v]), 5, interpolate_at=[(20.0, 15.0)])
        assert fit.polynomial.evaluate([20.0]) == pytest.approx(15.0, abs=1e-9)
        assert fit.max_error < 0.5

    def test_constant_with_constraint(self):
        s = np.linspace(-1.0, 1.0, 9)
        fit = fit_polynomial(np.column_stack([s, np.ones_like(s)]), 2, interpolate_at=[(0.0, 1.0)])
        assert fit.polynomial.is_close(Polynomial.constant(1, 1.0), atol=1e-12)

    def test_too_few_samples(self):
        with pytest.raises(FitError):
            fit_polynomial([(0.0, 0.0), (1.0, 1.0)], 3)


class TestAffinePoly:
    def test_substitute(self):
        # c0 * x^2 + c1 * x + 1
        expr = AffinePoly(1, {0: x(1, 0) ** 2, 1: x(1, 0), None: Polynomial.constant(1, 1.0)})
        assert expr.decision_variables() == [0, 1]
        assert expr.substitute({0: 1.0, 1: 2.0}) == (x(1, 0) + 1) ** 2

    def test_integral_is_linear_functional(self):
        expr = AffinePoly(1, {0: x(1, 0) ** 2})
        weights = expr.integrate_box(Box.symmetric([1.0]))
        assert weights[0] == pytest.approx(2 / 3)

    def test_missing_value(self):
        with pytest.raises(KeyError):
            AffinePoly(1, {0: x(1, 0)}).substitute({})
