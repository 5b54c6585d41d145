"""Tests of rule-based integration and map inversion."""

import logging

import numpy as np
import pytest

from stochsym.exceptions import InversionError
from stochsym.expr import Var, differentiate, exp, substitute
from stochsym.integration import integrate_rule_based, invert_numeric, invert_symbolic
from stochsym.sampling import sample, values_agree

POSITIVE = {"x1": (0.1, 2.1), "t": (0.1, 2.0), "w1": (-2.0, 2.0)}


class TestIntegrateRuleBased:
    """Tests of the integrate_rule_based function."""

    @pytest.mark.parametrize(
        "text",
        [
            "exp(x1)",
            "3*x1^2 + 2*t",
            "1/x1",
            "(1 + x1^2)^-2*x1",
            "-2*x1/(1 + x1^2)^2",
            "exp(t)*cos(2*x1)",
            "(t + exp(x1) - w1 + 1)*exp(x1)",
            "1/(2*x1)",
        ],
    )
    def test_result_differentiates_back(self, expr, text: str):
        integrand = expr(text)
        result = integrate_rule_based(integrand, "x1", POSITIVE)
        assert result is not None
        assert values_agree(differentiate(result, "x1"), integrand, POSITIVE, tolerance=1e-9)

    def test_other_variables_are_constants(self, expr):
        result = integrate_rule_based(expr("exp(w1 - 0.5*t)"), "x1", POSITIVE)
        assert values_agree(result, expr("x1*exp(w1 - 0.5*t)"), POSITIVE)

    def test_non_elementary_integrand_returns_none(self, expr):
        assert integrate_rule_based(expr("exp(x1^2)"), "x1") is None


class TestInvertSymbolic:
    """Tests of the invert_symbolic function."""

    @pytest.mark.parametrize(
        "text",
        ["exp(x1)", "2*x1 + t", "exp(t)*x1 - w1", "log(x1)", "1/(1 + x1)", "(x1 + 1)^3", "exp(2*x1) + exp(x1)"],
    )
    def test_inverse_round_trips(self, expr, text: str):
        forward = expr(text)
        inverse = invert_symbolic(forward, "x1", POSITIVE)
        assert inverse is not None
        composed = substitute(inverse, {"x1": forward})
        assert values_agree(composed, Var("x1"), POSITIVE, tolerance=1e-7)

    def test_inverse_in_named_target(self, expr):
        inverse = invert_symbolic(expr("exp(x1)"), "x1", POSITIVE, target="x2")
        assert inverse.variables == frozenset({"x2"})

    def test_no_pattern_returns_none(self, expr):
        assert invert_symbolic(expr("x1 + exp(x1^2)"), "x1", POSITIVE) is None


class TestInvertNumeric:
    """Tests of the invert_numeric function."""

    def test_solves_monotone_map(self, expr):
        forward = expr("x1 + 0.5*exp(0.3*x1)")
        slope = differentiate(forward, "x1")
        values = np.array([-3.0, 0.5, 10.0])
        roots = invert_numeric(forward, slope, "x1", values, {"t": 0.0})
        assert np.allclose(roots + 0.5 * np.exp(0.3 * roots), values, atol=1e-10)

    def test_no_sign_change_raises_error(self, expr):
        forward = exp(Var("x1"))
        with pytest.raises(InversionError):
            invert_numeric(forward, forward, "x1", np.array([-1.0]), {})

    def test_batched_points(self, expr):
        forward = expr("exp(t)*x1")
        points = sample({"t": (0.0, 1.0)}, [expr("exp(t)")], count=5)
        roots = invert_numeric(forward, expr("exp(t)"), "x1", np.ones(5), points)
        assert np.allclose(roots * np.exp(points["t"]), 1.0)

    def test_map_defined_only_for_positive_values(self, expr):
        forward = expr("x1 + log(x1)")
        values = np.array([-6.0, -1.0, 1.0, 4.0])
        roots = invert_numeric(forward, expr("1 + 1/x1"), "x1", values, {}, start=1.0)
        assert np.all(roots > 0)
        assert np.allclose(roots + np.log(roots), values, atol=1e-10)

    def test_start_outside_the_map_domain_raises_error(self, expr):
        with pytest.raises(InversionError, match="not defined at the start value"):
            invert_numeric(expr("x1 + log(x1)"), expr("1 + 1/x1"), "x1", np.array([1.0]), {})

    def test_values_that_are_not_finite_give_nan(self, expr):
        roots = invert_numeric(expr("2*x1"), expr("2"), "x1", np.array([np.nan, 4.0]), {})
        assert np.isnan(roots[0])
        assert roots[1] == pytest.approx(2.0)

    def test_unconverged_roots_are_logged(self, expr, mocker, caplog):
        mocker.patch("stochsym.integration.MAX_NEWTON_ITERATIONS", 1)
        forward = expr("x1 + 0.5*exp(0.3*x1)")
        with caplog.at_level(logging.WARNING, logger="stochsym.integration"):
            invert_numeric(forward, differentiate(forward, "x1"), "x1", np.array([-3.0, 10.0]), {})
        assert "did not converge" in caplog.text
