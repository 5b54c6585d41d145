"""Tests of systems, vector fields and the operators built on them."""

import math

import numpy as np
import pytest

from stochsym.exceptions import DimensionError, ModelError, NoiseDependenceError
from stochsym.expr import Var, VariableSpace, evaluate, evaluate_array
from stochsym.model import (
    Domain,
    GeneralizedSystem,
    ItoSystem,
    SolvableChain,
    VectorField,
    check_evaluable,
    commutator,
    constant_system,
    ito_laplacian,
    linear_combination,
    make_system,
    operator_L,
    operator_M,
)
from stochsym.parsing import parse

POINT = {"x1": 0.7, "t": 0.3, "w1": -0.4}


@pytest.fixture
def system(expr) -> ItoSystem:
    """dy = (e^-y - e^-2y / 2) dt + e^-y dw."""
    return ItoSystem(VariableSpace(1, 1), [expr("exp(-x1) - 0.5*exp(-2*x1)")], [[expr("exp(-x1)")]])


class TestDomain:
    """Tests of the Domain class."""

    def test_empty_interval_raises_error(self):
        with pytest.raises(ModelError):
            Domain.of({"x1": (1.0, 1.0)})

    def test_declared_intervals_are_kept(self):
        box = Domain.of({"x1": (0.5, 1.0)}).box(VariableSpace(1, 1))
        assert box["x1"] == (0.5, 1.0)
        assert box["t"] == (0.1, 2.0)
        assert box["w1"] == (-2.0, 2.0)

    def test_logarithm_shifts_default_interval(self, expr):
        box = Domain().box(VariableSpace(1, 1), [expr("log(x1)")])
        assert box["x1"] == (0.1, 2.1)

    def test_merged_overrides(self):
        merged = Domain.of({"x1": (0.0, 1.0), "t": (0.0, 1.0)}).merged(Domain.of({"x1": (1.0, 2.0)}))
        assert merged.as_dict() == {"t": (0.0, 1.0), "x1": (1.0, 2.0)}

    def test_restricted(self):
        domain = Domain.of({"x1": (0.0, 1.0), "w1": (-1.0, 1.0)}).restricted(["w1"])
        assert domain.as_dict() == {"w1": (-1.0, 1.0)}


class TestSystems:
    """Tests of the system classes."""

    def test_noise_in_ito_system_raises_error(self, expr):
        with pytest.raises(NoiseDependenceError):
            ItoSystem(VariableSpace(1, 1), [expr("x1")], [[expr("x1 + w1")]])

    def test_make_system_picks_generalized_for_noise(self, expr):
        space = VariableSpace(1, 1)
        assert isinstance(make_system(space, [expr("1")], [[expr("w1")]]), GeneralizedSystem)
        assert not isinstance(make_system(space, [expr("1")], [[expr("w1")]]), ItoSystem)
        assert isinstance(make_system(space, [expr("1")], [[expr("x1")]]), ItoSystem)

    def test_wrong_diffusion_shape_raises_error(self, expr):
        with pytest.raises(DimensionError):
            ItoSystem(VariableSpace(1, 2), [expr("1")], [[expr("1")]])

    def test_undeclared_variable_raises_error(self):
        space = VariableSpace(2, 1)
        with pytest.raises(ModelError):
            ItoSystem(VariableSpace(1, 1), [parse("x2", space)], [[parse("1", space)]])

    def test_coefficients_are_vectorized(self, system):
        x = np.array([[0.0, 1.0, 2.0]])
        drift, diffusion = system.coefficients(x, 0.0, np.zeros((1, 3)))
        assert drift.shape == (1, 3)
        assert diffusion.shape == (1, 1, 3)
        assert np.allclose(diffusion[0, 0], np.exp(-x[0]))

    def test_equations_are_printed(self, system):
        (line,) = system.equations()
        assert line.startswith("dx1 = (")
        assert line.endswith(") dw1")

    def test_constant_system(self):
        system = constant_system(VariableSpace(2, 2), [1.0, 2.0], [[1.0, 0.5], [0.2, 1.0]])
        assert system.diffusion[0][1] == parse("0.5", VariableSpace(2, 2))
        assert not system.is_random

    def test_check_evaluable_samples_the_domain(self, system, settings):
        points = check_evaluable(system, settings)
        assert len(points["x1"]) == settings.points


class TestVectorFields:
    """Tests of vector fields and their brackets."""

    def test_apply(self, expr):
        X = VectorField(VariableSpace(1, 1), [expr("exp(-x1)")])
        assert evaluate(X.apply(expr("exp(x1)")), POINT) == pytest.approx(1.0)

    def test_commutator(self, expr):
        space = VariableSpace(1, 1)
        bracket = commutator(VectorField(space, [expr("x1")]), VectorField(space, [expr("x1^2")]))
        assert evaluate(bracket.coeffs[0], POINT) == pytest.approx(0.49)

    def test_commuting_fields(self, ex4):
        bracket = commutator(ex4.symmetry("X1"), ex4.symmetry("X2"))
        assert all(evaluate(c, {"x1": 0.0, "x2": 0.0, "t": 0.5, "w1": 0.0, "w2": 0.0}) == 0 for c in bracket.coeffs)

    def test_linear_combination(self, expr):
        space = VariableSpace(1, 1)
        X = linear_combination([VectorField(space, [expr("x1")]), VectorField(space, [expr("1")])], [2.0, -1.0])
        assert evaluate(X.coeffs[0], POINT) == pytest.approx(0.4)

    def test_random_field(self, expr):
        assert VectorField(VariableSpace(1, 1), [expr("exp(w1)")]).is_random

    def test_chain_needs_a_field(self):
        with pytest.raises(ModelError):
            SolvableChain(())


PLANE = VariableSpace(2, 1)

POLYNOMIAL_TRIPLES = [
    (("x1^2", "x1*x2"), ("x2", "1"), ("x1 + x2^3", "t*x1")),
    (("x1*x2", "x2^2 - x1"), ("2", "x1^2*x2"), ("x2^2", "3*x1 + t")),
    (("t*x1^2", "x2"), ("x1 - x2", "x1*x2*t"), ("x2^3", "x1^3")),
    (("1 + x1*x2^2", "x1^2"), ("x2^2*x1", "x2 - 1"), ("x1", "x2")),
]


def field(components) -> VectorField:
    """A vector field on the plane from component texts."""
    return VectorField(PLANE, [parse(text, PLANE) for text in components])


def sampled(X: VectorField, points) -> np.ndarray:
    """The components of ``X`` at every point, one row per component."""
    return np.array([evaluate_array(c, points, 50) for c in X.coeffs])


@pytest.fixture
def plane_points():
    """50 points of the plane at varying times."""
    rng = np.random.default_rng(7)
    return {
        "x1": rng.uniform(-2.0, 2.0, 50),
        "x2": rng.uniform(-2.0, 2.0, 50),
        "t": rng.uniform(0.1, 2.0, 50),
        "w1": np.zeros(50),
    }


class TestCommutatorProperties:
    """Tests of the algebraic properties of the Lie bracket on polynomial fields."""

    @pytest.mark.parametrize("triple", POLYNOMIAL_TRIPLES)
    def test_antisymmetry(self, plane_points, triple):
        X, Y, _ = (field(c) for c in triple)
        total = sampled(commutator(X, Y), plane_points) + sampled(commutator(Y, X), plane_points)
        assert np.allclose(total, 0.0, atol=1e-9)

    @pytest.mark.parametrize("triple", POLYNOMIAL_TRIPLES)
    def test_bilinearity(self, plane_points, triple):
        X, Y, Z = (field(c) for c in triple)
        a, b = 1.5, -0.75
        left = sampled(commutator(linear_combination([X, Y], [a, b]), Z), plane_points)
        right = a * sampled(commutator(X, Z), plane_points) + b * sampled(commutator(Y, Z), plane_points)
        assert np.allclose(left, right, atol=1e-9)
        left = sampled(commutator(Z, linear_combination([X, Y], [a, b])), plane_points)
        right = a * sampled(commutator(Z, X), plane_points) + b * sampled(commutator(Z, Y), plane_points)
        assert np.allclose(left, right, atol=1e-9)

    @pytest.mark.parametrize("triple", POLYNOMIAL_TRIPLES)
    def test_jacobi_identity(self, plane_points, triple):
        X, Y, Z = (field(c) for c in triple)
        cyclic = (
            sampled(commutator(X, commutator(Y, Z)), plane_points)
            + sampled(commutator(Y, commutator(Z, X)), plane_points)
            + sampled(commutator(Z, commutator(X, Y)), plane_points)
        )
        scale = max(1.0, float(np.max(np.abs(sampled(commutator(X, commutator(Y, Z)), plane_points)))))
        assert np.allclose(cyclic, 0.0, atol=1e-9 * scale)


class TestOperators:
    """Tests of the Ito Laplacian and the scalar operators L and M."""

    def test_ito_laplacian(self, expr):
        system = make_system(VariableSpace(1, 1), [expr("0")], [[expr("x1")]])
        value = evaluate(ito_laplacian(system, expr("x1^2*w1")), POINT)
        assert value == pytest.approx(2 * 0.49 * -0.4 + 4 * 0.49)

    def test_operators_annihilate_straightening_map(self, system, expr):
        psi = expr("exp(x1) - w1")
        assert evaluate(operator_M(system)(psi), POINT) == pytest.approx(0.0, abs=1e-12)
        assert evaluate(operator_L(system)(psi), POINT) == pytest.approx(1.0)

    def test_operators_need_a_scalar_equation(self, ex3):
        with pytest.raises(DimensionError):
            operator_L(ex3.system)

    def test_velocity(self, system, expr):
        value = evaluate(operator_L(system)(Var("x1")), POINT)
        assert value == pytest.approx(math.exp(-0.7))

