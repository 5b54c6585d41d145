"""Tests of changes of variables and the integration term."""

import numpy as np
import pytest

from stochsym.exceptions import (
    BetaError,
    DimensionError,
    InversionError,
    MonotonicityError,
    PhiZeroError,
)
from stochsym.expr import Var, VariableSpace, evaluate, is_printable
from stochsym.model import NumericSystem, constant_system, make_system
from stochsym.parsing import parse
from stochsym.sampling import values_agree
from stochsym.transform import (
    ChangeOfVariables,
    Direction,
    build_phi_from_symmetry,
    check_round_trip,
    check_straightening,
    coefficients_agree,
    compose,
    identity_map,
    push_forward,
    solve_beta,
    symbolic_inverse,
    transform_scalar,
    transform_system,
    verify_preservation,
)

BOX = {"x1": (-2.0, 2.0), "t": (0.1, 2.0), "w1": (-2.0, 2.0)}


def system_of(space: VariableSpace, drift, diffusion):
    """A system from coefficient texts."""
    return make_system(
        space, [parse(f, space) for f in drift], [[parse(s, space) for s in row] for row in diffusion]
    )


class TestTransformSystem:
    """Tests of forward transforms and pullbacks."""

    def test_forward_straightens_scalar_equation(self, ex1, settings):
        transformed = transform_system(ex1.system, ex1.map("Phi"), settings=settings)
        expected = constant_system(ex1.space, [1.0], [[1.0]])
        assert coefficients_agree(transformed, expected, settings) < 1e-9

    def test_pullback_recovers_original(self, ex1, settings):
        simple = constant_system(ex1.space, [1.0], [[1.0]])
        pulled = transform_system(simple, ex1.map("Phi"), Direction.PULLBACK, settings)
        assert coefficients_agree(pulled, ex1.system, settings) < 1e-9

    def test_forward_splits_off_equation(self, ex3, settings):
        transformed = transform_system(ex3.system, ex3.map("Phi"), settings=settings)
        expected = system_of(ex3.space, ["x1^2", "-x1"], [["1", "0"], ["x1", "1"]])
        assert coefficients_agree(transformed, expected, settings) < 1e-9

    def test_linear_map(self, ex4, settings):
        transformed = transform_system(ex4.system, ex4.map("Phi"), settings=settings)
        expected = system_of(ex4.space, ["2*exp(t)", "exp(-t)"], [["0.2*exp(t)", "exp(t)"], ["exp(-t)", "0.5*exp(-t)"]])
        assert coefficients_agree(transformed, expected, settings) < 1e-9

    def test_image_domain_is_recorded(self, ex1, settings):
        transformed = transform_system(ex1.system, ex1.map("Phi"), settings=settings)
        lower, upper = transformed.domain.as_dict()["x1"]
        assert lower > 0
        assert upper == pytest.approx(np.exp(2.0), rel=0.2)

    def test_identity_map(self, ex1, settings):
        transformed = transform_system(ex1.system, identity_map(ex1.space), settings=settings)
        assert coefficients_agree(transformed, ex1.system, settings) < 1e-9

    def test_non_monotone_map_raises_error(self, scalar_space, settings):
        simple = constant_system(scalar_space, [1.0], [[1.0]])
        square = ChangeOfVariables(scalar_space, [parse("x1^2", scalar_space)])
        with pytest.raises(MonotonicityError):
            transform_system(simple, square, Direction.PULLBACK, settings)

    def test_multidimensional_map_without_inverse_raises_error(self, ex3, settings):
        cov = ChangeOfVariables(ex3.space, ex3.map("Phi").forward)
        with pytest.raises(InversionError):
            transform_system(ex3.system, cov, settings=settings)

    def test_numeric_inverse_gives_numeric_system(self, packaged, settings):
        model = packaged("quadrature.sde")
        cov = build_phi_from_symmetry(model.space, model.symmetry("X").coeffs[0], settings=settings)
        transformed = transform_system(model.system, cov, settings=settings)
        assert isinstance(transformed, NumericSystem)
        drift, diffusion = transformed.coefficients(np.array([[0.3, 1.0]]), 0.5, np.zeros((1, 2)))
        assert np.allclose(drift, 1.0, atol=1e-6)
        assert np.allclose(diffusion, 1.0, atol=1e-6)

    def test_scalar_transform_rejects_systems(self, ex3, settings):
        with pytest.raises(DimensionError):
            transform_scalar(ex3.system, ex3.map("Phi"), settings=settings)

    def test_direction_values(self):
        assert Direction("forward") is Direction.FORWARD
        assert Direction("pullback") is Direction.PULLBACK


class TestChangeOfVariables:
    """Tests of the ChangeOfVariables class and its helpers."""

    def test_round_trip(self, ex1, settings):
        assert check_round_trip(ex1.map("Phi"), settings) < settings.roundtrip_tolerance

    def test_wrong_inverse_fails_round_trip(self, scalar_space, settings):
        cov = ChangeOfVariables(scalar_space, [parse("exp(x1)", scalar_space)], [parse("x1", scalar_space)])
        with pytest.raises(InversionError):
            check_round_trip(cov, settings)

    def test_wrong_length_raises_error(self, ex3):
        with pytest.raises(DimensionError):
            ChangeOfVariables(ex3.space, [parse("x1", ex3.space)])

    def test_with_beta(self, scalar_space):
        cov = identity_map(scalar_space).with_beta(Var("t"))
        assert values_agree(cov.forward[0], parse("x1 + t", scalar_space), BOX)
        assert values_agree(cov.inverse[0], parse("x1 - t", scalar_space), BOX)
        assert cov.beta == Var("t")

    def test_compose_with_inverse_is_identity(self, ex1, scalar_space):
        log = ChangeOfVariables(scalar_space, [parse("log(x1)", scalar_space)], [parse("exp(x1)", scalar_space)])
        composed = compose(ex1.map("Phi"), log)
        assert values_agree(composed.forward[0], Var("x1"), BOX)
        assert values_agree(composed.inverse[0], Var("x1"), BOX)

    def test_symbolic_inverse(self, ex4):
        space = ex4.space
        M = [[parse("exp(t)", space), parse("1", space)], [parse("0", space), parse("2", space)]]
        inverse = symbolic_inverse(M)
        point = {"t": 0.5}
        product = np.array([[evaluate(e, point) for e in row] for row in M]) @ np.array(
            [[evaluate(e, point) for e in row] for row in inverse]
        )
        assert np.allclose(product, np.eye(2))

    def test_large_symbolic_inverse_raises_error(self, scalar_space):
        one = parse("1", scalar_space)
        with pytest.raises(DimensionError):
            symbolic_inverse([[one] * 4] * 4)


class TestBuildPhiFromSymmetry:
    """Tests of the build_phi_from_symmetry function."""

    def test_elementary_antiderivative(self, ex1, settings):
        cov = build_phi_from_symmetry(ex1.space, ex1.symmetry("X").coeffs[0], settings=settings)
        assert values_agree(cov.forward[0], parse("exp(x1)", ex1.space), BOX)
        assert cov.is_printable

    def test_quadrature_fallback(self, packaged, settings):
        model = packaged("quadrature.sde")
        cov = build_phi_from_symmetry(model.space, model.symmetry("X").coeffs[0], settings=settings)
        assert cov.inverse is None
        assert not is_printable(cov.forward[0])
        assert evaluate(cov.forward[0], {"x1": 0.0, "t": 0.3, "w1": 0.0}) == pytest.approx(0.0, abs=1e-9)

    def test_vanishing_phi_raises_error(self, scalar_space, settings):
        with pytest.raises(PhiZeroError):
            build_phi_from_symmetry(scalar_space, parse("x1 - 1", scalar_space), settings=settings)

    def test_map_straightens_symmetry(self, ex1, settings):
        X = ex1.symmetry("X")
        cov = build_phi_from_symmetry(ex1.space, X.coeffs[0], settings=settings)
        assert check_straightening(X, cov, settings).passed


class TestSolveBeta:
    """Tests of the solve_beta function."""

    @pytest.fixture
    def ex5(self, packaged):
        return packaged("ex5.sde")

    def phi(self, model):
        return parse("exp(t)*x1", model.space)

    def test_free_constant_fixes_diffusion(self, ex5, settings):
        system = ex5.system
        solution = solve_beta(
            ex5.space, system.drift[0], system.diffusion[0][0], self.phi(ex5), system.domain, c=-1.0, settings=settings
        )
        assert values_agree(solution.beta, parse("-w1", ex5.space), BOX)
        assert values_agree(solution.drift, parse("0.5*t^2", ex5.space), BOX)
        assert values_agree(solution.diffusion, parse("t", ex5.space), BOX)
        assert not solution.numeric

    def test_default_constant(self, ex5, settings):
        system = ex5.system
        solution = solve_beta(ex5.space, system.drift[0], system.diffusion[0][0], self.phi(ex5), settings=settings)
        assert values_agree(solution.diffusion, parse("1 + t", ex5.space), BOX)

    def test_free_function_shifts_drift(self, ex5, settings):
        system = ex5.system
        solution = solve_beta(
            ex5.space,
            system.drift[0],
            system.diffusion[0][0],
            self.phi(ex5),
            c=-1.0,
            b=parse("-t^3/6", ex5.space),
            settings=settings,
        )
        assert values_agree(solution.drift, parse("0", ex5.space), BOX, tolerance=1e-9)

    def test_map_of_non_symmetry_raises_error(self, ex1, settings):
        system = ex1.system
        with pytest.raises(BetaError):
            solve_beta(ex1.space, system.drift[0], system.diffusion[0][0], Var("x1"), settings=settings)


class TestPushForward:
    """Tests of pushing fields through maps."""

    def test_symmetry_becomes_unit_field(self, ex1):
        pushed = push_forward(ex1.symmetry("X"), ex1.map("Phi"))
        assert values_agree(pushed.coeffs[0], parse("1", ex1.space), BOX)

    def test_express_needs_inverse(self, ex1):
        cov = ChangeOfVariables(ex1.space, ex1.map("Phi").forward)
        with pytest.raises(InversionError):
            push_forward(ex1.symmetry("X"), cov)

    @pytest.mark.parametrize("fixture,name", [("ex3", "X"), ("ex4", "X1")])
    def test_named_maps_straighten(self, request, settings, fixture: str, name: str):
        model = request.getfixturevalue(fixture)
        assert check_straightening(model.symmetry(name), model.map("Phi"), settings).passed

    def test_wrong_symmetry_is_not_straightened(self, ex4, settings):
        assert not check_straightening(ex4.symmetry("X2"), ex4.map("Phi"), settings).passed

    def test_symmetry_is_preserved(self, ex4, settings):
        assert verify_preservation(ex4.system, ex4.symmetry("X2"), ex4.map("Phi"), settings).passed
