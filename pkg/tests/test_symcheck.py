"""Tests of the determining equations, the ansatz search and the compatibility condition."""

import numpy as np
import pytest

from stochsym.exceptions import DimensionError, PhiZeroError, UnsupportedFieldError, ValueTooHigh
from stochsym.expr import Num, VariableSpace
from stochsym.model import Domain, SolvableChain, VectorField
from stochsym.parsing import parse
from stochsym.symcheck import (
    CompatibilityInput,
    canonical_basis,
    check_regular_action,
    check_solvable_chain,
    check_symmetry,
    compatibility_check,
    deterministic_residuals,
    field_from_coefficients,
    kernel_membership,
    random_residuals,
    sampled_independent,
    search_symmetry_ansatz,
)


def fields(space: VariableSpace, *components) -> SolvableChain:
    """A chain from component texts, one tuple per generator."""
    return SolvableChain(
        tuple(
            VectorField(space, [parse(text, space) for text in coeffs], f"X{index}")
            for index, coeffs in enumerate(components, start=1)
        )
    )


class TestCheckSymmetry:
    """Tests of the symmetry residual checks."""

    def test_deterministic_symmetry_passes(self, ex1, settings):
        report = check_symmetry(ex1.system, ex1.symmetry("X"), settings)
        assert report.passed
        assert report.check == "deterministic symmetry"
        assert report.labels == ("eq1[1]", "eq2[1,1]")

    def test_non_symmetry_fails(self, ex1, settings):
        report = check_symmetry(ex1.system, ex1.symmetry("wrong"), settings)
        assert not report.passed
        assert report.as_dict()["verdict"] == "fail"

    @pytest.mark.parametrize("name", ["X", "X0", "Xu"])
    def test_random_symmetries_pass(self, ex6, settings, name: str):
        assert check_symmetry(ex6.system, ex6.symmetry(name), settings).passed

    def test_random_field_uses_random_equations(self, ex7, settings):
        report = check_symmetry(ex7.system, ex7.symmetry("X"), settings)
        assert report.check == "random symmetry"
        assert report.passed

    def test_random_field_in_deterministic_check_raises_error(self, ex6, settings):
        with pytest.raises(UnsupportedFieldError):
            deterministic_residuals(ex6.system, ex6.symmetry("X"), settings)

    def test_deterministic_symmetry_passes_random_equations(self, ex1, settings):
        assert random_residuals(ex1.system, ex1.symmetry("X"), settings).passed

    def test_field_of_other_dimension_raises_error(self, ex1, ex3, settings):
        with pytest.raises(DimensionError):
            check_symmetry(ex1.system, ex3.symmetry("X"), settings)

    def test_linear_system_symmetries(self, ex4, settings):
        for name in ("X1", "X2"):
            assert check_symmetry(ex4.system, ex4.symmetry(name), settings).passed

    def test_report_summary(self, ex1, settings):
        summary = check_symmetry(ex1.system, ex1.symmetry("X"), settings).as_dict()
        assert summary["verdict"] == "pass"
        assert summary["points"] == settings.points
        assert [r["label"] for r in summary["residuals"]] == ["eq1[1]", "eq2[1,1]"]


class TestSearchSymmetryAnsatz:
    """Tests of the search_symmetry_ansatz function."""

    def test_scalar_basis(self, ex1, settings):
        space = ex1.space
        basis = [parse(text, space) for text in ("exp(-x1)", "x1", "1")]
        (vector,) = search_symmetry_ansatz(ex1.system, basis, settings=settings)
        assert np.allclose(vector, [1.0, 0.0, 0.0], atol=1e-6)

    def test_vector_basis(self, ex4, settings):
        space = ex4.space
        basis = [
            VectorField(space, [parse(a, space), parse(b, space)], f"b{index}")
            for index, (a, b) in enumerate(
                [("exp(t)", "0"), ("exp(-t)", "0"), ("0", "exp(t)"), ("0", "exp(-t)")], start=1
            )
        ]
        vectors = search_symmetry_ansatz(ex4.system, basis, settings=settings)
        assert len(vectors) == 2
        assert np.allclose(vectors[0], [1.0, 0.0, 0.0, 0.0], atol=1e-6)
        assert np.allclose(vectors[1], [0.0, 0.0, 0.0, 1.0], atol=1e-6)

    def test_found_field_is_a_symmetry(self, ex1, settings):
        space = ex1.space
        basis = [parse("exp(-x1)", space), parse("1", space)]
        (vector,) = search_symmetry_ansatz(ex1.system, basis, settings=settings)
        X = field_from_coefficients(ex1.system, basis, vector)
        assert check_symmetry(ex1.system, X, settings).passed

    def test_oversized_basis_raises_error(self, ex1, settings):
        basis = [parse(f"x1^{k}", ex1.space) for k in range(65)]
        with pytest.raises(ValueTooHigh):
            search_symmetry_ansatz(ex1.system, basis, settings=settings)

    def test_canonical_basis_is_sign_normalized(self):
        span = np.array([[0.0], [-0.6], [-0.8]])
        (vector,) = canonical_basis(span)
        assert np.allclose(vector, [0.0, 0.6, 0.8])

    def test_empty_null_space(self):
        assert canonical_basis(np.zeros((3, 0))) == []


class TestCompatibility:
    """Tests of the compatibility condition."""

    @pytest.mark.parametrize("fixture", ["ex1", "ex6", "ex7"])
    def test_compatible_symmetries_pass(self, request, settings, fixture: str):
        model = request.getfixturevalue(fixture)
        data = CompatibilityInput.from_system(model.system, model.symmetry("X"))
        assert compatibility_check(data, settings).passed

    def test_incompatible_symmetry_fails(self, ex8, settings):
        data = CompatibilityInput.from_system(ex8.system, ex8.symmetry("X"))
        assert not compatibility_check(data, settings).passed

    def test_deterministic_phi_has_zero_gamma(self, ex1):
        data = CompatibilityInput.from_system(ex1.system, ex1.symmetry("X"))
        assert data.gamma == Num(0.0)

    def test_vanishing_phi_raises_error(self, scalar_space, settings):
        data = CompatibilityInput(
            scalar_space, Num(0.0), Num(1.0), parse("x1 - 1", scalar_space)
        )
        with pytest.raises(PhiZeroError):
            compatibility_check(data, settings)

    def test_tolerance_scales_with_coefficients(self, scalar_space, settings):
        data = CompatibilityInput(
            scalar_space,
            parse("1000*x1", scalar_space),
            parse("x1", scalar_space),
            parse("x1*exp(w1)", scalar_space),
            Domain.of({"x1": (1.0, 2.0)}),
        )
        report = compatibility_check(data, settings)
        assert report.scale >= 1000.0
        assert report.threshold == pytest.approx(settings.tolerance * (1.0 + report.scale))

    def test_system_of_equations_raises_error(self, ex3):
        with pytest.raises(DimensionError):
            CompatibilityInput.from_system(ex3.system, ex3.symmetry("X"))


class TestKernelMembership:
    """Tests of the kernel_membership function."""

    def test_function_in_both_kernels(self, ex7, settings):
        assert kernel_membership(ex7.system, ex7.kernels["zeta"], settings) == (True, True)

    def test_function_only_in_kernel_of_L(self, ex8, settings):
        assert kernel_membership(ex8.system, ex8.kernels["z"], settings) == (True, False)


class TestSolvableChain:
    """Tests of the chain and regular action checks."""

    def test_commuting_generators_pass(self, ex4, settings):
        chain = SolvableChain((ex4.symmetry("X1"), ex4.symmetry("X2")))
        assert check_solvable_chain(chain, settings=settings).passed

    def test_ordered_affine_generators_pass(self, scalar_space, settings):
        report = check_solvable_chain(fields(scalar_space, ("1",), ("x1",)), settings=settings)
        assert report.passed
        assert report.details["c[1,2][1]"] == pytest.approx(1.0)

    def test_wrong_order_fails(self, scalar_space, settings):
        assert not check_solvable_chain(fields(scalar_space, ("x1",), ("1",)), settings=settings).passed

    def test_declared_structure_constants(self, scalar_space, settings):
        chain = fields(scalar_space, ("1",), ("x1",))
        declared = SolvableChain(chain.fields, (((2.0,),),))
        assert not check_solvable_chain(declared, settings=settings).passed

    def test_random_generator_raises_error(self, ex6, settings):
        with pytest.raises(UnsupportedFieldError):
            check_solvable_chain(SolvableChain((ex6.symmetry("X"),)), settings=settings)

    def test_single_generator_passes(self, ex1, settings):
        assert check_solvable_chain(SolvableChain((ex1.symmetry("X"),)), settings=settings).passed

    def test_regular_action(self, ex4, settings):
        chain = SolvableChain((ex4.symmetry("X1"), ex4.symmetry("X2")))
        report = check_regular_action(chain, settings=settings)
        assert report.passed
        assert report.as_dict()["rank"] == 2

    def test_dependent_generators_are_not_regular(self, settings):
        space = VariableSpace(2, 1)
        report = check_regular_action(fields(space, ("exp(t)", "0"), ("2*exp(t)", "0")), settings=settings)
        assert not report.passed
        assert report.deficient_points == settings.points

    def test_more_generators_than_states_are_not_regular(self, scalar_space, settings):
        assert not check_regular_action(fields(scalar_space, ("1",), ("x1",)), settings=settings).passed


class TestSampledIndependent:
    """Tests of the sampled_independent function."""

    def test_structurally_independent(self, expr, settings):
        assert sampled_independent(expr("exp(t)"), ["x1"], {"t": (0.1, 2.0)}, settings)

    def test_cancelling_dependence(self, expr, settings):
        e = expr("exp(x1)*exp(-x1) + t")
        box = {"x1": (-2.0, 2.0), "t": (0.1, 2.0)}
        assert sampled_independent(e, ["x1"], box, settings)

    def test_dependent(self, expr, settings):
        assert not sampled_independent(expr("x1 + t"), ["x1"], {"x1": (-2.0, 2.0), "t": (0.1, 2.0)}, settings)
