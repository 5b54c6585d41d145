"""Tests of scalar integration, system reduction and path reconstruction."""

import numpy as np
import pytest

from stochsym.exceptions import (
    CompatibilityError,
    DimensionError,
    IncrementMismatchError,
    NonIntegrableError,
    StageError,
    StraighteningError,
)
from stochsym.expr import Var
from stochsym.mc import PathEnsemble, TimeGrid, simulate, sup_errors, wiener_increments
from stochsym.model import SolvableChain
from stochsym.modelfile import loads_model
from stochsym.parsing import parse
from stochsym.reduce import (
    IntegrableScalarForm,
    integrate_scalar,
    reconstruct,
    reduce_chain,
    reduce_once,
    separable_detect,
    separable_system,
)
from stochsym.sampling import values_agree
from stochsym.transform import identity_map

BOX = {"x1": (-2.0, 2.0), "x2": (-2.0, 2.0), "t": (0.1, 2.0), "w1": (-2.0, 2.0), "w2": (-2.0, 2.0)}


def agrees(actual, text: str, space) -> bool:
    """Sampled agreement with a coefficient given as text."""
    return values_agree(actual, parse(text, space), {k: v for k, v in BOX.items() if k in space}, tolerance=1e-7)


class TestIntegrateScalar:
    """Tests of the integrate_scalar function."""

    def test_deterministic_symmetry(self, ex1, settings):
        result = integrate_scalar(ex1.system, ex1.symmetry("X"), settings=settings)
        assert agrees(result.form.drift, "1", ex1.space)
        assert agrees(result.form.diffusion, "1", ex1.space)
        assert result.integrable
        assert result.dimension == 0
        assert result.reduced is None

    def test_random_symmetry(self, ex6, settings):
        result = integrate_scalar(ex6.system, ex6.symmetry("X"), settings=settings)
        assert agrees(result.form.drift, "-(1 + t)", ex6.space)
        assert agrees(result.form.diffusion, "1", ex6.space)
        assert result.stages[0].cov.is_random

    def test_free_constant(self, ex7, settings):
        result = integrate_scalar(ex7.system, ex7.symmetry("X"), ex7.beta_c, settings=settings)
        assert agrees(result.form.drift, "0", ex7.space)
        assert agrees(result.form.diffusion, "1", ex7.space)

    def test_non_symmetry_raises_error(self, ex1, settings):
        with pytest.raises(StageError):
            integrate_scalar(ex1.system, ex1.symmetry("wrong"), settings=settings)

    def test_incompatible_symmetry_raises_error(self, ex8, settings):
        with pytest.raises(CompatibilityError):
            integrate_scalar(ex8.system, ex8.symmetry("X"), settings=settings)

    def test_system_of_equations_raises_error(self, ex3, settings):
        with pytest.raises(DimensionError):
            integrate_scalar(ex3.system, ex3.symmetry("X"), settings=settings)

    def test_summary(self, ex1, settings):
        summary = integrate_scalar(ex1.system, ex1.symmetry("X"), settings=settings).as_dict()
        assert summary["integrable"] is True
        assert summary["reduced"] is None
        assert summary["form"]["solution"].startswith("x(t) = x0 + int_0^t (")
        (stage,) = summary["stages"]
        assert stage["checks"][0]["verdict"] == "pass"

    def test_form_with_state_dependence_raises_error(self):
        with pytest.raises(NonIntegrableError):
            IntegrableScalarForm(Var("x1"), Var("t"))


class TestReduceOnce:
    """Tests of the reduce_once function."""

    def test_splits_off_last_equation(self, ex3, settings):
        result = reduce_once(ex3.system, ex3.symmetry("X"), ex3.map("Phi"), settings)
        (equation,) = result.reconstruction
        assert equation.index == 2
        assert agrees(equation.drift, "-x1", ex3.space)
        assert agrees(equation.diffusion[0], "x1", ex3.space)
        assert agrees(equation.diffusion[1], "1", ex3.space)
        reduced = result.reduced
        assert reduced.n == 1 and reduced.m == 2
        assert agrees(reduced.drift[0], "x1^2", reduced.space)
        assert agrees(reduced.diffusion[0][0], "1", reduced.space)
        assert agrees(reduced.diffusion[0][1], "0", reduced.space)
        assert not result.integrable

    def test_map_that_does_not_straighten_raises_error(self, ex3, settings):
        with pytest.raises(StraighteningError):
            reduce_once(ex3.system, ex3.symmetry("X"), identity_map(ex3.space), settings)

    def test_system_needs_a_map(self, ex3, settings):
        with pytest.raises(StraighteningError):
            reduce_once(ex3.system, ex3.symmetry("X"), None, settings)

    def test_scalar_equation_is_integrated(self, ex1, settings):
        result = reduce_once(ex1.system, ex1.symmetry("X"), None, settings, stage=3)
        assert result.stages[0].index == 3
        assert result.form is not None

    def test_initial_state(self, ex3, settings):
        result = reduce_once(ex3.system, ex3.symmetry("X"), ex3.map("Phi"), settings)
        assert np.allclose(result.initial_state([0.0, 0.0]), [1.0])


class TestReduceChain:
    """Tests of the reduce_chain function."""

    def test_two_stage_reduction(self, packaged, settings):
        model = packaged("ex3_chain.sde")
        chain = SolvableChain((model.symmetry("X1"), model.symmetry("X2")))
        result = reduce_chain(model.system, chain, [model.map("Phi"), None], settings)
        first, second = result.reconstruction
        assert agrees(first.drift, "-x1", model.space)
        assert agrees(second.drift, "1", model.space)
        assert result.reduced is None
        assert result.integrable
        assert len(result.stages[0].reports) == 2

    def test_linear_system(self, ex4, settings):
        chain = SolvableChain((ex4.symmetry("X1"), ex4.symmetry("X2")))
        result = reduce_chain(ex4.system, chain, [ex4.map("Phi"), None], settings)
        first, second = result.reconstruction
        assert agrees(first.drift, "exp(-t)", ex4.space)
        assert agrees(first.diffusion[1], "0.5*exp(-t)", ex4.space)
        assert agrees(second.drift, "2*exp(t)", ex4.space)
        assert agrees(second.diffusion[0], "0.2*exp(t)", ex4.space)

    def test_one_map_per_generator(self, ex4, settings):
        chain = SolvableChain((ex4.symmetry("X1"), ex4.symmetry("X2")))
        with pytest.raises(DimensionError):
            reduce_chain(ex4.system, chain, [ex4.map("Phi")], settings)

    def test_chain_longer_than_system_raises_error(self, ex4, settings):
        X1, X2 = ex4.symmetry("X1"), ex4.symmetry("X2")
        with pytest.raises(StageError):
            reduce_chain(ex4.system, SolvableChain((X1, X2, X1)), [None, None, None], settings)


class TestSeparable:
    """Tests of the separable form."""

    @pytest.mark.parametrize("text", ["x1", "3*x1"])
    def test_linear_beta_has_scaling_symmetry(self, scalar_space, settings, text: str):
        found = separable_detect(scalar_space, parse(text, scalar_space), settings=settings)
        assert found is not None
        X, cov = found
        assert X.coeffs == (Var("x1"),)
        assert cov.name == "log"

    @pytest.mark.parametrize("text", ["x1^2", "1", "exp(x1)"])
    def test_other_beta_has_none(self, scalar_space, settings, text: str):
        assert separable_detect(scalar_space, parse(text, scalar_space), settings=settings) is None

    def test_separable_equation_integrates(self, packaged, settings):
        model = packaged("separable_linear.sde")
        X, _ = separable_detect(model.space, model.separable[0], model.system.domain, settings)
        result = integrate_scalar(model.system, X, settings=settings)
        assert agrees(result.form.drift, "3*t - 1.5", model.space)
        assert agrees(result.form.diffusion, "3", model.space)

    def test_separable_system(self, scalar_space):
        system = separable_system(scalar_space, Var("x1"), parse("1 + t", scalar_space), parse("2", scalar_space))
        assert values_agree(system.diffusion[0][0], parse("2*x1", scalar_space), {"x1": (-2.0, 2.0)})


class TestReconstruct:
    """Tests of the reconstruct function."""

    def test_scalar_reconstruction_is_exact(self, ex1, settings):
        result = integrate_scalar(ex1.system, ex1.symmetry("X"), settings=settings)
        grid = TimeGrid.spanning(0.5, 0.01)
        increments = wiener_increments(grid, 1, 50, seed=7)
        empty = PathEnsemble(grid, increments, np.empty((50, grid.steps + 1, 0)), np.ones(50, dtype=bool))
        rebuilt = reconstruct(result, empty, [0.0])
        assert rebuilt.n == 1
        w = empty.wiener()[:, :, 0]
        expected = np.log(1.0 + grid.times[None, :] + w)
        done = rebuilt.completed
        assert done.any()
        assert np.allclose(rebuilt.states[done, :, 0], expected[done])

    def test_system_reconstruction_follows_direct_simulation(self, ex3, settings):
        result = reduce_once(ex3.system, ex3.symmetry("X"), ex3.map("Phi"), settings)
        y0 = [0.0, 0.0]
        grid = TimeGrid.spanning(0.2, 1e-3)
        reduced = simulate(result.reduced, result.initial_state(y0), grid, paths=100, seed=3, settings=settings)
        rebuilt = reconstruct(result, reduced, y0)
        direct = simulate(ex3.system, y0, grid, increments=reduced.increments, settings=settings)
        assert np.allclose(rebuilt.states[:, 0, :], 0.0)
        assert np.median(sup_errors(rebuilt.states, direct.states)) < 0.1

    def test_numeric_inverse_on_a_positive_domain(self, settings):
        # dx = dt + dw seen through x = y + log(y), which has no inverse in closed form
        text = (
            "[space]\nn = 1\nm = 1\n[domain]\nx1 = 0.5, 3\n[drift]\nf1 = (1 + 1/(2*(1+x1)^2))*x1/(1+x1)\n"
            "[diffusion]\ns11 = x1/(1+x1)\n[symmetry X]\nphi1 = x1/(1+x1)\n"
        )
        model = loads_model(text, settings)
        result = integrate_scalar(model.system, model.symmetry("X"), settings=settings)
        assert result.stages[0].cov.inverse is None
        grid = TimeGrid.spanning(0.5, 0.01)
        increments = wiener_increments(grid, 1, 50, seed=11)
        empty = PathEnsemble(grid, increments, np.empty((50, grid.steps + 1, 0)), np.ones(50, dtype=bool))
        rebuilt = reconstruct(result, empty, [1.0])
        assert rebuilt.completed.all()
        y = rebuilt.states[:, :, 0]
        w = empty.wiener()[:, :, 0]
        assert np.all(y > 0)
        assert np.allclose(y + np.log(y), 1.0 + grid.times[None, :] + w, atol=1e-8)

    def test_wrong_dimension_raises_error(self, ex1, settings):
        result = integrate_scalar(ex1.system, ex1.symmetry("X"), settings=settings)
        grid = TimeGrid.spanning(0.1, 0.01)
        ensemble = simulate(ex1.system, [0.0], grid, paths=5, settings=settings)
        with pytest.raises(IncrementMismatchError):
            reconstruct(result, ensemble, [0.0])
