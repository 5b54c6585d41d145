"""Tests of scrambled integrable equations."""

import numpy as np
import pytest

from stochsym.expr import VariableSpace, evaluate
from stochsym.reduce import integrate_scalar
from stochsym.sampling import values_agree
from stochsym.scramble import (
    FORM_RANGES,
    MAP_RANGES,
    random_integrable,
    random_monotone_map,
    scrambled_cases,
)
from stochsym.symcheck import check_symmetry

TIMES = {"t": (0.1, 2.0)}


def recovers_seed(case, settings) -> bool:
    """The scrambled equation admits its symmetry and integrates back to the seed diffusion."""
    if not check_symmetry(case.system, case.symmetry, settings).passed:
        return False
    result = integrate_scalar(case.system, case.symmetry, settings=settings)
    return values_agree(result.form.diffusion, case.form.diffusion, TIMES, tolerance=1e-7)


class TestGenerators:
    """Tests of the random map and seed generators."""

    def test_map_parameters_lie_in_range(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            cov = random_monotone_map(rng)
            inner = cov.name[len("scramble(") : -1]
            params = dict(part.split("=") for part in inner.split(", "))
            for name, (lo, hi) in MAP_RANGES.items():
                value = float(params[name])
                assert lo <= value <= hi
                assert value == round(value, 3)

    def test_maps_are_increasing(self):
        rng = np.random.default_rng(1)
        space = VariableSpace(1, 1)
        cov = random_monotone_map(rng, space)
        slope = cov.jacobian()[0][0]
        for y in np.linspace(-2.0, 2.0, 9):
            assert evaluate(slope, {"x1": float(y), "t": 1.0, "w1": 0.0}) > 0

    def test_seed_diffusion_is_positive(self):
        rng = np.random.default_rng(2)
        lo = FORM_RANGES["q0"][0]
        for _ in range(10):
            form = random_integrable(rng)
            for t in (0.0, 1.0, 2.0):
                assert evaluate(form.diffusion, {"t": t}) >= lo


class TestScrambledCases:
    """Tests of the scrambled_cases function."""

    def test_same_seed_same_cases(self, settings):
        first = [case.cov.name for case in scrambled_cases(3, seed=7, settings=settings)]
        second = [case.cov.name for case in scrambled_cases(3, seed=7, settings=settings)]
        assert first == second

    def test_other_seed_other_cases(self, settings):
        first = [case.cov.name for case in scrambled_cases(3, seed=7, settings=settings)]
        second = [case.cov.name for case in scrambled_cases(3, seed=8, settings=settings)]
        assert first != second

    def test_scrambled_equations_integrate_back(self, settings):
        for case in scrambled_cases(3, seed=42, settings=settings):
            assert recovers_seed(case, settings), case.cov.name

    def test_scrambled_equation_is_not_trivial(self, settings):
        (case,) = scrambled_cases(1, seed=42, settings=settings)
        assert case.system.drift[0].depends_on("x1")

    @pytest.mark.slow
    def test_twenty_scrambles(self, settings):
        cases = scrambled_cases(20, seed=42, settings=settings)
        assert len(cases) == 20
        assert all(recovers_seed(case, settings) for case in cases)
