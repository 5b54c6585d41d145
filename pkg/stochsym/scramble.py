"""
Scrambled integrable equations.

An integrable equation ``dx = (p0 + p1 t) dt + (q0 + q1 t) dw`` admits ``d/dx``. Pulling it back
through a random monotone map ``x = Phi(y, t)`` gives an equation in ``y`` that must admit the
pulled-back field ``(1 / Phi_y) d/dy`` and must integrate back to the same coefficients.

The maps are drawn from the family ``Phi(y, t) = a exp(k t) y + b exp(c y)`` with
``a in [0.5, 2]``, ``k in [-0.5, 0.5]``, ``b in [0.1, 1]`` and ``c in [0.2, 1]``, all rounded to
three decimals. Every member is strictly increasing in ``y``.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .config import Settings, resolve
from .expr import ONE, Num, Var, VariableSpace, exp, simplify
from .model import GeneralizedSystem, VectorField
from .reduce import IntegrableScalarForm
from .transform import ChangeOfVariables, Direction, transform_scalar

logger = logging.getLogger(__name__)

#: dict: Parameter ranges of the map family
MAP_RANGES = {"a": (0.5, 2.0), "k": (-0.5, 0.5), "b": (0.1, 1.0), "c": (0.2, 1.0)}

#: dict: Parameter ranges of the seed coefficients ``p0 + p1 t`` and ``q0 + q1 t``
FORM_RANGES = {"p0": (-1.0, 1.0), "p1": (-1.0, 1.0), "q0": (0.5, 1.5), "q1": (0.0, 1.0)}


@dataclass(frozen=True)
class ScrambleCase:
    """A seed integrable equation, the map that scrambles it, and the result."""

    form: IntegrableScalarForm
    "The seed equation in ``x``."

    cov: ChangeOfVariables
    "``x = Phi(y, t)``."

    system: GeneralizedSystem
    "The scrambled equation in ``y``."

    symmetry: VectorField
    "``(1 / Phi_y) d/dy``, the image of ``d/dx``."


def _draw(rng: np.random.Generator, ranges: Dict[str, tuple]) -> Dict[str, float]:
    return {name: round(float(rng.uniform(lo, hi)), 3) for name, (lo, hi) in ranges.items()}


def random_monotone_map(rng: np.random.Generator, space: Optional[VariableSpace] = None) -> ChangeOfVariables:
    """Draw ``Phi(y, t) = a exp(k t) y + b exp(c y)`` from the documented family."""
    space = space or VariableSpace(1, 1)
    p = _draw(rng, MAP_RANGES)
    y, t = Var(space.state_names[0]), Var("t")
    forward = Num(p["a"]) * exp(Num(p["k"]) * t) * y + Num(p["b"]) * exp(Num(p["c"]) * y)
    name = "scramble(a={a}, k={k}, b={b}, c={c})".format(**p)
    return ChangeOfVariables(space, (forward,), None, name=name)


def random_integrable(rng: np.random.Generator) -> IntegrableScalarForm:
    """Draw ``dx = (p0 + p1 t) dt + (q0 + q1 t) dw``; the diffusion stays positive for ``t >= 0``."""
    p = _draw(rng, FORM_RANGES)
    t = Var("t")
    return IntegrableScalarForm(
        simplify(Num(p["p0"]) + Num(p["p1"]) * t),
        simplify(Num(p["q0"]) + Num(p["q1"]) * t),
    )


def scramble(
    form: IntegrableScalarForm, cov: ChangeOfVariables, settings: Optional[Settings] = None
) -> ScrambleCase:
    """
    Pull ``form`` back through ``cov`` and pull back its symmetry ``d/dx`` too.

    Raises:
        MonotonicityError: If ``cov`` is not strictly monotone on the default box
    """
    settings = resolve(settings)
    system = transform_scalar(form.system(), cov, Direction.PULLBACK, settings)
    slope = cov.jacobian()[0][0]
    symmetry = VectorField(cov.space, [simplify(ONE / slope)], "X")
    logger.debug("scrambled %s through %s", form.solution_text(), cov.name)
    return ScrambleCase(form, cov, system, symmetry)


def scrambled_cases(count: int = 20, seed: int = 42, settings: Optional[Settings] = None) -> List[ScrambleCase]:
    """``count`` reproducible scrambles drawn from one generator seeded with ``seed``."""
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(count):
        form = random_integrable(rng)
        cov = random_monotone_map(rng)
        case = scramble(form, cov, settings)
        cases.append(case)
    return cases
