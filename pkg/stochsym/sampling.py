"""
Quasi-random sampling of expressions over boxes.

Every pass/fail decision in the package is made by evaluating symbolic residuals at
low-discrepancy points. Points near singular loci (zeros of denominators, non-positive
arguments of ``log``/``sqrt``) are discarded using a guard band.
"""

import logging
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from .config import Settings, resolve
from .exceptions import DegenerateSamplingError
from .expr import Expression, VariableSpace, evaluate_array, singular_subexpressions

logger = logging.getLogger(__name__)

Box = Dict[str, Tuple[float, float]]
Samples = Dict[str, np.ndarray]

#: tuple: Default interval for state and Wiener variables
DEFAULT_STATE_INTERVAL = (-2.0, 2.0)

#: tuple: State interval used when an expression is singular at or below zero
SHIFTED_STATE_INTERVAL = (0.1, 2.1)

#: tuple: Default time interval
DEFAULT_TIME_INTERVAL = (0.1, 2.0)

#: int: Largest oversampling factor tried before giving up
MAX_OVERSAMPLING = 64


def quasi_random(box: Mapping[str, Tuple[float, float]], count: int, seed: int) -> Samples:
    """
    Scrambled Halton points in ``box``.

    The sequence is deterministic for a given seed and its prefixes do not depend on ``count``.
    """
    names = sorted(box)
    if not names:
        return {}
    sampler = qmc.Halton(d=len(names), scramble=True, seed=seed)
    unit = sampler.random(count)
    lower = np.array([box[name][0] for name in names], dtype=float)
    upper = np.array([box[name][1] for name in names], dtype=float)
    scaled = lower + unit * (upper - lower)
    return {name: scaled[:, index].copy() for index, name in enumerate(names)}


def usable(expressions: Sequence[Expression], points: Mapping[str, np.ndarray], guard: float) -> np.ndarray:
    """
    Mask of points where all ``expressions`` are finite and away from their singular loci.
    """
    size = len(next(iter(points.values()))) if points else 1
    mask = np.ones(size, dtype=bool)
    for expression in expressions:
        for kind, sub in singular_subexpressions(expression):
            values = evaluate_array(sub, points, size)
            if kind == "nonzero":
                mask &= np.abs(values) > guard
            else:
                mask &= values > guard
        mask &= np.isfinite(evaluate_array(expression, points, size))
    return mask


def sample(
    box: Mapping[str, Tuple[float, float]],
    expressions: Sequence[Expression],
    settings: Optional[Settings] = None,
    count: Optional[int] = None,
) -> Samples:
    """
    Draw ``count`` usable quasi-random points for ``expressions``.

    Args:
        box: Interval per variable
        expressions: The expressions that must be evaluable at every returned point
        settings: Seed, point count and guard band
        count: Overrides ``settings.points``

    Raises:
        DegenerateSamplingError: If not enough usable points are found after oversampling

    Returns:
        A mapping from variable name to an array of ``count`` values
    """
    settings = resolve(settings)
    count = settings.points if count is None else count
    if not box:
        return {}
    factor = 2
    found = 0
    while factor <= MAX_OVERSAMPLING:
        candidates = quasi_random(box, count * factor, settings.seed)
        mask = usable(expressions, candidates, settings.guard_band)
        found = int(mask.sum())
        if found >= count:
            return {name: values[mask][:count] for name, values in candidates.items()}
        factor *= 2
    raise DegenerateSamplingError(count, found)


def _changes_sign(expressions: Sequence[Expression], points: Mapping[str, np.ndarray]) -> bool:
    size = len(next(iter(points.values()))) if points else 1
    for expression in expressions:
        for kind, sub in singular_subexpressions(expression):
            if kind != "nonzero":
                continue
            values = evaluate_array(sub, points, size)
            values = values[np.isfinite(values)]
            if values.size and values.min() < 0 < values.max():
                return True
    return False


def _needs_shift(name: str, box: Box, expressions: Sequence[Expression], seed: int) -> bool:
    """Whether ``name`` should move to the shifted interval: singular at or below zero, or a pole inside."""
    below = dict(box)
    below[name] = (box[name][0], 0.0)
    if not bool(np.all(usable(expressions, quasi_random(below, 256, seed), 1e-12))):
        return True
    shifted = dict(box)
    shifted[name] = SHIFTED_STATE_INTERVAL
    return _changes_sign(expressions, quasi_random(box, 256, seed)) and not _changes_sign(
        expressions, quasi_random(shifted, 256, seed)
    )


def box_for(
    names: Iterable[str],
    expressions: Iterable[Expression] = (),
    seed: int = 42,
    base: Optional[Mapping[str, Tuple[float, float]]] = None,
) -> Box:
    """
    Default intervals for an arbitrary set of variable names.

    ``t`` gets ``[0.1, 2]``, Wiener variables ``[-2, 2]``. Every other name is treated as a state
    variable: ``[-2, 2]``, shifted to ``[0.1, 2.1]`` when some expression has a pole, a logarithm
    or a root that is singular at non-positive values of it (found by sampling). Intervals in
    ``base`` are kept as they are.
    """
    expressions = list(expressions)
    box: Box = dict(base or {})
    fresh = [name for name in names if name not in box]
    for name in fresh:
        box[name] = DEFAULT_TIME_INTERVAL if name == "t" else DEFAULT_STATE_INTERVAL
    for name in fresh:
        if name == "t" or name.startswith("w"):
            continue
        relevant = [e for e in expressions if e.depends_on(name)]
        if relevant and _needs_shift(name, box, relevant, seed):
            logger.debug("shifting default interval of %s away from zero", name)
            box[name] = SHIFTED_STATE_INTERVAL
    return box


def default_box(space: VariableSpace, expressions: Iterable[Expression] = (), seed: int = 42) -> Box:
    """The sampling box used when a model does not declare a domain; see :func:`box_for`."""
    return box_for(space.names, expressions, seed)


def completed(box: Mapping[str, Tuple[float, float]], expressions: Iterable[Expression], seed: int = 42) -> Box:
    """``box`` extended with default intervals for any variable of ``expressions`` it lacks."""
    expressions = list(expressions)
    names = set().union(*(e.variables for e in expressions)) if expressions else set()
    return box_for(sorted(names), expressions, seed, base=box)


def max_abs(expression: Expression, points: Mapping[str, np.ndarray]) -> float:
    """Largest sampled absolute value (``nan`` entries are treated as infinite)."""
    size = len(next(iter(points.values()))) if points else 1
    values = np.abs(evaluate_array(expression, points, size))
    values = np.where(np.isfinite(values), values, np.inf)
    return float(values.max()) if values.size else 0.0


def relative_gap(
    left: Expression, right: Expression, points: Mapping[str, np.ndarray]
) -> float:
    """``max |left - right| / (1 + max |right|)`` over the sample."""
    size = len(next(iter(points.values()))) if points else 1
    a = evaluate_array(left, points, size)
    b = evaluate_array(right, points, size)
    gap = np.abs(a - b)
    gap = np.where(np.isfinite(gap), gap, np.inf)
    return float(gap.max() / (1.0 + np.abs(b).max())) if size else 0.0


def values_agree(
    left: Expression,
    right: Expression,
    box: Mapping[str, Tuple[float, float]],
    tolerance: float = 1e-9,
    settings: Optional[Settings] = None,
) -> bool:
    """Sampled equality of two expressions within a relative ``tolerance``."""
    points = sample(box, [left, right], settings)
    return relative_gap(left, right, points) < tolerance

