"""
Rule-based antiderivatives and inverses of scalar maps.

Both operations are small pattern tables over expression trees and neither is complete. When no
rule applies they return ``None`` and callers fall back to quadrature or numeric root finding.
Every symbolic result is checked by sampling before it is returned.
"""

import logging
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .config import Settings, resolve
from .exceptions import DegenerateSamplingError, InversionError
from .expr import (
    ZERO,
    Add,
    ArrayLike,
    Div,
    Expression,
    Func,
    Mul,
    Neg,
    Num,
    Pow,
    Sub,
    Var,
    cos,
    differentiate,
    evaluate_array,
    exp,
    is_zero,
    join_product,
    log,
    product_factors,
    simplify,
    sin,
    sqrt,
    substitute,
    sum_terms,
    to_text,
    total,
)
from .sampling import completed, relative_gap, sample

logger = logging.getLogger(__name__)

#: int: How deeply rules may nest (distribution over a sum, then a rule per term)
MAX_RULE_DEPTH = 3

#: int: Outward bracket steps tried before numeric inversion gives up
MAX_BRACKET_STEPS = 200

#: int: Safeguarded Newton iterations for numeric inversion
MAX_NEWTON_ITERATIONS = 100

_PLACEHOLDER = "_inverse_target"

Factors = List[Tuple[Expression, float]]


def _free_of(e: Expression, var: str) -> bool:
    return var not in e.variables


def _linear_slope(e: Expression, var: str) -> Optional[Expression]:
    """The constant slope of ``e`` in ``var``, or ``None`` if ``e`` is not linear in it."""
    slope = differentiate(e, var)
    if not _free_of(slope, var) or is_zero(slope):
        return None
    return slope


# Antiderivatives


def _power_rule(base: Expression, k: float, var: str) -> Optional[Expression]:
    slope = _linear_slope(base, var)
    if slope is None:
        return None
    if k == -1:
        return Div(log(base), slope)
    return Div(Pow(base, Num(k + 1)), Mul(Num(k + 1), slope))


def _exponential_rule(argument: Expression, k: float, var: str) -> Optional[Expression]:
    slope = _linear_slope(argument, var)
    if slope is None:
        return None
    return Div(exp(Mul(Num(k), argument)), Mul(Num(k), slope))


def _single_factor(base: Expression, k: float, var: str, depth: int) -> Optional[Expression]:
    """Antiderivative of ``base^k`` for the shapes with a closed form."""
    if isinstance(base, (Add, Sub)):
        if k == 1:
            return _antiderivative(base, var, depth + 1)
        return _power_rule(base, k, var)
    if isinstance(base, Var):
        return _power_rule(base, k, var)
    if isinstance(base, Func):
        if base.name == "exp":
            return _exponential_rule(base.arg, k, var)
        if base.name == "sqrt":
            return _power_rule(base.arg, k / 2, var)
        if k != 1:
            return None
        slope = _linear_slope(base.arg, var)
        if slope is None:
            return None
        if base.name == "sin":
            return Div(Neg(cos(base.arg)), slope)
        if base.name == "cos":
            return Div(sin(base.arg), slope)
        # log
        return Div(Sub(Mul(base.arg, base), base.arg), slope)
    if isinstance(base, Pow) and isinstance(base.left, Num) and base.left.value > 0 and k == 1:
        slope = _linear_slope(base.right, var)
        if slope is None or base.left.value == 1:
            return None
        return Div(base, Mul(log(base.left), slope))
    return None


def _distribute(varying: Factors, var: str, depth: int) -> Optional[Expression]:
    """Multiply a sum factor out and integrate term by term."""
    for index, (base, k) in enumerate(varying):
        if k != 1 or not isinstance(base, (Add, Sub)):
            continue
        others = varying[:index] + varying[index + 1 :]
        parts = []
        for sign, term in sum_terms(base):
            piece = simplify(join_product(sign, [(term, 1.0), *others]))
            result = _antiderivative(piece, var, depth + 1)
            if result is None:
                break
            parts.append(result)
        else:
            return total(parts)
    return None


def _substitute_inner(varying: Factors, var: str) -> Optional[Expression]:
    """
    One level of substitution: ``g(u)^k * rest`` where ``rest / u'`` is free of ``var``.

    ``u`` is a factor's base (power rule) or the argument of an exponential factor.
    """
    for index, (base, k) in enumerate(varying):
        rest = join_product(1.0, varying[:index] + varying[index + 1 :])
        if isinstance(base, Func) and base.name == "exp":
            inner = base.arg
            outer: Expression = Div(exp(Mul(Num(k), inner)), Num(k))
        else:
            if isinstance(base, Func) and base.name == "sqrt":
                inner, k = base.arg, k / 2
            else:
                inner = base
            outer = log(inner) if k == -1 else Div(Pow(inner, Num(k + 1)), Num(k + 1))
        slope = differentiate(inner, var)
        if is_zero(slope):
            continue
        ratio = simplify(Div(rest, slope))
        if _free_of(ratio, var):
            return Mul(ratio, outer)
    return None


def _antiderivative(e: Expression, var: str, depth: int) -> Optional[Expression]:
    if depth > MAX_RULE_DEPTH:
        return None
    if _free_of(e, var):
        return Mul(e, Var(var))
    if isinstance(e, (Add, Sub, Neg)):
        parts = []
        for sign, term in sum_terms(e):
            result = _antiderivative(term, var, depth)
            if result is None:
                return None
            parts.append(result if sign > 0 else Neg(result))
        return total(parts)

    coefficient, factors = product_factors(e)
    constant = [(base, k) for base, k in factors if _free_of(base, var)]
    varying = [(base, k) for base, k in factors if not _free_of(base, var)]
    result = None
    if len(varying) == 1:
        result = _single_factor(varying[0][0], varying[0][1], var, depth)
    if result is None:
        # Distribution is tried before substitution: exp(y) * (c + exp(y)) must integrate to
        # c exp(y) + exp(2y)/2, not to (c + exp(y))^2/2.
        result = _distribute(varying, var, depth)
    if result is None:
        result = _substitute_inner(varying, var)
    if result is None:
        return None
    return Mul(join_product(coefficient, constant), result)


def _verified(
    candidate: Expression, integrand: Expression, var: str, box: Mapping, settings: Settings
) -> bool:
    check = differentiate(candidate, var)
    expressions = [integrand, candidate, check]
    try:
        points = sample(completed(box, expressions, settings.seed), expressions, settings)
    except DegenerateSamplingError:
        return False
    return relative_gap(check, integrand, points) < settings.integration_check_tolerance


def integrate_rule_based(
    e: Expression,
    var: str,
    box: Optional[Mapping[str, Tuple[float, float]]] = None,
    settings: Optional[Settings] = None,
) -> Optional[Expression]:
    """
    Find an antiderivative of ``e`` with respect to ``var`` by table lookup.

    The table covers linearity, constant factors, powers of linear expressions (with ``log`` for
    the reciprocal, principal branch), ``exp``, ``sin``, ``cos`` and ``log`` of linear arguments,
    distribution of a product over a sum factor and one level of substitution. Other variables
    are treated as constants, so the result is defined up to a function of them.

    Args:
        e: The integrand
        var: The integration variable
        box: Sampling intervals used to verify the result; defaults are filled in
        settings: Seed, point count and ``integration_check_tolerance``

    Returns:
        A verified antiderivative, or ``None`` when no rule applies
    """
    settings = resolve(settings)
    integrand = simplify(e)
    candidate = _antiderivative(integrand, var, 0)
    if candidate is None:
        logger.debug("no integration rule for %s d%s", to_text(integrand), var)
        return None
    candidate = simplify(candidate)
    if not _verified(candidate, integrand, var, box or {}, settings):
        logger.debug("rejected antiderivative %s of %s", to_text(candidate), to_text(integrand))
        return None
    logger.debug("integral of %s d%s = %s", to_text(integrand), var, to_text(candidate))
    return candidate


# Inverses


def _peel(e: Expression, var: str, target: Expression) -> Optional[Expression]:
    """Undo invertible outer layers of ``e`` until only ``var`` is left."""
    if e == Var(var):
        return target
    if _free_of(e, var):
        return None
    if isinstance(e, Add):
        if _free_of(e.right, var):
            return _peel(e.left, var, Sub(target, e.right))
        if _free_of(e.left, var):
            return _peel(e.right, var, Sub(target, e.left))
        return None
    if isinstance(e, Sub):
        if _free_of(e.right, var):
            return _peel(e.left, var, Add(target, e.right))
        if _free_of(e.left, var):
            return _peel(e.right, var, Sub(e.left, target))
        return None
    if isinstance(e, Neg):
        return _peel(e.arg, var, Neg(target))
    if isinstance(e, Mul):
        if _free_of(e.left, var):
            return _peel(e.right, var, Div(target, e.left))
        if _free_of(e.right, var):
            return _peel(e.left, var, Div(target, e.right))
        return None
    if isinstance(e, Div):
        if _free_of(e.right, var):
            return _peel(e.left, var, Mul(target, e.right))
        if _free_of(e.left, var):
            return _peel(e.right, var, Div(e.left, target))
        return _mobius(e, var, target)
    if isinstance(e, Pow):
        if isinstance(e.right, Num) and e.right.value != 0:
            return _peel(e.left, var, Pow(target, Num(1.0 / e.right.value)))
        if isinstance(e.left, Num) and e.left.value > 0 and e.left.value != 1:
            return _peel(e.right, var, Div(log(target), log(e.left)))
        return None
    if isinstance(e, Func):
        if e.name == "exp":
            return _peel(e.arg, var, log(target))
        if e.name == "log":
            return _peel(e.arg, var, exp(target))
        if e.name == "sqrt":
            return _peel(e.arg, var, Pow(target, Num(2.0)))
    return None


def _mobius(e: Div, var: str, target: Expression) -> Optional[Expression]:
    """``(p y + a) / (q y + b) = x``  gives  ``y = (a - b x) / (q x - p)``."""
    p = _linear_slope(e.left, var)
    q = _linear_slope(e.right, var)
    if p is None or q is None:
        return None
    a = simplify(substitute(e.left, {var: ZERO}))
    b = simplify(substitute(e.right, {var: ZERO}))
    return Div(Sub(a, Mul(b, target)), Sub(Mul(q, target), p))


def _exponential_polynomial(e: Expression, var: str) -> Optional[Tuple[Dict[float, Expression], Expression]]:
    """
    Write ``e`` as ``sum_r c_r exp(r var) + c`` with constant rates ``r``.

    Returns:
        The coefficient per rate and the constant part, or ``None`` if ``e`` has another shape
    """
    rates: Dict[float, List[Expression]] = {}
    constant: List[Expression] = []
    for sign, term in sum_terms(e):
        if _free_of(term, var):
            constant.append(term if sign > 0 else Neg(term))
            continue
        coefficient, factors = product_factors(term)
        varying = [(base, k) for base, k in factors if not _free_of(base, var)]
        if len(varying) != 1:
            return None
        base, power = varying[0]
        if not (isinstance(base, Func) and base.name == "exp"):
            return None
        slope = _linear_slope(base.arg, var)
        if not isinstance(slope, Num):
            return None
        offset = simplify(substitute(base.arg, {var: ZERO}))
        others = [(b, k) for b, k in factors if _free_of(b, var)]
        scale = Mul(join_product(sign * coefficient, others), exp(Mul(Num(power), offset)))
        rates.setdefault(power * slope.value, []).append(scale)
    return {rate: simplify(total(parts)) for rate, parts in rates.items()}, simplify(total(constant))


def _exponential_candidates(e: Expression, var: str, target: Expression) -> List[Expression]:
    """Inverses of ``A exp(2 r y) + B exp(r y) + C`` (or ``B exp(r y) + C``) by the quadratic formula."""
    shape = _exponential_polynomial(e, var)
    if shape is None:
        return []
    by_rate, constant = shape
    rates = sorted(by_rate, key=abs)
    shifted = Sub(target, constant)
    if len(rates) == 1:
        (rate,) = rates
        return [Div(log(Div(shifted, by_rate[rate])), Num(rate))]
    if len(rates) != 2 or rates[1] != 2 * rates[0]:
        return []
    rate = rates[0]
    a, b = by_rate[2 * rate], by_rate[rate]
    root = sqrt(Add(Pow(b, Num(2.0)), Mul(Mul(Num(4.0), a), shifted)))
    denominator = Mul(Num(2.0), a)
    return [
        Div(log(Div(Add(Neg(b), root), denominator)), Num(rate)),
        Div(log(Div(Sub(Neg(b), root), denominator)), Num(rate)),
    ]


def _round_trip_holds(
    candidate: Expression, forward: Expression, var: str, box: Mapping, settings: Settings
) -> bool:
    composed = substitute(candidate, {_PLACEHOLDER: forward})
    try:
        points = sample(completed(box, [forward, composed], settings.seed), [forward, composed], settings)
    except DegenerateSamplingError:
        return False
    return relative_gap(composed, Var(var), points) < settings.roundtrip_tolerance


def invert_symbolic(
    forward: Expression,
    var: str,
    box: Optional[Mapping[str, Tuple[float, float]]] = None,
    settings: Optional[Settings] = None,
    target: Optional[str] = None,
) -> Optional[Expression]:
    """
    Solve ``x = forward(var, ...)`` for ``var``.

    Tried in order: peeling invertible outer layers (sums, products and quotients by free
    factors, constant powers, ``exp``/``log``/``sqrt``), the linear-fractional formula, and the
    quadratic formula in ``exp(r var)``. A candidate is accepted only if ``candidate(forward(var))``
    equals ``var`` at sampled points of ``box``.

    Args:
        forward: The map, monotone in ``var``
        var: The variable to solve for
        box: Sampling intervals for the round-trip check; defaults are filled in
        settings: Seed, point count and ``roundtrip_tolerance``
        target: Name of the new variable in the result; defaults to ``var``

    Returns:
        The inverse as an expression in ``target`` and the other variables, or ``None``
    """
    settings = resolve(settings)
    forward = simplify(forward)
    placeholder = Var(_PLACEHOLDER)
    candidates: List[Expression] = []
    peeled = _peel(forward, var, placeholder)
    if peeled is not None:
        candidates.append(peeled)
    candidates.extend(_exponential_candidates(forward, var, placeholder))

    for candidate in candidates:
        candidate = simplify(candidate)
        if _round_trip_holds(candidate, forward, var, box or {}, settings):
            result = simplify(substitute(candidate, {_PLACEHOLDER: Var(target or var)}))
            logger.debug("inverse of %s in %s: %s", to_text(forward), var, to_text(result))
            return result
    logger.debug("no symbolic inverse of %s in %s", to_text(forward), var)
    return None


def invert_numeric(
    forward: Expression,
    slope: Expression,
    var: str,
    values: ArrayLike,
    point: Mapping[str, ArrayLike],
    tolerance: float = 1e-12,
    start: ArrayLike = 0.0,
) -> np.ndarray:
    """
    Solve ``forward(var, point) = values`` elementwise for a map monotone in ``var``.

    Each side of the bracket around ``start`` moves outward with a doubling step. A step landing
    where the map is not finite is halved and retried, so the bracket stays where the map is
    defined. The bracket is then refined by Newton steps that fall back to bisection whenever a
    step leaves it. Entries of ``values`` that are not finite give ``nan``.

    Args:
        forward: The map
        slope: Its derivative in ``var``
        var: The unknown
        values: Right-hand sides (one per point in a batch)
        point: Values of the other variables
        tolerance: Tolerance on the root, relative once the root exceeds one in size
        start: Initial guess, where the map must be defined

    Raises:
        InversionError: If the map is undefined at ``start`` or no sign change is found

    Returns:
        The roots as an array
    """
    targets = np.atleast_1d(np.asarray(values, dtype=float))
    size = targets.size
    wanted = np.isfinite(targets)

    def residual(y: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            return evaluate_array(forward, {**point, var: y}, size) - targets

    centre = np.broadcast_to(np.asarray(start, dtype=float), (size,)).copy()
    f_centre = residual(centre)
    if not np.all(np.isfinite(f_centre[wanted])):
        raise InversionError(f"{to_text(forward)} is not defined at the start value")
    lo, f_lo, step_lo = centre.copy(), f_centre.copy(), np.ones(size)
    hi, f_hi, step_hi = centre.copy(), f_centre.copy(), np.ones(size)

    def unbracketed() -> np.ndarray:
        return wanted & (np.sign(f_lo) * np.sign(f_hi) > 0)

    for _ in range(MAX_BRACKET_STEPS):
        open_ = unbracketed()
        if not open_.any():
            break
        trial = lo - step_lo
        f_trial = residual(trial)
        moved = open_ & np.isfinite(f_trial)
        lo, f_lo = np.where(moved, trial, lo), np.where(moved, f_trial, f_lo)
        step_lo = np.where(open_, np.where(moved, 2 * step_lo, 0.5 * step_lo), step_lo)

        trial = hi + step_hi
        f_trial = residual(trial)
        moved = open_ & np.isfinite(f_trial)
        hi, f_hi = np.where(moved, trial, hi), np.where(moved, f_trial, f_hi)
        step_hi = np.where(open_, np.where(moved, 2 * step_hi, 0.5 * step_hi), step_hi)
    if unbracketed().any():
        raise InversionError(f"no sign change of {to_text(forward)} around the start value")

    # Orient every bracket so that the residual is negative at ``lo``.
    flip = f_lo > 0
    lo, hi = np.where(flip, hi, lo), np.where(flip, lo, hi)
    y = np.where(wanted, 0.5 * (lo + hi), np.nan)
    converged = ~wanted
    for _ in range(MAX_NEWTON_ITERATIONS):
        f = residual(y)
        with np.errstate(all="ignore"):
            df = evaluate_array(slope, {**point, var: y}, size)
            newton = y - f / df
        below = f < 0
        lo = np.where(below, y, lo)
        hi = np.where(below, hi, y)
        inside = np.isfinite(newton) & ((newton - lo) * (newton - hi) < 0)
        stepped = np.where(inside, newton, 0.5 * (lo + hi))
        converged = ~wanted | (np.abs(stepped - y) < tolerance * np.maximum(1.0, np.abs(y)))
        y = np.where(wanted, stepped, np.nan)
        if converged.all():
            break
    if not converged.all():
        logger.warning(
            "inverting %s: %d of %d roots did not converge in %d iterations",
            to_text(forward),
            int(np.count_nonzero(~converged)),
            size,
            MAX_NEWTON_ITERATIONS,
        )
    return y
