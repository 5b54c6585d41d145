"""
Immutable expression trees over the variables ``x1..xn``, ``t`` and ``w1..wm``.

Every scalar quantity in the package (drifts, diffusions, symmetry coefficients, maps and their
inverses) is an :class:`Expression`. Trees are frozen dataclasses, so they are hashable and safe
to share. The module provides exact differentiation, numeric evaluation (vectorized over numpy
arrays), substitution, printing in the expression grammar and a terminating rewrite system.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import quad_vec
from scipy.interpolate import RegularGridInterpolator

from .exceptions import DimensionError, DomainError
from .validation import MAX_DIMENSION, validate_int, validate_shape

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]
Point = Mapping[str, ArrayLike]

#: tuple: The unary functions of the expression language
FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt")

#: int: Upper bound on rewrite passes in :func:`simplify`
MAX_REWRITE_PASSES = 64


@dataclass(frozen=True)
class VariableSpace:
    """The state and noise dimensions, and the canonical variable names they imply."""

    n: int
    "Number of state variables ``x1..xn``."

    m: int
    "Number of Wiener variables ``w1..wm``."

    def __post_init__(self):
        validate_int(self.n, min_value=0, max_value=MAX_DIMENSION, raise_on_error=True)
        validate_int(self.m, min_value=1, max_value=MAX_DIMENSION, raise_on_error=True)

    @property
    def state_names(self) -> Tuple[str, ...]:
        """``("x1", ..., "xn")``."""
        return tuple(f"x{i}" for i in range(1, self.n + 1))

    @property
    def noise_names(self) -> Tuple[str, ...]:
        """``("w1", ..., "wm")``."""
        return tuple(f"w{k}" for k in range(1, self.m + 1))

    @property
    def names(self) -> Tuple[str, ...]:
        """All variable names, state first, then ``t``, then noise."""
        return (*self.state_names, "t", *self.noise_names)

    def __contains__(self, name: object) -> bool:
        return name in self.names

    def point(
        self, x: Sequence[ArrayLike] = (), t: ArrayLike = 0.0, w: Optional[Sequence[ArrayLike]] = None
    ) -> Dict[str, ArrayLike]:
        """
        Build a point (or a batch of points when values are arrays) of this space.

        Args:
            x: One value per state variable
            t: The time value
            w: One value per Wiener variable; zeros when omitted

        Raises:
            DimensionError: If ``x`` or ``w`` has the wrong length

        Returns:
            A mapping from variable name to value
        """
        w = [0.0] * self.m if w is None else w
        validate_shape(len(x), self.n, "state values", raise_on_error=True)
        validate_shape(len(w), self.m, "Wiener values", raise_on_error=True)
        values: Dict[str, ArrayLike] = dict(zip(self.state_names, x))
        values["t"] = t
        values.update(zip(self.noise_names, w))
        return values

    def reduced(self, n: int) -> "VariableSpace":
        """The space with the same noise and ``n`` state variables."""
        return VariableSpace(n, self.m)


class Expression:
    """
    Base class of all expression nodes.

    Arithmetic operators build new trees; plain Python numbers are coerced to :class:`Num`.
    """

    precedence = 5

    def __add__(self, other: "ExprLike") -> "Expression":
        return Add(self, as_expr(other))

    def __radd__(self, other: "ExprLike") -> "Expression":
        return Add(as_expr(other), self)

    def __sub__(self, other: "ExprLike") -> "Expression":
        return Sub(self, as_expr(other))

    def __rsub__(self, other: "ExprLike") -> "Expression":
        return Sub(as_expr(other), self)

    def __mul__(self, other: "ExprLike") -> "Expression":
        return Mul(self, as_expr(other))

    def __rmul__(self, other: "ExprLike") -> "Expression":
        return Mul(as_expr(other), self)

    def __truediv__(self, other: "ExprLike") -> "Expression":
        return Div(self, as_expr(other))

    def __rtruediv__(self, other: "ExprLike") -> "Expression":
        return Div(as_expr(other), self)

    def __pow__(self, other: "ExprLike") -> "Expression":
        return Pow(self, as_expr(other))

    def __neg__(self) -> "Expression":
        return Neg(self)

    def __str__(self) -> str:
        return to_text(self)

    @functools.cached_property
    def variables(self) -> frozenset:
        """The set of variable names referenced by this tree."""
        return free_variables(self)

    def depends_on(self, *names: str) -> bool:
        """Whether any of ``names`` occurs in this tree."""
        return any(name in self.variables for name in names)


ExprLike = Union[Expression, float, int]


@dataclass(frozen=True)
class Num(Expression):
    """A 64-bit float literal."""

    value: float

    @property
    def precedence(self) -> int:  # type: ignore[override]
        """Negative literals print like a negation."""
        return 4 if self.value < 0 or (self.value == 0 and math.copysign(1.0, self.value) < 0) else 5


@dataclass(frozen=True)
class Var(Expression):
    """A named variable."""

    name: str


@dataclass(frozen=True)
class Neg(Expression):
    """Unary minus."""

    arg: Expression
    precedence = 4


@dataclass(frozen=True)
class Func(Expression):
    """A unary function application: one of :data:`FUNCTIONS`."""

    name: str
    arg: Expression

    def __post_init__(self):
        if self.name not in FUNCTIONS:
            raise ValueError(f"Unsupported function '{self.name}'.")


@dataclass(frozen=True)
class Add(Expression):
    """Binary sum."""

    left: Expression
    right: Expression
    precedence = 1
    symbol = " + "


@dataclass(frozen=True)
class Sub(Expression):
    """Binary difference."""

    left: Expression
    right: Expression
    precedence = 1
    symbol = " - "


@dataclass(frozen=True)
class Mul(Expression):
    """Binary product."""

    left: Expression
    right: Expression
    precedence = 2
    symbol = "*"


@dataclass(frozen=True)
class Div(Expression):
    """Binary quotient."""

    left: Expression
    right: Expression
    precedence = 2
    symbol = "/"


@dataclass(frozen=True)
class Pow(Expression):
    """Power; the exponent may be a constant or a general expression."""

    left: Expression
    right: Expression
    precedence = 3
    symbol = "^"


BINARY = (Add, Sub, Mul, Div, Pow)

ZERO = Num(0.0)
ONE = Num(1.0)
HALF = Num(0.5)


def as_expr(value: ExprLike) -> Expression:
    """Coerce a number to :class:`Num`; expressions pass through."""
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return Num(float(value))
    raise TypeError(f"Cannot use {value!r} as an expression.")


def exp(e: ExprLike) -> Expression:
    """``exp(e)``."""
    return Func("exp", as_expr(e))


def log(e: ExprLike) -> Expression:
    """``log(e)`` (principal branch)."""
    return Func("log", as_expr(e))


def sin(e: ExprLike) -> Expression:
    """``sin(e)``."""
    return Func("sin", as_expr(e))


def cos(e: ExprLike) -> Expression:
    """``cos(e)``."""
    return Func("cos", as_expr(e))


def sqrt(e: ExprLike) -> Expression:
    """``sqrt(e)``."""
    return Func("sqrt", as_expr(e))


def total(terms: Iterable[ExprLike]) -> Expression:
    """Left-associated sum of ``terms``; zero when empty."""
    result: Optional[Expression] = None
    for term in terms:
        result = as_expr(term) if result is None else Add(result, as_expr(term))
    return ZERO if result is None else result


def is_zero(e: Expression) -> bool:
    """Structural test for the literal zero."""
    return isinstance(e, Num) and e.value == 0.0


# Printing


def _format_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _wrapped(e: Expression, min_precedence: int) -> str:
    text = to_text(e)
    return text if e.precedence >= min_precedence else f"({text})"


@functools.singledispatch
def to_text(e: Expression) -> str:
    """
    Print ``e`` in the expression grammar.

    Parsing the result yields a tree with the same value at every point.
    """
    raise NotImplementedError(f"Cannot print a {type(e).__name__}")


@to_text.register
def _(e: Num) -> str:
    if e.value < 0:
        return "-" + _format_number(-e.value)
    return _format_number(abs(e.value))


@to_text.register
def _(e: Var) -> str:
    return e.name


@to_text.register
def _(e: Neg) -> str:
    return "-" + _wrapped(e.arg, 4)


@to_text.register
def _(e: Func) -> str:
    return f"{e.name}({to_text(e.arg)})"


def _binary_text(e: Union[Add, Sub, Mul, Div, Pow]) -> str:
    if isinstance(e, Pow):
        # A signed base needs parentheses: -x^2 reads as -(x^2).
        return f"{_wrapped(e.left, 5)}^{_wrapped(e.right, 4)}"
    return f"{_wrapped(e.left, e.precedence)}{e.symbol}{_wrapped(e.right, e.precedence + 1)}"


for _cls in BINARY:
    to_text.register(_cls, _binary_text)


# Structure


@functools.singledispatch
def free_variables(e: Expression) -> frozenset:
    """Return the variable names occurring in ``e``."""
    raise NotImplementedError(f"Cannot inspect a {type(e).__name__}")


@free_variables.register
def _(e: Num) -> frozenset:
    return frozenset()


@free_variables.register
def _(e: Var) -> frozenset:
    return frozenset((e.name,))


@free_variables.register(Neg)
@free_variables.register(Func)
def _(e: Union[Neg, Func]) -> frozenset:
    return e.arg.variables


def _binary_variables(e: Union[Add, Sub, Mul, Div, Pow]) -> frozenset:
    return e.left.variables | e.right.variables


for _cls in BINARY:
    free_variables.register(_cls, _binary_variables)


@functools.singledispatch
def substitute(e: Expression, mapping: Mapping[str, Expression]) -> Expression:
    """
    Replace variables simultaneously according to ``mapping``.

    Variables absent from ``mapping`` are left untouched. The result is not simplified.
    """
    raise NotImplementedError(f"Cannot substitute into a {type(e).__name__}")


@substitute.register
def _(e: Num, mapping: Mapping[str, Expression]) -> Expression:
    return e


@substitute.register
def _(e: Var, mapping: Mapping[str, Expression]) -> Expression:
    return mapping.get(e.name, e)


@substitute.register
def _(e: Neg, mapping: Mapping[str, Expression]) -> Expression:
    return Neg(substitute(e.arg, mapping))


@substitute.register
def _(e: Func, mapping: Mapping[str, Expression]) -> Expression:
    return Func(e.name, substitute(e.arg, mapping))


def _binary_substitute(e: Union[Add, Sub, Mul, Div, Pow], mapping: Mapping[str, Expression]) -> Expression:
    return type(e)(substitute(e.left, mapping), substitute(e.right, mapping))


for _cls in BINARY:
    substitute.register(_cls, _binary_substitute)


def rename(e: Expression, mapping: Mapping[str, str]) -> Expression:
    """Rename variables; a convenience over :func:`substitute`."""
    return substitute(e, {old: Var(new) for old, new in mapping.items()})


def singular_subexpressions(e: Expression) -> List[Tuple[str, Expression]]:
    """
    Collect the subexpressions whose value decides whether ``e`` is defined.

    Returns:
        ``(kind, subexpression)`` pairs where ``kind`` is ``"nonzero"`` for denominators and
        bases raised to negative powers, and ``"positive"`` for arguments of ``log`` and ``sqrt``
    """
    found: List[Tuple[str, Expression]] = []
    stack: List[Expression] = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Func):
            if node.name in ("log", "sqrt"):
                found.append(("positive", node.arg))
            stack.append(node.arg)
        elif isinstance(node, Neg):
            stack.append(node.arg)
        elif isinstance(node, BINARY):
            if isinstance(node, Div):
                found.append(("nonzero", node.right))
            elif isinstance(node, Pow):
                exponent = node.right
                if not (isinstance(exponent, Num) and exponent.value >= 0):
                    found.append(("nonzero", node.left))
                if not (isinstance(exponent, Num) and exponent.value.is_integer()):
                    found.append(("positive", node.left))
            stack.extend((node.left, node.right))
    return found


# Differentiation


@functools.singledispatch
def _derive(e: Expression, var: str) -> Expression:
    raise NotImplementedError(f"Cannot differentiate a {type(e).__name__}")


@_derive.register
def _(e: Num, var: str) -> Expression:
    return ZERO


@_derive.register
def _(e: Var, var: str) -> Expression:
    return ONE if e.name == var else ZERO


@_derive.register
def _(e: Neg, var: str) -> Expression:
    return Neg(_derive(e.arg, var))


@_derive.register
def _(e: Add, var: str) -> Expression:
    return Add(_derive(e.left, var), _derive(e.right, var))


@_derive.register
def _(e: Sub, var: str) -> Expression:
    return Sub(_derive(e.left, var), _derive(e.right, var))


@_derive.register
def _(e: Mul, var: str) -> Expression:
    return Add(Mul(_derive(e.left, var), e.right), Mul(e.left, _derive(e.right, var)))


@_derive.register
def _(e: Div, var: str) -> Expression:
    numerator = Sub(Mul(_derive(e.left, var), e.right), Mul(e.left, _derive(e.right, var)))
    return Div(numerator, Pow(e.right, Num(2.0)))


@_derive.register
def _(e: Pow, var: str) -> Expression:
    base, exponent = e.left, e.right
    if var not in exponent.variables:
        return Mul(Mul(exponent, Pow(base, Sub(exponent, ONE))), _derive(base, var))
    # d(a^b) = a^b * (b' log a + b a' / a)
    return Mul(e, Add(Mul(_derive(exponent, var), log(base)), Div(Mul(exponent, _derive(base, var)), base)))


@_derive.register
def _(e: Func, var: str) -> Expression:
    inner = _derive(e.arg, var)
    if e.name == "exp":
        outer: Expression = e
    elif e.name == "log":
        return Div(inner, e.arg)
    elif e.name == "sin":
        outer = cos(e.arg)
    elif e.name == "cos":
        outer = Neg(sin(e.arg))
    else:
        return Div(inner, Mul(Num(2.0), e))
    return Mul(outer, inner)


@functools.lru_cache(maxsize=8192)
def differentiate(e: Expression, var: str) -> Expression:
    """
    Exact partial derivative of ``e`` with respect to ``var``, simplified.

    Args:
        e: The expression
        var: A variable name; names absent from ``e`` give zero

    Returns:
        The simplified derivative
    """
    if var not in e.variables:
        return ZERO
    return simplify(_derive(e, var))


def derivative(e: Expression, *variables: str) -> Expression:
    """Repeated partial derivative, e.g. ``derivative(e, "x1", "w1")``."""
    for var in variables:
        e = differentiate(e, var)
    return e


# Evaluation


def _check(condition: np.ndarray, e: Expression, detail: str) -> None:
    if np.any(condition):
        raise DomainError(to_text(e), detail)


@functools.singledispatch
def _evaluate(e: Expression, point: Point, strict: bool) -> ArrayLike:
    raise NotImplementedError(f"Cannot evaluate a {type(e).__name__}")


@_evaluate.register
def _(e: Num, point: Point, strict: bool) -> ArrayLike:
    return e.value


@_evaluate.register
def _(e: Var, point: Point, strict: bool) -> ArrayLike:
    try:
        return point[e.name]
    except KeyError as exc:
        raise DimensionError("a value", "none", f"variable '{e.name}'") from exc


@_evaluate.register
def _(e: Neg, point: Point, strict: bool) -> ArrayLike:
    return -_evaluate(e.arg, point, strict)


@_evaluate.register
def _(e: Add, point: Point, strict: bool) -> ArrayLike:
    return _evaluate(e.left, point, strict) + _evaluate(e.right, point, strict)


@_evaluate.register
def _(e: Sub, point: Point, strict: bool) -> ArrayLike:
    return _evaluate(e.left, point, strict) - _evaluate(e.right, point, strict)


@_evaluate.register
def _(e: Mul, point: Point, strict: bool) -> ArrayLike:
    return _evaluate(e.left, point, strict) * _evaluate(e.right, point, strict)


@_evaluate.register
def _(e: Div, point: Point, strict: bool) -> ArrayLike:
    numerator = _evaluate(e.left, point, strict)
    denominator = _evaluate(e.right, point, strict)
    if strict:
        _check(np.asarray(denominator) == 0, e, "division by zero")
    return np.true_divide(numerator, denominator)


@_evaluate.register
def _(e: Pow, point: Point, strict: bool) -> ArrayLike:
    base = np.asarray(_evaluate(e.left, point, strict), dtype=float)
    exponent = np.asarray(_evaluate(e.right, point, strict), dtype=float)
    if strict:
        integral = exponent == np.round(exponent)
        _check((base < 0) & ~integral, e, "negative base with non-integer exponent")
        _check((base == 0) & (exponent < 0), e, "zero raised to a negative power")
    return np.power(base, exponent)


_NUMPY_FUNCTIONS = {"exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos, "sqrt": np.sqrt}


@_evaluate.register
def _(e: Func, point: Point, strict: bool) -> ArrayLike:
    arg = _evaluate(e.arg, point, strict)
    if strict:
        if e.name == "log":
            _check(np.asarray(arg) <= 0, e, "logarithm of a non-positive value")
        elif e.name == "sqrt":
            _check(np.asarray(arg) < 0, e, "square root of a negative value")
    return _NUMPY_FUNCTIONS[e.name](arg)


def evaluate(e: Expression, point: Point, strict: bool = True) -> ArrayLike:
    """
    Evaluate ``e`` at a point, or at a batch of points given as equal-length arrays.

    Args:
        e: The expression
        point: Values for (at least) the variables of ``e``
        strict: Raise on singular operations instead of returning ``nan``/``inf``

    Raises:
        DomainError: In strict mode, when an operation is singular at the point, or the result overflows
        DimensionError: If a variable has no value

    Returns:
        A float for scalar points, otherwise an array
    """
    with np.errstate(all="ignore"):
        value = _evaluate(e, point, strict)
    if strict and not np.all(np.isfinite(value)):
        raise DomainError(to_text(e), "non-finite value")
    if np.ndim(value) == 0:
        return float(value)
    return value


def evaluate_array(e: Expression, point: Point, size: int, strict: bool = False) -> np.ndarray:
    """Evaluate and broadcast to a float array of length ``size``."""
    value = evaluate(e, point, strict=strict)
    return np.broadcast_to(np.asarray(value, dtype=float), (size,)).copy()


# Simplification


def _number(value: float) -> Optional[Num]:
    return Num(float(value)) if math.isfinite(value) else None


def _fold_function(name: str, value: float) -> Optional[Num]:
    if name == "log" and value <= 0 or name == "sqrt" and value < 0:
        return None
    with np.errstate(all="ignore"):
        return _number(float(_NUMPY_FUNCTIONS[name](value)))


def _fold_power(base: float, exponent: float) -> Optional[Num]:
    if base < 0 and not exponent.is_integer() or base == 0 and exponent < 0:
        return None
    with np.errstate(all="ignore"):
        return _number(float(np.power(base, exponent)))


def _flatten_product(e: Expression) -> Tuple[float, List[Tuple[Expression, float]]]:
    """Split a product into a numeric coefficient and ``(base, exponent)`` factors."""
    coefficient = 1.0
    factors: List[Tuple[Expression, float]] = []

    def visit(node: Expression, power: float) -> None:
        nonlocal coefficient
        if isinstance(node, Mul):
            visit(node.left, power)
            visit(node.right, power)
        elif isinstance(node, Div):
            visit(node.left, power)
            visit(node.right, -power)
        elif isinstance(node, Neg):
            coefficient = -coefficient
            visit(node.arg, power)
        elif isinstance(node, Num) and (node.value != 0 or power > 0):
            coefficient *= node.value**power
        elif isinstance(node, Pow) and isinstance(node.right, Num):
            factors.append((node.left, power * node.right.value))
        else:
            factors.append((node, power))

    visit(e, 1.0)

    merged: List[Tuple[Expression, float]] = []
    exponential: List[Expression] = []
    exp_slot: Optional[int] = None
    for base, power in factors:
        if isinstance(base, Func) and base.name == "exp":
            if exp_slot is None:
                exp_slot = len(merged)
                merged.append((base, 1.0))
            exponential.append(base.arg if power == 1 else Mul(Num(power), base.arg))
            continue
        for index, (seen, seen_power) in enumerate(merged):
            if seen == base:
                merged[index] = (seen, seen_power + power)
                break
        else:
            merged.append((base, power))
    if exp_slot is not None and (len(exponential) > 1 or merged[exp_slot][0].arg != exponential[0]):
        merged[exp_slot] = (exp(total(exponential)), 1.0)
    return coefficient, [(base, power) for base, power in merged if power != 0]


def _build_product(factors: Sequence[Tuple[Expression, float]]) -> Optional[Expression]:
    numerator = [base if power == 1 else Pow(base, Num(power)) for base, power in factors if power > 0]
    denominator = [base if power == -1 else Pow(base, Num(-power)) for base, power in factors if power < 0]
    top = None
    for factor in numerator:
        top = factor if top is None else Mul(top, factor)
    if not denominator:
        return top
    bottom = denominator[0]
    for factor in denominator[1:]:
        bottom = Mul(bottom, factor)
    return Div(ONE if top is None else top, bottom)


def _with_coefficient(coefficient: float, rest: Optional[Expression]) -> Expression:
    if rest is None or coefficient == 0:
        return Num(coefficient)
    if coefficient == 1:
        return rest
    if coefficient == -1:
        return Neg(rest)
    if isinstance(rest, Div):
        top = Num(coefficient) if rest.left == ONE else Mul(Num(coefficient), rest.left)
        return Div(top, rest.right)
    return Mul(Num(coefficient), rest)


def _split_coefficient(e: Expression) -> Tuple[float, Optional[Expression]]:
    if isinstance(e, Num):
        return e.value, None
    if isinstance(e, (Mul, Div)):
        coefficient, factors = _flatten_product(e)
        return coefficient, _build_product(factors)
    return 1.0, e


def _collect_product(e: Expression) -> Expression:
    coefficient, factors = _flatten_product(e)
    if coefficient == 0 or not math.isfinite(coefficient):
        return Num(coefficient) if coefficient == 0 else e
    return _with_coefficient(coefficient, _build_product(factors))


def _collect_sum(e: Expression) -> Expression:
    terms: List[Tuple[Expression, float]] = []
    constant = 0.0

    def visit(node: Expression, sign: float) -> None:
        nonlocal constant
        if isinstance(node, Add):
            visit(node.left, sign)
            visit(node.right, sign)
        elif isinstance(node, Sub):
            visit(node.left, sign)
            visit(node.right, -sign)
        elif isinstance(node, Neg):
            visit(node.arg, -sign)
        else:
            coefficient, rest = _split_coefficient(node)
            if rest is None:
                constant += sign * coefficient
                return
            for index, (seen, seen_coefficient) in enumerate(terms):
                if seen == rest:
                    terms[index] = (seen, seen_coefficient + sign * coefficient)
                    break
            else:
                terms.append((rest, sign * coefficient))

    visit(e, 1.0)
    result: Optional[Expression] = None
    for rest, coefficient in terms:
        if coefficient == 0:
            continue
        if result is None:
            result = _with_coefficient(coefficient, rest)
        elif coefficient < 0:
            result = Sub(result, _with_coefficient(-coefficient, rest))
        else:
            result = Add(result, _with_coefficient(coefficient, rest))
    if result is None:
        return Num(constant)
    if constant > 0:
        return Add(result, Num(constant))
    if constant < 0:
        return Sub(result, Num(-constant))
    return result


@functools.singledispatch
def _rewrite(e: Expression) -> Expression:
    return e


@_rewrite.register
def _(e: Func) -> Expression:
    arg = _rewrite(e.arg)
    if isinstance(arg, Num):
        folded = _fold_function(e.name, arg.value)
        if folded is not None:
            return folded
    if e.name == "log" and isinstance(arg, Func) and arg.name == "exp":
        return arg.arg
    return Func(e.name, arg)


@_rewrite.register
def _(e: Neg) -> Expression:
    arg = _rewrite(e.arg)
    if isinstance(arg, Num):
        return Num(-arg.value)
    if isinstance(arg, Neg):
        return arg.arg
    return _collect_sum(Neg(arg))


@_rewrite.register(Add)
@_rewrite.register(Sub)
def _(e: Union[Add, Sub]) -> Expression:
    return _collect_sum(type(e)(_rewrite(e.left), _rewrite(e.right)))


@_rewrite.register(Mul)
@_rewrite.register(Div)
def _(e: Union[Mul, Div]) -> Expression:
    return _collect_product(type(e)(_rewrite(e.left), _rewrite(e.right)))


@_rewrite.register
def _(e: Pow) -> Expression:
    base, exponent = _rewrite(e.left), _rewrite(e.right)
    if isinstance(exponent, Num):
        k = exponent.value
        if k == 0:
            return ONE
        if k == 1:
            return base
        if isinstance(base, Num):
            folded = _fold_power(base.value, k)
            if folded is not None:
                return folded
        if isinstance(base, Pow) and isinstance(base.right, Num) and k.is_integer():
            return Pow(base.left, Num(base.right.value * k))
        if isinstance(base, Func) and base.name == "exp":
            return exp(Mul(exponent, base.arg))
    return Pow(base, exponent)


@functools.lru_cache(maxsize=8192)
def simplify(e: Expression) -> Expression:
    """
    Value-preserving rewrite to a fixpoint.

    The rules fold constants, drop identities, merge like terms of sums and like factors of
    products, and combine exponentials. The result is not a canonical form; compare expressions
    by sampled evaluation.
    """
    current = e
    for _ in range(MAX_REWRITE_PASSES):
        rewritten = _rewrite(current)
        if rewritten == current:
            return current
        current = rewritten
    logger.debug("simplify stopped after %d passes on %s", MAX_REWRITE_PASSES, to_text(e))
    return current


def product_factors(e: Expression) -> Tuple[float, List[Tuple[Expression, float]]]:
    """
    Decompose a product into a numeric coefficient and merged ``(base, exponent)`` factors.

    Non-products come back as a single factor with exponent one.
    """
    return _flatten_product(e)


def join_product(coefficient: float, factors: Sequence[Tuple[Expression, float]]) -> Expression:
    """Inverse of :func:`product_factors`."""
    return _with_coefficient(coefficient, _build_product(factors))


def sum_terms(e: Expression) -> List[Tuple[float, Expression]]:
    """Flatten nested sums, differences and negations into signed terms."""
    terms: List[Tuple[float, Expression]] = []

    def visit(node: Expression, sign: float) -> None:
        if isinstance(node, Add):
            visit(node.left, sign)
            visit(node.right, sign)
        elif isinstance(node, Sub):
            visit(node.left, sign)
            visit(node.right, -sign)
        elif isinstance(node, Neg):
            visit(node.arg, -sign)
        else:
            terms.append((sign, node))

    visit(e, 1.0)
    return terms


# Numeric nodes


@dataclass(frozen=True)
class Integral(Expression):
    """
    ``int_lower^upper integrand d(var)`` evaluated by adaptive quadrature.

    ``var`` is a bound name that must not occur free elsewhere; derivatives follow the Leibniz
    rule, so a map defined by quadrature still has exact symbolic partial derivatives.
    """

    integrand: Expression
    var: str
    lower: Expression
    upper: Expression
    tolerance: float = 1e-10


@dataclass(frozen=True, eq=False)
class Table(Expression):
    """
    Values tabulated on a rectangular grid over ``axes``, interpolated linearly.

    Nodes compare by identity. Derivatives are tabulated by second-order differences.
    """

    axes: Tuple[str, ...]
    grid: Tuple[np.ndarray, ...]
    values: np.ndarray
    label: str = "table"

    def __post_init__(self):
        validate_shape(len(self.grid), len(self.axes), "table axes", raise_on_error=True)
        validate_shape(self.values.ndim, len(self.axes), "table value dimensions", raise_on_error=True)
        interpolator = RegularGridInterpolator(self.grid, self.values, bounds_error=False, fill_value=None)
        object.__setattr__(self, "_interpolator", interpolator)

    def __call__(self, *coordinates: ArrayLike) -> np.ndarray:
        """Interpolate at the given coordinates, one array per axis."""
        arrays = np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in coordinates])
        stacked = np.stack([a.ravel() for a in arrays], axis=-1)
        return self._interpolator(stacked).reshape(arrays[0].shape)


NUMERIC_NODES = (Integral, Table)


def is_printable(e: Expression) -> bool:
    """Whether ``e`` can be written in the expression grammar (no numeric nodes)."""
    if isinstance(e, NUMERIC_NODES):
        return False
    if isinstance(e, (Neg, Func)):
        return is_printable(e.arg)
    if isinstance(e, BINARY):
        return is_printable(e.left) and is_printable(e.right)
    return True


@to_text.register
def _(e: Integral) -> str:
    return f"integral({to_text(e.integrand)}, {e.var}, {to_text(e.lower)}, {to_text(e.upper)})"


@to_text.register
def _(e: Table) -> str:
    return f"{e.label}({', '.join(e.axes)})"


@free_variables.register
def _(e: Integral) -> frozenset:
    return (e.integrand.variables - {e.var}) | e.lower.variables | e.upper.variables


@free_variables.register
def _(e: Table) -> frozenset:
    return frozenset(e.axes)


@substitute.register
def _(e: Integral, mapping: Mapping[str, Expression]) -> Expression:
    inner = {name: value for name, value in mapping.items() if name != e.var}
    return Integral(
        substitute(e.integrand, inner), e.var, substitute(e.lower, mapping), substitute(e.upper, mapping), e.tolerance
    )


@substitute.register
def _(e: Table, mapping: Mapping[str, Expression]) -> Expression:
    if any(name in mapping and mapping[name] != Var(name) for name in e.axes):
        raise NotImplementedError("Tabulated functions only accept their own axes.")
    return e


@_derive.register
def _(e: Integral, var: str) -> Expression:
    terms: List[Expression] = []
    inner = differentiate(e.integrand, var)
    if not is_zero(inner):
        terms.append(Integral(inner, e.var, e.lower, e.upper, e.tolerance))
    if var in e.upper.variables:
        terms.append(Mul(substitute(e.integrand, {e.var: e.upper}), _derive(e.upper, var)))
    if var in e.lower.variables:
        terms.append(Neg(Mul(substitute(e.integrand, {e.var: e.lower}), _derive(e.lower, var))))
    return total(terms)


@_derive.register
def _(e: Table, var: str) -> Expression:
    if var not in e.axes:
        return ZERO
    axis = e.axes.index(var)
    if len(e.grid[axis]) < 3:
        return Table(e.axes, e.grid, np.zeros_like(e.values), f"d{e.label}")
    slope = np.gradient(e.values, e.grid[axis], axis=axis, edge_order=2)
    return Table(e.axes, e.grid, slope, f"{e.label}_{var}")


@_evaluate.register
def _(e: Integral, point: Point, strict: bool) -> ArrayLike:
    lower = np.asarray(_evaluate(e.lower, point, strict), dtype=float)
    upper = np.asarray(_evaluate(e.upper, point, strict), dtype=float)
    shapes = [np.shape(lower), np.shape(upper)] + [np.shape(value) for value in point.values()]
    shape = np.broadcast_shapes(*shapes)
    lower = np.broadcast_to(lower, shape)
    width = np.broadcast_to(upper, shape) - lower

    def integrand(tau: float) -> np.ndarray:
        values = dict(point)
        values[e.var] = lower + tau * width
        return np.broadcast_to(_evaluate(e.integrand, values, False), shape) * width

    value, _ = quad_vec(integrand, 0.0, 1.0, epsabs=e.tolerance, epsrel=e.tolerance, norm="max")
    return value if shape else float(value)


@_evaluate.register
def _(e: Table, point: Point, strict: bool) -> ArrayLike:
    coordinates = []
    for name in e.axes:
        try:
            coordinates.append(point[name])
        except KeyError as exc:
            raise DimensionError("a value", "none", f"variable '{name}'") from exc
    result = e(*coordinates)
    return result if result.ndim else float(result)


@_rewrite.register
def _(e: Integral) -> Expression:
    integrand = _rewrite(e.integrand)
    lower, upper = _rewrite(e.lower), _rewrite(e.upper)
    if is_zero(integrand) or lower == upper:
        return ZERO
    return Integral(integrand, e.var, lower, upper, e.tolerance)
