"""
Ito systems, simple symmetry generators and the differential operators built on them.

An Ito system ``dx^i = f^i dt + sigma^i_k dw^k`` is stored as expression trees over a
:class:`~stochsym.expr.VariableSpace`. :class:`ItoSystem` forbids Wiener variables in its
coefficients; :class:`GeneralizedSystem` allows them (it describes the formal equations produced
by random changes of variables). :class:`NumericSystem` carries callable coefficients for the
cases where a transformed system has no printable form.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import Settings, resolve
from .exceptions import DimensionError, ModelError, NoiseDependenceError
from .expr import (
    HALF,
    ArrayLike,
    Expression,
    Num,
    VariableSpace,
    as_expr,
    derivative,
    differentiate,
    evaluate_array,
    simplify,
    to_text,
    total,
)
from .sampling import Box, box_for, sample
from .validation import validate_shape, validate_variable_name

logger = logging.getLogger(__name__)

Interval = Tuple[float, float]

#: Signature of vectorized coefficient callables: ``(x, t, w) -> (drift, diffusion)`` where ``x``
#: has shape ``(n, size)``, ``w`` shape ``(m, size)``, the drift ``(n, size)`` and the diffusion
#: ``(n, m, size)``.
CoefficientFunc = Callable[[np.ndarray, float, np.ndarray], Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class Domain:
    """Declared sampling intervals, one closed interval per variable. Undeclared variables use defaults."""

    intervals: Tuple[Tuple[str, Interval], ...] = ()

    def __post_init__(self):
        for name, (lower, upper) in self.intervals:
            validate_variable_name(name, raise_on_error=True)
            if not lower < upper:
                raise ModelError(f"Empty interval [{lower}, {upper}] for {name}.")

    @classmethod
    def of(cls, intervals: Mapping[str, Interval]) -> "Domain":
        """Build a domain from a mapping."""
        return cls(tuple(sorted((name, (float(lo), float(hi))) for name, (lo, hi) in intervals.items())))

    def as_dict(self) -> Box:
        """The declared intervals as a mapping."""
        return dict(self.intervals)

    def box(self, space: VariableSpace, expressions: Sequence[Expression] = (), seed: int = 42) -> Box:
        """Declared intervals completed by the default box policy for ``space``."""
        return box_for(space.names, expressions, seed, base=self.as_dict())

    def restricted(self, names: Sequence[str]) -> "Domain":
        """Only the intervals of ``names``."""
        return Domain(tuple(item for item in self.intervals if item[0] in names))

    def merged(self, other: "Domain") -> "Domain":
        """Intervals of ``other`` override those of this domain."""
        intervals = self.as_dict()
        intervals.update(other.as_dict())
        return Domain.of(intervals)


def _as_tuple(values: Sequence) -> Tuple[Expression, ...]:
    return tuple(as_expr(value) for value in values)


@dataclass(frozen=True)
class GeneralizedSystem:
    """
    An Ito-form system whose coefficients may depend on the Wiener variables.

    Raises:
        DimensionError: If the drift does not have ``n`` entries or the diffusion is not ``n x m``
        ModelError: If a coefficient uses a variable outside the space
    """

    space: VariableSpace
    "State and noise dimensions."

    drift: Tuple[Expression, ...]
    "The drift components ``f^i``."

    diffusion: Tuple[Tuple[Expression, ...], ...]
    "The diffusion matrix ``sigma^i_k``, one row per state variable."

    domain: Domain = field(default_factory=Domain)
    "Declared sampling intervals."

    def __post_init__(self):
        object.__setattr__(self, "drift", _as_tuple(self.drift))
        object.__setattr__(self, "diffusion", tuple(_as_tuple(row) for row in self.diffusion))
        validate_shape(len(self.drift), self.space.n, "drift components", raise_on_error=True)
        validate_shape(len(self.diffusion), self.space.n, "diffusion rows", raise_on_error=True)
        for row in self.diffusion:
            validate_shape(len(row), self.space.m, "diffusion columns", raise_on_error=True)
        names = set(self.space.names)
        for expression in self.expressions():
            unknown = expression.variables - names
            if unknown:
                raise ModelError(f"Coefficient {to_text(expression)} uses undeclared {sorted(unknown)}.")

    @property
    def n(self) -> int:
        """State dimension."""
        return self.space.n

    @property
    def m(self) -> int:
        """Noise dimension."""
        return self.space.m

    @property
    def is_random(self) -> bool:
        """Whether some coefficient depends on a Wiener variable."""
        return any(e.depends_on(*self.space.noise_names) for e in self.expressions())

    def expressions(self) -> Iterator[Expression]:
        """All coefficients, drift first, then the diffusion row by row."""
        yield from self.drift
        for row in self.diffusion:
            yield from row

    def box(self, extra: Sequence[Expression] = (), seed: int = 42) -> Box:
        """Sampling box: declared intervals, defaults chosen so that coefficients and ``extra`` are regular."""
        return self.domain.box(self.space, [*self.expressions(), *extra], seed)

    def coefficients(self, x: np.ndarray, t: float, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Evaluate drift and diffusion on a batch of states.

        Args:
            x: States, shape ``(n, size)``
            t: Time
            w: Wiener values, shape ``(m, size)``

        Returns:
            The drift ``(n, size)`` and the diffusion ``(n, m, size)``
        """
        size = x.shape[1] if x.ndim == 2 else w.shape[1]
        point = self.space.point(list(x), t, list(w))
        drift = np.array([evaluate_array(f, point, size) for f in self.drift]).reshape(self.n, size)
        diffusion = np.array(
            [[evaluate_array(s, point, size) for s in row] for row in self.diffusion]
        ).reshape(self.n, self.m, size)
        return drift, diffusion

    def simplified(self) -> "GeneralizedSystem":
        """The same system with every coefficient simplified."""
        return self.with_coefficients(
            [simplify(f) for f in self.drift],
            [[simplify(s) for s in row] for row in self.diffusion],
        )

    def with_coefficients(
        self,
        drift: Sequence[Expression],
        diffusion: Sequence[Sequence[Expression]],
        space: Optional[VariableSpace] = None,
        domain: Optional[Domain] = None,
    ) -> "GeneralizedSystem":
        """A system of the most specific type that can hold the given coefficients."""
        return make_system(
            space or self.space,
            drift,
            diffusion,
            self.domain if domain is None else domain,
        )

    def equations(self) -> Tuple[str, ...]:
        """One printed line ``dx<i> = (f) dt + (s) dw<k> ...`` per state variable."""
        lines = []
        for name, f, row in zip(self.space.state_names, self.drift, self.diffusion):
            terms = [f"({to_text(f)}) dt"]
            terms.extend(f"({to_text(s)}) d{w}" for s, w in zip(row, self.space.noise_names))
            lines.append(f"d{name} = " + " + ".join(terms))
        return tuple(lines)


@dataclass(frozen=True)
class ItoSystem(GeneralizedSystem):
    """
    An Ito system with coefficients ``f^i(x, t)`` and ``sigma^i_k(x, t)``.

    Raises:
        NoiseDependenceError: If a coefficient references a Wiener variable
    """

    def __post_init__(self):
        super().__post_init__()
        noise = self.space.noise_names
        for index, f in enumerate(self.drift, start=1):
            if f.depends_on(*noise):
                raise NoiseDependenceError(f"drift f{index}")
        for i, row in enumerate(self.diffusion, start=1):
            for k, s in enumerate(row, start=1):
                if s.depends_on(*noise):
                    raise NoiseDependenceError(f"diffusion s{i}{k}")


def make_system(
    space: VariableSpace,
    drift: Sequence[Expression],
    diffusion: Sequence[Sequence[Expression]],
    domain: Optional[Domain] = None,
) -> GeneralizedSystem:
    """An :class:`ItoSystem` when no coefficient depends on ``w``, a :class:`GeneralizedSystem` otherwise."""
    domain = domain or Domain()
    drift, diffusion = _as_tuple(drift), tuple(_as_tuple(row) for row in diffusion)
    noise = space.noise_names
    coefficients = [*drift, *(s for row in diffusion for s in row)]
    if any(e.depends_on(*noise) for e in coefficients):
        return GeneralizedSystem(space, drift, diffusion, domain)
    return ItoSystem(space, drift, diffusion, domain)


@dataclass(frozen=True)
class NumericSystem:
    """
    A system with callable coefficients.

    Produced when a change of variables has no symbolic inverse: the new coefficients are known
    as expressions in the old variable and are evaluated after a numeric inversion. It can be
    simulated but not printed.
    """

    space: VariableSpace
    "State and noise dimensions."

    evaluator: CoefficientFunc
    "Vectorized ``(x, t, w) -> (drift, diffusion)``."

    description: str = "numeric coefficients"
    "What the coefficients are, for reports."

    domain: Domain = field(default_factory=Domain)
    "Sampling intervals."

    @property
    def n(self) -> int:
        """State dimension."""
        return self.space.n

    @property
    def m(self) -> int:
        """Noise dimension."""
        return self.space.m

    def coefficients(self, x: np.ndarray, t: float, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """See :meth:`GeneralizedSystem.coefficients`."""
        return self.evaluator(x, t, w)

    def equations(self) -> Tuple[str, ...]:
        """No printable form."""
        return (f"<{self.description}>",)


@dataclass(frozen=True)
class VectorField:
    """
    A simple generator ``X = phi^i(x, t[, w]) d/dx^i``; there is no time component.
    """

    space: VariableSpace
    "The space the coefficients live on."

    coeffs: Tuple[Expression, ...]
    "The components ``phi^i``."

    name: str = "X"
    "Label used in reports and model files."

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _as_tuple(self.coeffs))
        validate_shape(len(self.coeffs), self.space.n, "field components", raise_on_error=True)
        names = set(self.space.names)
        for phi in self.coeffs:
            unknown = phi.variables - names
            if unknown:
                raise ModelError(f"Field component {to_text(phi)} uses undeclared {sorted(unknown)}.")

    @property
    def is_random(self) -> bool:
        """Whether some component depends on a Wiener variable."""
        return any(phi.depends_on(*self.space.noise_names) for phi in self.coeffs)

    def apply(self, e: Expression) -> Expression:
        """``X(e) = phi^i de/dx^i``."""
        terms = [phi * differentiate(e, x) for phi, x in zip(self.coeffs, self.space.state_names)]
        return simplify(total(terms))

    def scaled(self, factor: float) -> "VectorField":
        """``factor * X``."""
        return VectorField(self.space, [simplify(Num(factor) * phi) for phi in self.coeffs], self.name)

    def __str__(self) -> str:
        parts = [f"({to_text(phi)}) d/d{x}" for phi, x in zip(self.coeffs, self.space.state_names)]
        return " + ".join(parts)


def linear_combination(fields: Sequence[VectorField], weights: Sequence[float], name: str = "X") -> VectorField:
    """``sum_k weights[k] * fields[k]``."""
    if not fields:
        raise DimensionError("at least one", 0, "fields")
    space = fields[0].space
    coeffs = [
        simplify(total(Num(float(c)) * X.coeffs[i] for c, X in zip(weights, fields) if c != 0))
        for i in range(space.n)
    ]
    return VectorField(space, coeffs, name)


@dataclass(frozen=True)
class SolvableChain:
    """
    Generators ``X_1..X_r`` of a solvable algebra, ordered along its derived chain.

    ``structure_constants[k]`` optionally gives, for each ``a <= k``, the coefficients of
    ``[X_a, X_{k+1}]`` over ``X_1..X_k``; they are fitted when absent.
    """

    fields: Tuple[VectorField, ...]
    structure_constants: Optional[Tuple[Tuple[Tuple[float, ...], ...], ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        if not self.fields:
            raise ModelError("A solvable chain needs at least one generator.")
        spaces = {X.space for X in self.fields}
        if len(spaces) != 1:
            raise ModelError("All generators of a chain must live on the same space.")

    def __len__(self) -> int:
        return len(self.fields)

    @property
    def space(self) -> VariableSpace:
        """The common space of the generators."""
        return self.fields[0].space


def ito_laplacian(system: GeneralizedSystem, e: Expression) -> Expression:
    """
    The Ito Laplacian of ``e`` along ``system``.

    ``sum_k [ e_{w_k w_k} + sigma^j_k sigma^l_k e_{x_j x_l} + 2 sigma^j_k e_{x_j w_k} ]``

    Args:
        system: Supplies the diffusion matrix
        e: An expression over the system's space

    Returns:
        The simplified second-order expression
    """
    states = system.space.state_names
    terms = []
    for k, w in enumerate(system.space.noise_names):
        terms.append(derivative(e, w, w))
        for j, xj in enumerate(states):
            sigma_j = system.diffusion[j][k]
            for l, xl in enumerate(states):
                terms.append(sigma_j * system.diffusion[l][k] * derivative(e, xj, xl))
            terms.append(Num(2.0) * sigma_j * derivative(e, xj, w))
    return simplify(total(terms))


def commutator(X: VectorField, Y: VectorField) -> VectorField:
    """
    The Lie bracket ``[X, Y]^i = X^j d_j Y^i - Y^j d_j X^i`` with derivatives in ``x`` only.

    Raises:
        ModelError: If the fields live on different spaces
    """
    if X.space != Y.space:
        raise ModelError("Cannot bracket fields on different spaces.")
    coeffs = [simplify(X.apply(y) - Y.apply(x)) for x, y in zip(X.coeffs, Y.coeffs)]
    return VectorField(X.space, coeffs, f"[{X.name},{Y.name}]")


def _require_scalar(system: GeneralizedSystem) -> None:
    validate_shape(system.n, 1, "state dimension of a scalar equation", raise_on_error=True)
    validate_shape(system.m, 1, "noise dimension of a scalar equation", raise_on_error=True)


def operator_L(system: GeneralizedSystem) -> Callable[[Expression], Expression]:
    """
    ``L(e) = e_t + (f - sigma sigma_x / 2) e_x`` for a scalar equation.

    Raises:
        DimensionError: Unless ``n = m = 1``
    """
    _require_scalar(system)
    x = system.space.state_names[0]
    f, sigma = system.drift[0], system.diffusion[0][0]
    velocity = simplify(f - HALF * sigma * differentiate(sigma, x))

    def apply(e: Expression) -> Expression:
        return simplify(differentiate(e, "t") + velocity * differentiate(e, x))

    return apply


def operator_M(system: GeneralizedSystem) -> Callable[[Expression], Expression]:
    """
    ``M(e) = e_w + sigma e_x`` for a scalar equation.

    Raises:
        DimensionError: Unless ``n = m = 1``
    """
    _require_scalar(system)
    x, w = system.space.state_names[0], system.space.noise_names[0]
    sigma = system.diffusion[0][0]

    def apply(e: Expression) -> Expression:
        return simplify(differentiate(e, w) + sigma * differentiate(e, x))

    return apply


def check_evaluable(system: GeneralizedSystem, settings: Optional[Settings] = None) -> Dict[str, np.ndarray]:
    """
    Confirm that every coefficient can be evaluated at ``settings.points`` sample points of the domain.

    Raises:
        DegenerateSamplingError: If too few regular points exist

    Returns:
        The sample points
    """
    settings = resolve(settings)
    expressions = list(system.expressions())
    return sample(system.box(seed=settings.seed), expressions, settings)


def constant_system(space: VariableSpace, drift: Sequence[ArrayLike], diffusion: Sequence[Sequence[ArrayLike]]) -> ItoSystem:
    """An :class:`ItoSystem` with numeric coefficients; mostly useful in tests and examples."""
    return ItoSystem(
        space,
        [Num(float(f)) for f in drift],
        [[Num(float(s)) for s in row] for row in diffusion],
    )

