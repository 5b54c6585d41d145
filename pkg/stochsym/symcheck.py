"""
Determining equations, symmetry search and the compatibility condition.

All verdicts are sampled: a residual passes when its largest magnitude over the sample points is
below ``tolerance * (1 + scale)``, where ``scale`` is the largest sampled magnitude of the tested
field. Reports keep the symbolic residuals so near misses can be inspected.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from .config import Settings, resolve
from .exceptions import DegenerateSamplingError, DimensionError, PhiZeroError, UnsupportedFieldError
from .expr import (
    HALF,
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
from .model import (
    Domain,
    GeneralizedSystem,
    SolvableChain,
    VectorField,
    commutator,
    ito_laplacian,
    linear_combination,
    operator_L,
    operator_M,
)
from .sampling import Box, max_abs, sample
from .validation import MAX_BASIS_SIZE, validate_int, validate_shape

logger = logging.getLogger(__name__)

#: int: Sample points per basis element in the ansatz search
POINTS_PER_BASIS_ELEMENT = 50


@dataclass(frozen=True)
class ResidualReport:
    """Outcome of a sampled residual check."""

    check: str
    "Which check produced the report."

    labels: Tuple[str, ...]
    "One label per residual, e.g. ``eq1[1]`` or ``eq2[1,2]``."

    residuals: Tuple[Expression, ...]
    "The symbolic residuals."

    maxima: Tuple[float, ...]
    "Largest sampled ``|residual|`` per residual."

    scale: float
    "Largest sampled magnitude of the tested object."

    tolerance: float
    "The relative tolerance used for the verdict."

    points: int
    "Number of sample points."

    details: Dict[str, float] = field(default_factory=dict)
    "Extra numbers reported by some checks (fitted structure constants, for instance)."

    @property
    def max_residual(self) -> float:
        """Largest sampled residual over all equations."""
        return max(self.maxima, default=0.0)

    @property
    def threshold(self) -> float:
        """``tolerance * (1 + scale)``."""
        return self.tolerance * (1.0 + self.scale)

    @property
    def passed(self) -> bool:
        """The verdict."""
        return self.max_residual < self.threshold

    def as_dict(self) -> dict:
        """A JSON-ready summary."""
        return {
            "check": self.check,
            "verdict": "pass" if self.passed else "fail",
            "max_residual": self.max_residual,
            "threshold": self.threshold,
            "scale": self.scale,
            "points": self.points,
            "residuals": [
                {"label": label, "expression": to_text(residual), "max": maximum}
                for label, residual, maximum in zip(self.labels, self.residuals, self.maxima)
            ],
            "details": dict(self.details),
        }


def sampled_report(
    check: str,
    labelled: Sequence[Tuple[str, Expression]],
    scale_expressions: Sequence[Expression],
    box: Mapping[str, Tuple[float, float]],
    settings: Optional[Settings] = None,
    details: Optional[Dict[str, float]] = None,
) -> ResidualReport:
    """
    Sample labelled residuals and build a report.

    Args:
        check: Name of the check
        labelled: ``(label, residual)`` pairs
        scale_expressions: Expressions whose largest magnitude sets the scale
        box: Sampling intervals for every variable involved
        settings: Seed, point count, guard band and tolerance
        details: Extra numbers to carry in the report

    Raises:
        DegenerateSamplingError: If the residuals are singular almost everywhere
    """
    settings = resolve(settings)
    residuals = [simplify(residual) for _, residual in labelled]
    points = sample(box, [*residuals, *scale_expressions], settings)
    maxima = tuple(max_abs(residual, points) for residual in residuals)
    scale = max((max_abs(e, points) for e in scale_expressions), default=0.0)
    report = ResidualReport(
        check,
        tuple(label for label, _ in labelled),
        tuple(residuals),
        maxima,
        scale,
        settings.tolerance,
        settings.points,
        dict(details or {}),
    )
    logger.debug("%s: max residual %.3g, threshold %.3g", check, report.max_residual, report.threshold)
    return report


def sampled_independent(
    e: Expression,
    names: Sequence[str],
    box: Mapping[str, Tuple[float, float]],
    settings: Optional[Settings] = None,
) -> bool:
    """
    Whether ``e`` does not depend on ``names``: structurally, or by sampled partial derivatives.

    The sampled test accepts ``max |de/dv| < tolerance * (1 + max |e|)`` for each name ``v``.
    """
    settings = resolve(settings)
    present = [name for name in names if e.depends_on(name)]
    if not present:
        return True
    slopes = [differentiate(e, name) for name in present]
    points = sample(box, [e, *slopes], settings)
    scale = max_abs(e, points)
    return all(max_abs(slope, points) < settings.tolerance * (1.0 + scale) for slope in slopes)


def require_nonvanishing(
    phi: Expression, box: Mapping[str, Tuple[float, float]], where: str, settings: Optional[Settings] = None
) -> None:
    """
    Raise unless ``phi`` keeps a strict sign over the sampled domain.

    Raises:
        PhiZeroError: If ``phi`` changes sign, vanishes or is singular everywhere
    """
    settings = resolve(settings)
    try:
        points = sample(box, [phi], settings)
    except DegenerateSamplingError as e:
        raise PhiZeroError(where) from e
    size = len(next(iter(points.values()))) if points else 1
    values = evaluate_array(phi, points, size)
    if not np.all(np.isfinite(values)) or values.min() <= 0 <= values.max():
        raise PhiZeroError(where)


def _determining_residuals(
    system: GeneralizedSystem, X: VectorField, random: bool
) -> List[Tuple[str, Expression]]:
    validate_shape(X.space.n, system.n, "field dimension", raise_on_error=True)
    validate_shape(X.space.m, system.m, "field noise dimension", raise_on_error=True)
    states = system.space.state_names
    labelled: List[Tuple[str, Expression]] = []
    for i, (phi, f) in enumerate(zip(X.coeffs, system.drift), start=1):
        terms = [differentiate(phi, "t"), HALF * ito_laplacian(system, phi)]
        for j, xj in enumerate(states):
            terms.append(system.drift[j] * differentiate(phi, xj))
            terms.append(-(X.coeffs[j] * differentiate(f, xj)))
        labelled.append((f"eq1[{i}]", simplify(total(terms))))
    for i, phi in enumerate(X.coeffs, start=1):
        for k, w in enumerate(system.space.noise_names):
            terms = []
            if random:
                terms.append(differentiate(phi, w))
            for j, xj in enumerate(states):
                terms.append(system.diffusion[j][k] * differentiate(phi, xj))
                terms.append(-(X.coeffs[j] * differentiate(system.diffusion[i - 1][k], xj)))
            labelled.append((f"eq2[{i},{k + 1}]", simplify(total(terms))))
    return labelled


def deterministic_residuals(
    system: GeneralizedSystem, X: VectorField, settings: Optional[Settings] = None
) -> ResidualReport:
    """
    Check the determining equations of a deterministic simple symmetry.

    ``eq1^i = phi^i_t + f^j d_j phi^i - phi^j d_j f^i + Delta(phi^i) / 2`` and
    ``eq2^{i,k} = sigma^j_k d_j phi^i - phi^j d_j sigma^i_k``.

    Raises:
        UnsupportedFieldError: If ``X`` depends on the Wiener variables
        DimensionError: If ``X`` and the system live on different spaces
    """
    if X.is_random:
        raise UnsupportedFieldError(f"{X.name} depends on w; use random_residuals")
    settings = resolve(settings)
    labelled = _determining_residuals(system, X, random=False)
    box = system.box(X.coeffs, settings.seed)
    return sampled_report("deterministic symmetry", labelled, X.coeffs, box, settings)


def random_residuals(
    system: GeneralizedSystem, X: VectorField, settings: Optional[Settings] = None
) -> ResidualReport:
    """
    Check the determining equations of a simple random symmetry.

    As :func:`deterministic_residuals`, with the Ito Laplacian including the Wiener derivatives
    and ``eq2^{i,k}`` gaining the term ``d phi^i / d w_k``.

    Raises:
        DimensionError: If ``X`` and the system live on different spaces
    """
    settings = resolve(settings)
    labelled = _determining_residuals(system, X, random=True)
    box = system.box(X.coeffs, settings.seed)
    return sampled_report("random symmetry", labelled, X.coeffs, box, settings)


def check_symmetry(system: GeneralizedSystem, X: VectorField, settings: Optional[Settings] = None) -> ResidualReport:
    """Deterministic or random residuals, whichever fits ``X``."""
    if X.is_random:
        return random_residuals(system, X, settings)
    return deterministic_residuals(system, X, settings)


BasisElement = Union[VectorField, Expression]


def _basis_fields(system: GeneralizedSystem, basis: Sequence[BasisElement]) -> List[VectorField]:
    fields = []
    for index, element in enumerate(basis, start=1):
        if isinstance(element, VectorField):
            fields.append(element)
        else:
            validate_shape(system.n, 1, "state dimension for a scalar basis", raise_on_error=True)
            fields.append(VectorField(system.space, [as_expr(element)], f"b{index}"))
    return fields


def canonical_basis(null_space: np.ndarray) -> List[np.ndarray]:
    """
    A deterministic orthonormal basis of the column span of ``null_space``.

    The unit vectors are projected onto the span and orthonormalized in order. Each result is
    normalized to unit length with its first nonzero component positive.
    """
    size, rank = null_space.shape
    if rank == 0:
        return []
    projector = null_space @ null_space.T
    vectors: List[np.ndarray] = []
    for index in range(size):
        candidate = projector[:, index].copy()
        for vector in vectors:
            candidate -= (vector @ candidate) * vector
        norm = np.linalg.norm(candidate)
        if norm > 1e-8:
            vectors.append(candidate / norm)
        if len(vectors) == rank:
            break
    result = []
    for vector in vectors:
        vector = np.where(np.abs(vector) < 1e-12, 0.0, vector)
        leading = vector[np.flatnonzero(vector)[0]]
        result.append(vector if leading > 0 else -vector)
    return result


def search_symmetry_ansatz(
    system: GeneralizedSystem,
    basis: Sequence[BasisElement],
    random: bool = False,
    settings: Optional[Settings] = None,
) -> List[np.ndarray]:
    """
    Find every symmetry of the form ``sum_k c_k b_k`` over a finite basis.

    The determining equations are linear in the field, so the residuals of each basis element
    are sampled at ``50 K`` points and stacked into a matrix ``A`` with ``A c = 0``. Its
    numerical null space (singular values below ``null_space_cutoff * sigma_max``) is returned.

    Args:
        system: The equation
        basis: Vector fields, or expressions for a scalar equation
        random: Use the random determining equations
        settings: Seed, cutoff and point count

    Raises:
        ValueTooHigh: If the basis has more than 64 elements
        DegenerateSamplingError: If fewer rows than unknowns can be sampled

    Returns:
        Orthonormal coefficient vectors, in the order fixed by :func:`canonical_basis`
    """
    settings = resolve(settings)
    fields = _basis_fields(system, basis)
    validate_int(len(fields), min_value=1, max_value=MAX_BASIS_SIZE, raise_on_error=True)
    count = max(POINTS_PER_BASIS_ELEMENT * len(fields), settings.points)
    columns = [
        [residual for _, residual in _determining_residuals(system, X, random=random or X.is_random)]
        for X in fields
    ]
    every = [residual for column in columns for residual in column]
    box = system.box([*every, *(phi for X in fields for phi in X.coeffs)], settings.seed)
    points = sample(box, every, settings, count=count)
    blocks = [np.concatenate([evaluate_array(r, points, count) for r in column]) for column in columns]
    matrix = np.column_stack(blocks)
    if matrix.shape[0] < matrix.shape[1]:
        raise DegenerateSamplingError(matrix.shape[1], matrix.shape[0])
    null_space = scipy.linalg.null_space(matrix, rcond=settings.null_space_cutoff)
    vectors = canonical_basis(null_space)
    logger.info("ansatz search over %d elements: null space of dimension %d", len(fields), len(vectors))
    return vectors


def field_from_coefficients(
    system: GeneralizedSystem, basis: Sequence[BasisElement], coefficients: Sequence[float], name: str = "X"
) -> VectorField:
    """The field ``sum_k c_k b_k``."""
    return linear_combination(_basis_fields(system, basis), coefficients, name)


@dataclass(frozen=True)
class CompatibilityInput:
    """A scalar equation ``dy = F dt + S dw`` together with a symmetry coefficient ``phi``."""

    space: VariableSpace
    drift: Expression
    diffusion: Expression
    phi: Expression
    domain: Domain = field(default_factory=Domain)

    def __post_init__(self):
        validate_shape(self.space.n, 1, "state dimension of a scalar equation", raise_on_error=True)
        validate_shape(self.space.m, 1, "noise dimension of a scalar equation", raise_on_error=True)

    @classmethod
    def from_system(cls, system: GeneralizedSystem, X: VectorField) -> "CompatibilityInput":
        """Take the coefficients of a scalar system and the component of ``X``."""
        return cls(system.space, system.drift[0], system.diffusion[0][0], X.coeffs[0], system.domain)

    @property
    def gamma(self) -> Expression:
        """``d/dw (1 / phi)``."""
        return differentiate(simplify(Num(1.0) / self.phi), self.space.noise_names[0])

    def box(self, seed: int = 42) -> Box:
        """Sampling box for the coefficients and ``phi``."""
        return self.domain.box(self.space, [self.drift, self.diffusion, self.phi, Num(1.0) / self.phi], seed)


def compatibility_check(data: CompatibilityInput, settings: Optional[Settings] = None) -> ResidualReport:
    """
    Decide whether a random symmetry yields a map to an integrable Ito equation.

    The residual is ``S g_t + S_t g - F g_w - (S g_ww + S^2 g_yw) / 2`` with ``g = d/dw (1/phi)``.
    It vanishes identically for deterministic ``phi``.
    The tolerance scales with the largest sampled magnitude of ``phi``, ``F``, ``S`` and ``g``.

    Raises:
        PhiZeroError: If ``phi`` vanishes on the domain
    """
    settings = resolve(settings)
    box = data.box(settings.seed)
    require_nonvanishing(data.phi, box, "phi", settings)
    y, w = data.space.state_names[0], data.space.noise_names[0]
    gamma = data.gamma
    S, F = data.diffusion, data.drift
    residual = total(
        [
            S * differentiate(gamma, "t"),
            differentiate(S, "t") * gamma,
            -(F * differentiate(gamma, w)),
            -(HALF * (S * derivative(gamma, w, w) + S * S * derivative(gamma, y, w))),
        ]
    )
    return sampled_report("compatibility", [("compatibility", residual)], [data.phi, F, S, gamma], box, settings)


def kernel_membership(
    system: GeneralizedSystem, psi: Expression, settings: Optional[Settings] = None
) -> Tuple[bool, bool]:
    """
    Whether ``psi`` lies in the kernels of ``L`` and ``M`` of a scalar equation.

    Raises:
        DimensionError: Unless ``n = m = 1``

    Returns:
        ``(in_kernel_of_L, in_kernel_of_M)``
    """
    settings = resolve(settings)
    L, M = operator_L(system), operator_M(system)
    box = system.box([psi], settings.seed)
    in_l = sampled_report("kernel of L", [("L", L(psi))], [psi], box, settings).passed
    in_m = sampled_report("kernel of M", [("M", M(psi))], [psi], box, settings).passed
    return in_l, in_m


def _require_deterministic(chain: SolvableChain) -> None:
    for X in chain.fields:
        if X.is_random:
            raise UnsupportedFieldError(f"{X.name} depends on w; chains are only checked for deterministic fields")


def _chain_box(chain: SolvableChain, domain: Optional[Domain], extra: Sequence[Expression], seed: int) -> Box:
    coefficients = [phi for X in chain.fields for phi in X.coeffs]
    return (domain or Domain()).box(chain.space, [*coefficients, *extra], seed)


def check_solvable_chain(
    chain: SolvableChain, domain: Optional[Domain] = None, settings: Optional[Settings] = None
) -> ResidualReport:
    """
    Verify ``[X_a, X_{k+1}] in span(X_1..X_k)`` for every ``a <= k``.

    Constant structure coefficients are taken from the chain when declared, otherwise fitted by
    least squares over the sample points. The residual of each bracket is its distance to the fit.

    Raises:
        UnsupportedFieldError: If a generator depends on the Wiener variables
    """
    settings = resolve(settings)
    _require_deterministic(chain)
    fields = chain.fields
    brackets = [
        (a, k, commutator(fields[a], fields[k])) for k in range(1, len(fields)) for a in range(k)
    ]
    extra = [phi for _, _, B in brackets for phi in B.coeffs]
    box = _chain_box(chain, domain, extra, settings.seed)
    labelled: List[Tuple[str, Expression]] = []
    details: Dict[str, float] = {}
    if not brackets:
        return sampled_report("solvable chain", [], [], box, settings)
    points = sample(box, extra + [phi for X in fields for phi in X.coeffs], settings)
    size = settings.points
    for a, k, bracket in brackets:
        span = fields[:k]
        declared = chain.structure_constants
        if declared is not None:
            weights = np.asarray(declared[k - 1][a], dtype=float)
        else:
            design = np.column_stack(
                [np.concatenate([evaluate_array(phi, points, size) for phi in X.coeffs]) for X in span]
            )
            target = np.concatenate([evaluate_array(phi, points, size) for phi in bracket.coeffs])
            weights = scipy.linalg.lstsq(design, target)[0]
        fit = linear_combination(span, weights)
        for i, (b, p) in enumerate(zip(bracket.coeffs, fit.coeffs), start=1):
            labelled.append((f"[X{a + 1},X{k + 1}][{i}]", simplify(b - p)))
        for index, weight in enumerate(weights, start=1):
            details[f"c[{a + 1},{k + 1}][{index}]"] = float(weight)
    scale = [phi for X in fields for phi in X.coeffs]
    return sampled_report("solvable chain", labelled, scale, box, settings, details)


@dataclass(frozen=True)
class RankReport:
    """Pointwise linear independence of a chain's generators."""

    rank: int
    "Number of generators."

    deficient_points: int
    "Sample points where the coefficient matrix has lower rank."

    min_ratio: float
    "Smallest ratio of least to largest singular value over the sample."

    points: int

    @property
    def passed(self) -> bool:
        """True when the generators are independent at every sample point."""
        return self.deficient_points == 0

    def as_dict(self) -> dict:
        """A JSON-ready summary."""
        return {
            "check": "regular action",
            "verdict": "pass" if self.passed else "fail",
            "rank": self.rank,
            "deficient_points": self.deficient_points,
            "min_ratio": self.min_ratio,
            "points": self.points,
        }


def check_regular_action(
    chain: SolvableChain, domain: Optional[Domain] = None, settings: Optional[Settings] = None
) -> RankReport:
    """
    Partial check that the generators act regularly: the ``n x r`` coefficient matrix has rank ``r``
    at every sample point (relative singular-value cutoff ``null_space_cutoff``).
    """
    settings = resolve(settings)
    space = chain.space
    r = len(chain)
    if r > space.n:
        return RankReport(r, settings.points, 0.0, settings.points)
    coefficients = [phi for X in chain.fields for phi in X.coeffs]
    box = _chain_box(chain, domain, [], settings.seed)
    points = sample(box, coefficients, settings)
    size = settings.points
    matrix = np.empty((size, space.n, r))
    for column, X in enumerate(chain.fields):
        for row, phi in enumerate(X.coeffs):
            matrix[:, row, column] = evaluate_array(phi, points, size)
    singular = np.linalg.svd(matrix, compute_uv=False)
    largest = singular[:, 0]
    smallest = singular[:, -1]
    with np.errstate(all="ignore"):
        ratios = np.where(largest > 0, smallest / largest, 0.0)
    deficient = int(np.count_nonzero(ratios <= settings.null_space_cutoff))
    return RankReport(r, deficient, float(ratios.min()), size)

