"""
Changes of variables for Ito systems.

A map ``x = Phi(y, t, w)`` is stored with the old variable written as ``x1..xn`` in
:attr:`ChangeOfVariables.forward` and the new variable written as ``x1..xn`` in
:attr:`ChangeOfVariables.inverse`; the two never appear in the same tree. Coefficients transform
by the Ito rule, not the chain rule.
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .config import Settings, resolve
from .exceptions import (
    BetaError,
    DegenerateSamplingError,
    DimensionError,
    InversionError,
    ModelError,
    MonotonicityError,
    SingularJacobianError,
)
from .expr import (
    HALF,
    ONE,
    ZERO,
    Expression,
    Integral,
    Num,
    Table,
    Var,
    VariableSpace,
    as_expr,
    differentiate,
    evaluate_array,
    is_printable,
    rename,
    simplify,
    substitute,
    to_text,
    total,
)
from .integration import integrate_rule_based, invert_numeric, invert_symbolic
from .model import (
    Domain,
    GeneralizedSystem,
    NumericSystem,
    VectorField,
    ito_laplacian,
    make_system,
)
from .sampling import Box, relative_gap, sample
from .symcheck import ResidualReport, check_symmetry, require_nonvanishing, sampled_independent, sampled_report
from .validation import validate_shape

logger = logging.getLogger(__name__)

#: int: Largest dimension for which Jacobians are inverted symbolically
MAX_SYMBOLIC_INVERSE = 3

_BOUND = "_s"


class Direction(enum.Enum):
    """How a map is applied to a system."""

    FORWARD = "forward"
    "The system is written in ``y``; return it in ``x = Phi(y)``."

    PULLBACK = "pullback"
    "The system is written in ``x``; return it in ``y`` where ``x = Phi(y)``."


@dataclass(frozen=True)
class ChangeOfVariables:
    """
    A simple change of variables ``x = Phi(y, t, w)`` and, when known, its inverse ``y = F(x, t, w)``.

    Raises:
        DimensionError: If the components do not match the space
        ModelError: If a component uses an undeclared variable
    """

    space: VariableSpace
    "The space of both the old and the new variables."

    forward: Tuple[Expression, ...]
    "``Phi^i`` in the old variables."

    inverse: Optional[Tuple[Expression, ...]] = None
    "``F^i`` in the new variables, or ``None`` when the map is inverted numerically."

    beta: Expression = ZERO
    "Integration term ``beta(t, w)`` already added to a scalar ``forward``."

    domain: Domain = field(default_factory=Domain)
    "Sampling intervals of the old variables."

    name: str = "map"

    def __post_init__(self):
        object.__setattr__(self, "forward", tuple(as_expr(e) for e in self.forward))
        validate_shape(len(self.forward), self.space.n, "map components", raise_on_error=True)
        if self.inverse is not None:
            object.__setattr__(self, "inverse", tuple(as_expr(e) for e in self.inverse))
            validate_shape(len(self.inverse), self.space.n, "inverse components", raise_on_error=True)
        allowed = set(self.space.names)
        for e in (*self.forward, *(self.inverse or ())):
            unknown = e.variables - allowed
            if unknown:
                raise ModelError(f"Map component {to_text(e)} uses undeclared {sorted(unknown)}.")

    @property
    def is_random(self) -> bool:
        """Whether the map depends on the Wiener variables."""
        return any(e.depends_on(*self.space.noise_names) for e in self.forward)

    @property
    def is_printable(self) -> bool:
        """Whether both directions have a form in the expression grammar."""
        return self.inverse is not None and all(is_printable(e) for e in (*self.forward, *self.inverse))

    def jacobian(self) -> List[List[Expression]]:
        """``J[i][j] = d Phi^i / d y^j``."""
        states = self.space.state_names
        return [[simplify(differentiate(phi, y)) for y in states] for phi in self.forward]

    def with_beta(self, beta: Expression) -> "ChangeOfVariables":
        """
        The scalar map ``Phi + beta`` with inverse ``F(x - beta)``.

        Raises:
            DimensionError: Unless the map is scalar
        """
        validate_shape(self.space.n, 1, "state dimension of a map with an integration term", raise_on_error=True)
        x = self.space.state_names[0]
        forward = simplify(self.forward[0] + beta)
        inverse = None
        if self.inverse is not None:
            inverse = (simplify(substitute(self.inverse[0], {x: Var(x) - beta})),)
        return ChangeOfVariables(self.space, (forward,), inverse, simplify(self.beta + beta), self.domain, self.name)

    def box(self, extra: Sequence[Expression] = (), seed: int = 42) -> Box:
        """Sampling box of the old variables."""
        return self.domain.box(self.space, [*self.forward, *extra], seed)

    def __str__(self) -> str:
        return ", ".join(f"{x} -> {to_text(phi)}" for x, phi in zip(self.space.state_names, self.forward))


def identity_map(space: VariableSpace, domain: Optional[Domain] = None) -> ChangeOfVariables:
    """``x = y``."""
    names = [Var(name) for name in space.state_names]
    return ChangeOfVariables(space, names, names, domain=domain or Domain(), name="identity")


def _points_size(points) -> int:
    return len(next(iter(points.values()))) if points else 1


def check_round_trip(cov: ChangeOfVariables, settings: Optional[Settings] = None) -> float:
    """
    Sampled ``F(Phi(y)) = y``, evaluated numerically at ``settings.points`` points of the map's domain.

    Raises:
        InversionError: If the map has no inverse or the round trip fails

    Returns:
        The relative round-trip error
    """
    settings = resolve(settings)
    if cov.inverse is None:
        raise InversionError("no inverse to check")
    points = sample(cov.box(seed=settings.seed), cov.forward, settings)
    size = _points_size(points)
    image = dict(points)
    for x, phi in zip(cov.space.state_names, cov.forward):
        image[x] = evaluate_array(phi, points, size)
    error = 0.0
    for y, inverse in zip(cov.space.state_names, cov.inverse):
        back = evaluate_array(inverse, image, size)
        gap = np.abs(back - points[y])
        gap = np.where(np.isfinite(gap), gap, np.inf)
        error = max(error, float(gap.max() / (1.0 + np.abs(points[y]).max())))
    if not error < settings.roundtrip_tolerance:
        raise InversionError(f"round trip error {error:.3e} for {cov}")
    return error


def image_domain(cov: ChangeOfVariables, box: Box, settings: Optional[Settings] = None) -> Domain:
    """The sampled range of the new variables over ``box``; ``t`` and ``w`` intervals are kept."""
    settings = resolve(settings)
    points = sample(box, cov.forward, settings)
    size = _points_size(points)
    intervals = {name: box[name] for name in ("t", *cov.space.noise_names) if name in box}
    for x, phi in zip(cov.space.state_names, cov.forward):
        values = evaluate_array(phi, points, size)
        lower, upper = float(values.min()), float(values.max())
        if upper - lower < 1e-9:
            lower, upper = lower - 1.0, upper + 1.0
        intervals[x] = (lower, upper)
    return Domain.of(intervals)


def check_jacobian(cov: ChangeOfVariables, box: Box, settings: Optional[Settings] = None) -> float:
    """
    Sampled lower bound of ``|det J|``; for scalar maps, strict monotonicity in ``y``.

    Raises:
        MonotonicityError: If a scalar map's derivative vanishes or changes sign
        SingularJacobianError: If ``min |det J| <= jacobian_min_det``

    Returns:
        The smallest sampled ``|det J|``
    """
    settings = resolve(settings)
    J = cov.jacobian()
    entries = [e for row in J for e in row]
    points = sample(box, [*cov.forward, *entries], settings)
    size = _points_size(points)
    matrix = np.empty((size, cov.space.n, cov.space.n))
    for i, row in enumerate(J):
        for j, e in enumerate(row):
            matrix[:, i, j] = evaluate_array(e, points, size)
    if cov.space.n == 1:
        slope = matrix[:, 0, 0]
        if not np.all(np.isfinite(slope)) or slope.min() <= 0 <= slope.max():
            raise MonotonicityError()
        return float(np.abs(slope).min())
    determinants = np.abs(np.linalg.det(matrix))
    smallest = float(np.nan_to_num(determinants, nan=0.0).min())
    if smallest <= settings.jacobian_min_det:
        raise SingularJacobianError(smallest)
    return smallest


def ito_image(system: GeneralizedSystem, forward: Sequence[Expression]) -> Tuple[List[Expression], List[List[Expression]]]:
    """
    Ito rule for ``x = Phi(y, t, w)`` along ``system``, still written in the old variables.

    ``f_new^i = Phi^i_t + f^j Phi^i_j + Delta(Phi^i) / 2`` and
    ``sigma_new^i_k = Phi^i_{w_k} + sigma^j_k Phi^i_j``.
    """
    states = system.space.state_names
    drift, diffusion = [], []
    for phi in forward:
        terms = [differentiate(phi, "t"), HALF * ito_laplacian(system, phi)]
        terms.extend(f * differentiate(phi, y) for f, y in zip(system.drift, states))
        drift.append(simplify(total(terms)))
        row = []
        for k, w in enumerate(system.space.noise_names):
            parts = [differentiate(phi, w)]
            parts.extend(system.diffusion[j][k] * differentiate(phi, y) for j, y in enumerate(states))
            row.append(simplify(total(parts)))
        diffusion.append(row)
    return drift, diffusion


def _determinant(M: Sequence[Sequence[Expression]]) -> Expression:
    if len(M) == 1:
        return M[0][0]
    terms = []
    for j, entry in enumerate(M[0]):
        minor = [row[:j] + row[j + 1 :] for row in M[1:]]
        cofactor = _determinant(minor)
        terms.append(entry * cofactor if j % 2 == 0 else -(entry * cofactor))
    return total(terms)


def symbolic_inverse(M: Sequence[Sequence[Expression]]) -> List[List[Expression]]:
    """
    Inverse by cofactors, for small matrices.

    Raises:
        DimensionError: If the matrix is larger than 3 x 3
    """
    n = len(M)
    if n > MAX_SYMBOLIC_INVERSE:
        raise DimensionError(f"at most {MAX_SYMBOLIC_INVERSE}", n, "symbolic matrix inverse size")
    det = simplify(_determinant(M))
    if n == 1:
        return [[simplify(ONE / det)]]
    inverse = []
    for i in range(n):
        row = []
        for j in range(n):
            minor = [r[:i] + r[i + 1 :] for k, r in enumerate(M) if k != j]
            cofactor = _determinant(minor)
            signed = cofactor if (i + j) % 2 == 0 else -cofactor
            row.append(simplify(signed / det))
        inverse.append(row)
    return inverse


def _pullback_symbolic(system: GeneralizedSystem, cov: ChangeOfVariables) -> GeneralizedSystem:
    space = system.space
    states, noise = space.state_names, space.noise_names
    composed = {x: phi for x, phi in zip(states, cov.forward)}
    Jinv = symbolic_inverse(cov.jacobian())
    n, m = space.n, space.m

    def solve(rhs: Sequence[Expression]) -> List[Expression]:
        return [simplify(total(Jinv[i][j] * rhs[j] for j in range(n))) for i in range(n)]

    columns = []
    for k, w in enumerate(noise):
        rhs = [substitute(system.diffusion[i][k], composed) - differentiate(cov.forward[i], w) for i in range(n)]
        columns.append(solve(rhs))
    diffusion = [[columns[k][i] for k in range(m)] for i in range(n)]
    carrier = GeneralizedSystem(space, [ZERO] * n, diffusion)
    rhs = [
        substitute(system.drift[i], composed)
        - differentiate(cov.forward[i], "t")
        - HALF * ito_laplacian(carrier, cov.forward[i])
        for i in range(n)
    ]
    return make_system(space, solve(rhs), diffusion, cov.domain)


def _pullback_numeric(system: GeneralizedSystem, cov: ChangeOfVariables) -> NumericSystem:
    space = system.space
    states, noise = space.state_names, space.noise_names
    composed = {x: phi for x, phi in zip(states, cov.forward)}
    J = cov.jacobian()
    pulled_drift = [substitute(f, composed) for f in system.drift]
    pulled_diffusion = [[substitute(s, composed) for s in row] for row in system.diffusion]
    d_t = [differentiate(phi, "t") for phi in cov.forward]
    d_w = [[differentiate(phi, w) for w in noise] for phi in cov.forward]
    second = [[[simplify(differentiate(differentiate(phi, a), b)) for b in (*states, *noise)] for a in (*states, *noise)] for phi in cov.forward]
    n, m = space.n, space.m

    def evaluator(x: np.ndarray, t: float, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        size = x.shape[1]
        point = space.point(list(x), t, list(w))

        def values(e: Expression) -> np.ndarray:
            return evaluate_array(e, point, size)

        jac = np.array([[values(e) for e in row] for row in J]).transpose(2, 0, 1)
        sigma_rhs = np.array([[values(pulled_diffusion[i][k]) - values(d_w[i][k]) for k in range(m)] for i in range(n)])
        sigma = np.linalg.solve(jac, sigma_rhs.transpose(2, 0, 1))
        hessian = np.array([[[values(e) for e in row] for row in block] for block in second]).transpose(3, 0, 1, 2)
        laplacian = np.zeros((size, n))
        for k in range(m):
            # Combined direction (sigma_k, e_k) in the (x, w) coordinates.
            direction = np.concatenate([sigma[:, :, k], np.eye(m)[k][None, :].repeat(size, 0)], axis=1)
            laplacian += np.einsum("pa,piab,pb->pi", direction, hessian, direction)
        drift_rhs = np.array([values(pulled_drift[i]) - values(d_t[i]) for i in range(n)]).T - 0.5 * laplacian
        drift = np.linalg.solve(jac, drift_rhs[:, :, None])[:, :, 0]
        return drift.T, sigma.transpose(1, 2, 0)

    return NumericSystem(space, evaluator, f"pullback of {n}-dimensional system through {cov.name}", cov.domain)


def transform_system(
    system: GeneralizedSystem,
    cov: ChangeOfVariables,
    direction: Direction = Direction.FORWARD,
    settings: Optional[Settings] = None,
) -> Union[GeneralizedSystem, NumericSystem]:
    """
    Rewrite ``system`` through the change of variables ``x = Phi(y, t, w)``.

    Forward, the Ito image of the map is computed in the old variables and then expressed in the
    new ones through the inverse. A pullback solves ``J dy = dx - Phi_t dt - Phi_w dw - ...`` with
    the Jacobian inverse, symbolically by cofactors up to three dimensions.

    Args:
        system: The system, written in ``y`` (forward) or ``x`` (pullback)
        cov: The map
        direction: Which way to apply it
        settings: Sampling and Jacobian tolerances

    Raises:
        SingularJacobianError: If the Jacobian is numerically singular on the domain
        MonotonicityError: For a scalar map that is not strictly monotone
        InversionError: For a forward transform of a multi-dimensional map without an inverse

    Returns:
        The transformed system; a :class:`NumericSystem` when no printable form is available
    """
    settings = resolve(settings)
    validate_shape(cov.space.n, system.n, "map dimension", raise_on_error=True)
    validate_shape(cov.space.m, system.m, "map noise dimension", raise_on_error=True)
    if direction is Direction.PULLBACK:
        check_jacobian(cov, cov.box(seed=settings.seed), settings)
        if system.n > MAX_SYMBOLIC_INVERSE:
            logger.warning("Jacobian of dimension %d inverted numerically", system.n)
            return _pullback_numeric(system, cov)
        return _pullback_symbolic(system, cov).simplified()

    old = system.domain.merged(cov.domain)
    box = old.box(system.space, [*system.expressions(), *cov.forward], settings.seed)
    check_jacobian(cov, box, settings)
    drift, diffusion = ito_image(system, cov.forward)
    if cov.inverse is None:
        if system.n != 1:
            raise InversionError("a multi-dimensional map needs an explicit inverse")
        return _numeric_forward(system, cov, drift, diffusion, box)
    inverse = {y: F for y, F in zip(system.space.state_names, cov.inverse)}
    return make_system(
        system.space,
        [simplify(substitute(f, inverse)) for f in drift],
        [[simplify(substitute(s, inverse)) for s in row] for row in diffusion],
        image_domain(cov, box, settings),
    )


def _numeric_forward(
    system: GeneralizedSystem,
    cov: ChangeOfVariables,
    drift: Sequence[Expression],
    diffusion: Sequence[Sequence[Expression]],
    box: Box,
) -> NumericSystem:
    space = system.space
    y = space.state_names[0]
    phi = cov.forward[0]
    slope = simplify(differentiate(phi, y))
    start = 0.5 * (box[y][0] + box[y][1])
    logger.warning("no symbolic inverse of %s; coefficients use numeric inversion", to_text(phi))

    def evaluator(x: np.ndarray, t: float, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        size = x.shape[1]
        point = {"t": t, **dict(zip(space.noise_names, w))}
        roots = invert_numeric(phi, slope, y, x[0], point, start=start)
        full = {**point, y: roots}
        f = np.array([evaluate_array(e, full, size) for e in drift])
        s = np.array([[evaluate_array(e, full, size) for e in row] for row in diffusion])
        return f, s

    return NumericSystem(space, evaluator, f"image of the equation under {cov.name} (numeric inverse)", image_domain(cov, box))


def transform_scalar(
    system: GeneralizedSystem,
    cov: ChangeOfVariables,
    direction: Direction = Direction.FORWARD,
    settings: Optional[Settings] = None,
) -> Union[GeneralizedSystem, NumericSystem]:
    """
    Rewrite a scalar equation through ``x = Phi(y, t, w)``.

    Forward, ``dx = (Phi_t + f Phi_y + Delta(Phi) / 2) dt + (Phi_w + sigma Phi_y) dw`` is
    expressed in ``x``. Pullback goes the other way:
    ``S = (sigma(Phi) - Phi_w) / Phi_y`` and
    ``F = (f(Phi) - Phi_t - (Phi_ww + 2 S Phi_yw + S^2 Phi_yy) / 2) / Phi_y``.

    Raises:
        DimensionError: Unless ``n = m = 1``
        MonotonicityError: If ``Phi_y`` vanishes or changes sign on the domain
    """
    validate_shape(system.n, 1, "state dimension of a scalar equation", raise_on_error=True)
    validate_shape(system.m, 1, "noise dimension of a scalar equation", raise_on_error=True)
    return transform_system(system, cov, direction, settings)


def build_phi_from_symmetry(
    space: VariableSpace,
    phi: Expression,
    domain: Optional[Domain] = None,
    settings: Optional[Settings] = None,
    name: str = "Phi",
) -> ChangeOfVariables:
    """
    The map ``x = Phi(y, t, w)`` with ``Phi_y = 1 / phi``, which sends ``phi d/dy`` to ``d/dx``.

    ``Phi`` is the rule-based antiderivative when one exists and a quadrature from the midpoint of
    the ``y`` interval otherwise. The inverse is symbolic when the pattern table finds one.

    Raises:
        PhiZeroError: If ``phi`` vanishes on the domain
    """
    settings = resolve(settings)
    validate_shape(space.n, 1, "state dimension of a scalar symmetry", raise_on_error=True)
    domain = domain or Domain()
    y = space.state_names[0]
    integrand = simplify(ONE / phi)
    box = domain.box(space, [phi, integrand], settings.seed)
    require_nonvanishing(phi, box, "phi", settings)
    forward = integrate_rule_based(integrand, y, box, settings)
    if forward is None:
        start = 0.5 * (box[y][0] + box[y][1])
        logger.warning("integrating 1/(%s) by quadrature from %s = %g", to_text(phi), y, start)
        forward = Integral(rename(integrand, {y: _BOUND}), _BOUND, Num(start), Var(y), settings.quadrature_tolerance)
        inverse = None
    else:
        inverse = invert_symbolic(forward, y, box, settings)
        if inverse is None:
            logger.warning("no symbolic inverse of %s", to_text(forward))
    inverse_tuple = None if inverse is None else (inverse,)
    return ChangeOfVariables(space, (forward,), inverse_tuple, domain=domain, name=name)


@dataclass(frozen=True)
class BetaSolution:
    """An integration term and the integrable equation it produces."""

    beta: Expression
    "``beta(t, w)``."

    drift: Expression
    "Reduced drift, a function of ``t``."

    diffusion: Expression
    "Reduced diffusion, a function of ``t``."

    numeric: bool = False
    "Whether ``beta`` and the diffusion are tabulated rather than symbolic."


def _at(e: Expression, **values: float) -> Expression:
    return simplify(substitute(e, {name: Num(value) for name, value in values.items()}))


def _definite(e: Expression, var: str, box: Box, settings: Settings) -> Optional[Expression]:
    """``int_0^var e``, by rule."""
    antiderivative = integrate_rule_based(e, var, box, settings)
    if antiderivative is None:
        return None
    return simplify(antiderivative - substitute(antiderivative, {var: ZERO}))


def _beta_grid(
    a: Expression, kappa: Expression, b: Expression, c: float, w: str, box: Box, settings: Settings
) -> Tuple[Table, Table]:
    spacing = settings.beta_grid_spacing
    t_lo, t_hi = min(box["t"][0], 0.0), max(box["t"][1], 0.0)
    w_lo, w_hi = min(box[w][0], 0.0), max(box[w][1], 0.0)
    ts = np.unique(np.concatenate([np.arange(t_lo, t_hi + spacing, spacing), [0.0]]))
    ws = np.unique(np.concatenate([np.arange(w_lo, w_hi + spacing, spacing), [0.0]]))
    T, W = np.meshgrid(ts, ws, indexing="ij")
    grid_a = evaluate_array(a, {"t": T.ravel(), w: W.ravel()}, T.size).reshape(T.shape)
    A = cumulative_trapezoid(grid_a, ws, axis=1, initial=0.0)
    A -= A[:, [int(np.flatnonzero(ws == 0.0)[0])]]
    k = evaluate_array(kappa, {"t": ts, w: np.zeros_like(ts)}, ts.size)
    K = cumulative_trapezoid(k, ts, initial=0.0)
    K -= K[int(np.flatnonzero(ts == 0.0)[0])]
    C = float(evaluate_array(a, {"t": 0.0, w: 0.0}, 1)[0]) + c + K
    values = -A + C[:, None] * W + evaluate_array(b, {"t": T.ravel()}, T.size).reshape(T.shape)
    return Table(("t", w), (ts, ws), values, "beta"), Table(("t",), (ts,), C, "sigma")


def solve_beta(
    space: VariableSpace,
    drift: Expression,
    diffusion: Expression,
    Phi: Expression,
    domain: Optional[Domain] = None,
    c: float = 0.0,
    b: Expression = ZERO,
    settings: Optional[Settings] = None,
) -> BetaSolution:
    """
    Find ``beta(t, w)`` such that ``x = Phi + beta`` maps ``dy = F dt + S dw`` to ``dx = f(t) dt + s(t) dw``.

    With ``a = Phi_w + S Phi_y`` and ``p = Phi_t + F Phi_y + (Phi_ww + 2 S Phi_yw + S^2 Phi_yy) / 2``,
    both free of ``y`` when ``phi`` is a symmetry, the new diffusion ``a + beta_w`` must be free of
    ``w`` and the new drift ``p + beta_t + beta_ww / 2`` too. This gives
    ``beta = -int_0^w a + C(t) w + b(t)`` with ``C' = a_t + a_ww / 2 - p_w`` and ``C(0) = a(0, 0) + c``.
    The family is fixed by ``beta_w(0, 0) = c`` and the free function ``b``.

    Args:
        space: A scalar space
        drift: ``F(y, t)``
        diffusion: ``S(y, t)``
        Phi: The map before the integration term
        domain: Sampling intervals
        c: The free constant
        b: The free function of ``t``
        settings: Tolerances and the grid spacing of the tabulated fallback

    Raises:
        BetaError: If ``a`` or ``p`` depends on ``y``, or ``C'`` depends on ``w``

    Returns:
        ``beta`` and the reduced coefficients
    """
    settings = resolve(settings)
    validate_shape(space.n, 1, "state dimension of a scalar equation", raise_on_error=True)
    domain = domain or Domain()
    y, w = space.state_names[0], space.noise_names[0]
    b = as_expr(b)
    Phi_y = differentiate(Phi, y)
    a = simplify(differentiate(Phi, w) + diffusion * Phi_y)
    p = simplify(
        differentiate(Phi, "t")
        + drift * Phi_y
        + HALF
        * (
            differentiate(differentiate(Phi, w), w)
            + Num(2.0) * diffusion * differentiate(Phi_y, w)
            + diffusion * diffusion * differentiate(Phi_y, y)
        )
    )
    box = domain.box(space, [drift, diffusion, Phi, a, p], settings.seed)
    for label, e in (("diffusion", a), ("drift", p)):
        if not sampled_independent(e, [y], box, settings):
            raise BetaError(f"the {label} part {to_text(e)} depends on {y}")
    middle = 0.5 * (box[y][0] + box[y][1])
    a, p = _at(a, **{y: middle}), _at(p, **{y: middle})
    kappa = simplify(differentiate(a, "t") + HALF * differentiate(differentiate(a, w), w) - differentiate(p, w))
    if not sampled_independent(kappa, [w], box, settings):
        raise BetaError(f"the compatibility term {to_text(kappa)} depends on {w}")
    kappa0 = _at(kappa, **{w: 0.0})
    b_prime = simplify(differentiate(b, "t"))
    drift_new = simplify(_at(p, **{w: 0.0}) - HALF * _at(differentiate(a, w), **{w: 0.0}) + b_prime)

    A = _definite(a, w, box, settings)
    K = _definite(kappa0, "t", box, settings)
    if A is None or K is None:
        logger.warning("integration term tabulated on a grid of spacing %g", settings.beta_grid_spacing)
        beta, sigma = _beta_grid(a, kappa0, b, c, w, box, settings)
        return BetaSolution(beta, drift_new, sigma, numeric=True)
    C = simplify(_at(a, t=0.0, **{w: 0.0}) + Num(c) + K)
    beta = simplify(-A + C * Var(w) + b)
    logger.debug("beta = %s", to_text(beta))
    return BetaSolution(beta, drift_new, C)


def push_forward(X: VectorField, cov: ChangeOfVariables, express: bool = True) -> VectorField:
    """
    ``X~^i = (d Phi^i / d y^j) phi^j``, expressed in the new variables when ``express`` is true.

    Raises:
        InversionError: If ``express`` is requested for a map without an inverse
    """
    validate_shape(X.space.n, cov.space.n, "field dimension", raise_on_error=True)
    J = cov.jacobian()
    coeffs = [simplify(total(J[i][j] * X.coeffs[j] for j in range(cov.space.n))) for i in range(cov.space.n)]
    if express:
        if cov.inverse is None:
            raise InversionError("the field cannot be expressed in the new variables")
        inverse = {y: F for y, F in zip(cov.space.state_names, cov.inverse)}
        coeffs = [simplify(substitute(e, inverse)) for e in coeffs]
    return VectorField(X.space, coeffs, f"{X.name}~")


def check_straightening(
    X: VectorField, cov: ChangeOfVariables, settings: Optional[Settings] = None
) -> ResidualReport:
    """
    Whether the map sends ``X`` to ``d/dx^n``: ``(d Phi^i / d y^j) phi^j = delta^i_n`` at sampled old points.
    """
    settings = resolve(settings)
    pushed = push_forward(X, cov, express=False)
    n = cov.space.n
    labelled = [
        (f"straightening[{i + 1}]", simplify(e - (ONE if i == n - 1 else ZERO))) for i, e in enumerate(pushed.coeffs)
    ]
    box = cov.box([*X.coeffs, *pushed.coeffs], settings.seed)
    return sampled_report("straightening", labelled, list(X.coeffs), box, settings)


def verify_preservation(
    system: GeneralizedSystem, X: VectorField, cov: ChangeOfVariables, settings: Optional[Settings] = None
) -> ResidualReport:
    """
    Push ``X`` through ``cov`` and check it against the transformed system.

    Raises:
        InversionError: If the transformed system has no printable form
    """
    settings = resolve(settings)
    transformed = transform_system(system, cov, settings=settings)
    if isinstance(transformed, NumericSystem):
        raise InversionError("symmetries can only be checked on printable systems")
    return check_symmetry(transformed, push_forward(X, cov), settings)


def compose(first: ChangeOfVariables, second: ChangeOfVariables) -> ChangeOfVariables:
    """
    Apply ``first``, then ``second``: ``x = Phi2(Phi1(y))``.

    Raises:
        DimensionError: If the maps live on different spaces
    """
    validate_shape(second.space.n, first.space.n, "composed map dimension", raise_on_error=True)
    states = first.space.state_names
    forward = [simplify(substitute(phi, dict(zip(states, first.forward)))) for phi in second.forward]
    inverse = None
    if first.inverse is not None and second.inverse is not None:
        inverse = [simplify(substitute(F, dict(zip(states, second.inverse)))) for F in first.inverse]
    return ChangeOfVariables(
        first.space,
        forward,
        inverse,
        simplify(first.beta + second.beta) if first.space.n == 1 else ZERO,
        first.domain,
        f"{second.name}*{first.name}",
    )


def coefficients_agree(
    left: GeneralizedSystem, right: GeneralizedSystem, settings: Optional[Settings] = None
) -> float:
    """
    Largest sampled relative gap between corresponding coefficients of two systems on the same space.

    Raises:
        DimensionError: If the systems have different shapes
    """
    settings = resolve(settings)
    validate_shape(right.n, left.n, "state dimension", raise_on_error=True)
    validate_shape(right.m, left.m, "noise dimension", raise_on_error=True)
    pairs = list(zip(left.expressions(), right.expressions()))
    box = left.domain.merged(right.domain).box(left.space, [e for pair in pairs for e in pair], settings.seed)
    try:
        points = sample(box, [e for pair in pairs for e in pair], settings)
    except DegenerateSamplingError:
        return float("inf")
    return max((relative_gap(a, b, points) for a, b in pairs), default=0.0)

