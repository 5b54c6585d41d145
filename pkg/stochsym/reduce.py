"""
Reduction pipelines: integrate a scalar equation with one symmetry, split one equation off a system
with a straightened symmetry, iterate along a solvable chain, and rebuild the split-off variables
along simulated paths.
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import Settings, resolve
from .exceptions import (
    CompatibilityError,
    DegenerateSamplingError,
    DimensionError,
    IncrementMismatchError,
    NonIntegrableError,
    StageError,
    StraighteningError,
    UnsupportedFieldError,
)
from .expr import (
    ZERO,
    Expression,
    Num,
    Var,
    VariableSpace,
    as_expr,
    differentiate,
    evaluate,
    evaluate_array,
    is_printable,
    is_zero,
    rename,
    simplify,
    substitute,
    to_text,
)
from .integration import invert_numeric
from .mc import PathEnsemble
from .model import Domain, GeneralizedSystem, NumericSystem, SolvableChain, VectorField, make_system
from .sampling import Box, relative_gap, sample
from .symcheck import (
    CompatibilityInput,
    ResidualReport,
    check_solvable_chain,
    check_symmetry,
    compatibility_check,
    sampled_independent,
)
from .transform import (
    ChangeOfVariables,
    build_phi_from_symmetry,
    check_straightening,
    ito_image,
    push_forward,
    solve_beta,
    transform_system,
)
from .validation import validate_shape

logger = logging.getLogger(__name__)

#: float: Agreement required between a tabulated integration term and the reduced coefficients
TABULATED_TOLERANCE = 1e-2


@dataclass(frozen=True)
class IntegrableScalarForm:
    """
    ``dx = f(t) dt + sigma(t) dw``.

    Raises:
        NonIntegrableError: If a coefficient references anything but ``t``
    """

    drift: Expression
    diffusion: Expression

    def __post_init__(self):
        for label, e in (("drift", self.drift), ("diffusion", self.diffusion)):
            extra = e.variables - {"t"}
            if extra:
                raise NonIntegrableError(f"{label} {to_text(e)} depends on {sorted(extra)}")

    def system(self, m: int = 1) -> GeneralizedSystem:
        """The form as a scalar system driven by the first of ``m`` noises."""
        return make_system(VariableSpace(1, m), [self.drift], [[self.diffusion] + [ZERO] * (m - 1)])

    def solution_text(self) -> str:
        """``x(t) = x0 + int_0^t f(s) ds + int_0^t sigma(s) dw(s)``."""

        def in_s(e: Expression) -> str:
            return to_text(rename(e, {"t": "s"})) if is_printable(e) else to_text(e)

        return f"x(t) = x0 + int_0^t ({in_s(self.drift)}) ds + int_0^t ({in_s(self.diffusion)}) dw(s)"


@dataclass(frozen=True)
class ReconstructionEquation:
    """``dx^index = g dt + rho_k dw^k`` with coefficients depending only on the earlier variables and ``t``."""

    index: int
    drift: Expression
    diffusion: Tuple[Expression, ...]

    def __str__(self) -> str:
        terms = [f"({to_text(self.drift)}) dt"]
        terms.extend(f"({to_text(s)}) dw{k}" for k, s in enumerate(self.diffusion, start=1))
        return f"dx{self.index} = " + " + ".join(terms)


@dataclass(frozen=True)
class Stage:
    """One step of a reduction."""

    index: int
    cov: ChangeOfVariables
    "The map applied at this stage."

    reports: Tuple[ResidualReport, ...] = ()
    "Checks run at this stage."

    transformed: Optional[GeneralizedSystem] = None
    "The full system in the new variables, when it has a printable form."

    reconstruction: Optional[ReconstructionEquation] = None
    "The equation split off at this stage."

    form: Optional[IntegrableScalarForm] = None
    "Set when the stage integrated a scalar equation."


@dataclass(frozen=True)
class ReductionResult:
    """Stages of a reduction, the system that remains, and the integrable scalar tail if any."""

    stages: Tuple[Stage, ...]
    reduced: Optional[GeneralizedSystem] = None
    "What is left to solve; ``None`` once everything is reduced to quadratures."

    form: Optional[IntegrableScalarForm] = None

    @property
    def reconstruction(self) -> Tuple[ReconstructionEquation, ...]:
        """The split-off equations in stage order."""
        return tuple(stage.reconstruction for stage in self.stages if stage.reconstruction is not None)

    @property
    def dimension(self) -> int:
        """State dimension of the remaining system."""
        return 0 if self.reduced is None else self.reduced.n

    @property
    def integrable(self) -> bool:
        """Whether the remaining system (if any) has coefficients of ``t`` alone."""
        if self.reduced is None:
            return True
        return all(e.variables <= {"t"} for e in self.reduced.expressions())

    def initial_state(self, x0: Sequence[float], t0: float = 0.0) -> np.ndarray:
        """The initial state of the remaining system for the initial state ``x0`` of the input system."""
        current = np.asarray(x0, dtype=float)
        for stage in self.stages:
            point = stage.cov.space.point(list(current), t0)
            mapped = np.array([float(evaluate(phi, point)) for phi in stage.cov.forward])
            current = mapped[:-1]
        return current

    def as_dict(self) -> dict:
        """A JSON-ready summary."""
        stages = []
        for stage in self.stages:
            stages.append(
                {
                    "stage": stage.index,
                    "map": [to_text(e) for e in stage.cov.forward],
                    "inverse": None if stage.cov.inverse is None else [to_text(e) for e in stage.cov.inverse],
                    "beta": to_text(stage.cov.beta),
                    "system": None if stage.transformed is None else list(stage.transformed.equations()),
                    "reconstruction": None if stage.reconstruction is None else str(stage.reconstruction),
                    "checks": [report.as_dict() for report in stage.reports],
                }
            )
        return {
            "stages": stages,
            "reduced": None if self.reduced is None else list(self.reduced.equations()),
            "form": None
            if self.form is None
            else {
                "drift": to_text(self.form.drift),
                "diffusion": to_text(self.form.diffusion),
                "solution": self.form.solution_text(),
            },
            "integrable": self.integrable,
        }


def _frozen(e: Expression, names: Sequence[str], box: Box, settings: Settings) -> Optional[Expression]:
    """``e`` without ``names``: as is, or evaluated at the box midpoints when sampling shows no dependence."""
    present = [name for name in names if e.depends_on(name)]
    if not present:
        return e
    if not sampled_independent(e, present, box, settings):
        return None
    middle = {name: Num(0.5 * (box[name][0] + box[name][1])) for name in present}
    return simplify(substitute(e, middle))


def _confirm(system: GeneralizedSystem, cov: ChangeOfVariables, form: IntegrableScalarForm, numeric: bool, settings: Settings):
    drift, diffusion = ito_image(system, cov.forward)
    expressions = [drift[0], diffusion[0][0], form.drift, form.diffusion]
    points = sample(system.box([*cov.forward, *expressions], settings.seed), expressions, settings)
    gap = max(relative_gap(drift[0], form.drift, points), relative_gap(diffusion[0][0], form.diffusion, points))
    tolerance = TABULATED_TOLERANCE if numeric else settings.roundtrip_tolerance
    if not gap < tolerance:
        raise NonIntegrableError(f"transformed coefficients differ from the reduced form by {gap:.3e}")


def integrate_scalar(
    system: GeneralizedSystem,
    X: VectorField,
    c: float = 0.0,
    b: Expression = ZERO,
    settings: Optional[Settings] = None,
) -> ReductionResult:
    """
    Map a scalar equation with a symmetry ``X = phi d/dy`` to ``dx = f(t) dt + sigma(t) dw``.

    The map is ``x = Phi(y, t, w) + beta(t, w)`` with ``Phi_y = 1 / phi``. The integration term is
    zero for a deterministic symmetry unless ``c`` or ``b`` ask for a random map.

    Args:
        system: A scalar equation
        X: A symmetry of it
        c: Free constant of the integration term
        b: Free function of ``t`` of the integration term
        settings: Tolerances

    Raises:
        StageError: If ``X`` fails the determining equations
        CompatibilityError: If a random symmetry fails the compatibility condition
        NonIntegrableError: If the transformed coefficients are not functions of ``t`` alone
    """
    settings = resolve(settings)
    validate_shape(system.n, 1, "state dimension of a scalar equation", raise_on_error=True)
    validate_shape(system.m, 1, "noise dimension of a scalar equation", raise_on_error=True)
    b = as_expr(b)
    symmetry = check_symmetry(system, X, settings)
    reports = [symmetry]
    if not symmetry.passed:
        raise StageError(1, "symmetry residuals", f"max residual {symmetry.max_residual:.3e}")
    if X.is_random:
        compat = compatibility_check(CompatibilityInput.from_system(system, X), settings)
        reports.append(compat)
        if not compat.passed:
            raise CompatibilityError(compat.max_residual)
    y = system.space.state_names[0]
    cov = build_phi_from_symmetry(system.space, X.coeffs[0], system.domain, settings)
    if X.is_random or c != 0.0 or not is_zero(b):
        solution = solve_beta(
            system.space, system.drift[0], system.diffusion[0][0], cov.forward[0], system.domain, c, b, settings
        )
        cov = cov.with_beta(solution.beta)
        form = IntegrableScalarForm(solution.drift, solution.diffusion)
        _confirm(system, cov, form, solution.numeric, settings)
    else:
        drift, diffusion = ito_image(system, cov.forward)
        box = system.box([*cov.forward, drift[0], diffusion[0][0]], settings.seed)
        f, s = _frozen(drift[0], [y], box, settings), _frozen(diffusion[0][0], [y], box, settings)
        if f is None or s is None:
            raise NonIntegrableError(f"coefficients {to_text(drift[0])}, {to_text(diffusion[0][0])} depend on {y}")
        form = IntegrableScalarForm(f, s)
    equation = ReconstructionEquation(1, form.drift, (form.diffusion,))
    logger.info("integrated %s: %s", system.equations()[0], form.solution_text())
    stage = Stage(1, cov, tuple(reports), form.system(system.m), equation, form)
    return ReductionResult((stage,), None, form)


def reduce_once(
    system: GeneralizedSystem,
    X: VectorField,
    cov: Optional[ChangeOfVariables],
    settings: Optional[Settings] = None,
    stage: int = 1,
) -> ReductionResult:
    """
    Use a symmetry straightened by ``cov`` to split the last equation off a system.

    After the map, no coefficient may depend on the last variable. The first ``n - 1`` equations
    form the reduced system and the last one is solved by a stochastic quadrature once they are.
    A scalar equation driven by one noise is integrated with :func:`integrate_scalar` instead and
    ``cov`` is ignored. A scalar equation driven by several noises is split off entirely; its map
    defaults to the one built from the symmetry.

    Raises:
        StraighteningError: If ``cov`` does not send ``X`` to ``d/dx^n``
        StageError: If a coefficient still depends on the last variable
    """
    settings = resolve(settings)
    if system.n == 1 and system.m == 1:
        result = integrate_scalar(system, X, settings=settings)
        return ReductionResult(tuple(replace(s, index=stage) for s in result.stages), None, result.form)
    if system.n == 1 and cov is None:
        if X.is_random:
            raise UnsupportedFieldError("random symmetries need a single noise")
        cov = build_phi_from_symmetry(system.space, X.coeffs[0], system.domain, settings)
    if cov is None:
        raise StraighteningError("a map is required for systems")
    straight = check_straightening(X, cov, settings)
    if not straight.passed:
        raise StraighteningError(f"max residual {straight.max_residual:.3e}")
    transformed = transform_system(system, cov, settings=settings)
    if isinstance(transformed, NumericSystem):
        raise StageError(stage, "printable transform", "the transformed system has no symbolic form")
    space = system.space
    last = space.state_names[-1]
    box = transformed.box(seed=settings.seed)

    def split(e: Expression) -> Expression:
        frozen = _frozen(e, [last], box, settings)
        if frozen is None:
            raise StageError(stage, f"independence of {last}", f"{to_text(e)} depends on {last}")
        return frozen

    drift = [split(f) for f in transformed.drift]
    diffusion = [[split(s) for s in row] for row in transformed.diffusion]
    reduced = None
    if space.n > 1:
        reduced_space = space.reduced(space.n - 1)
        reduced = make_system(
            reduced_space, drift[:-1], diffusion[:-1], transformed.domain.restricted(reduced_space.names)
        )
    equation = ReconstructionEquation(space.n, drift[-1], tuple(diffusion[-1]))
    logger.info("stage %d split off %s", stage, equation)
    return ReductionResult((Stage(stage, cov, (straight,), transformed, equation),), reduced, None)


def _project(
    Y: VectorField, stage: Stage, reduced: GeneralizedSystem, settings: Settings
) -> Tuple[VectorField, ResidualReport]:
    cov = stage.cov
    pushed = push_forward(Y, cov)
    last = cov.space.state_names[-1]
    box = stage.transformed.box(pushed.coeffs, settings.seed)
    coeffs = []
    for phi in pushed.coeffs[:-1]:
        frozen = _frozen(phi, [last], box, settings)
        if frozen is None:
            raise StageError(stage.index, f"projection of {Y.name}", f"{to_text(phi)} depends on {last}")
        coeffs.append(frozen)
    projected = VectorField(reduced.space, coeffs, Y.name)
    report = check_symmetry(reduced, projected, settings)
    if not report.passed:
        raise StageError(stage.index, f"preserved symmetry {Y.name}", f"max residual {report.max_residual:.3e}")
    return projected, report


def reduce_chain(
    system: GeneralizedSystem,
    chain: SolvableChain,
    covs: Sequence[Optional[ChangeOfVariables]],
    settings: Optional[Settings] = None,
) -> ReductionResult:
    """
    Reduce along a solvable chain, one generator per stage, in chain order.

    ``covs[k]`` must straighten the ``k``-th generator as re-expressed after the earlier stages.
    After each stage the remaining generators are pushed through the map, projected to the
    reduced variables and re-verified as symmetries of the reduced system. A stage on a scalar
    system integrates it and needs no map.

    Raises:
        DimensionError: If there is not one map per generator
        StageError: If the chain is not solvable or a stage fails one of its checks
    """
    settings = resolve(settings)
    if len(covs) != len(chain):
        raise DimensionError(len(chain), len(covs), "maps in the chain")
    if len(chain) > system.n:
        raise StageError(0, "chain length", f"{len(chain)} generators for {system.n} variables")
    solvable = check_solvable_chain(chain, system.domain, settings)
    if not solvable.passed:
        raise StageError(0, "solvable chain", f"max residual {solvable.max_residual:.3e}")
    current: Optional[GeneralizedSystem] = system
    fields: List[VectorField] = list(chain.fields)
    stages: List[Stage] = []
    form = None
    for index, cov in enumerate(covs, start=1):
        X, rest = fields[0], fields[1:]
        if current.n == 1 and current.m == 1 and cov is not None:
            logger.debug("stage %d integrates a scalar equation; its map is not used", index)
        result = reduce_once(current, X, cov, settings, stage=index)
        stage = result.stages[0]
        current, form = result.reduced, result.form
        projected = []
        reports = list(stage.reports)
        for Y in rest:
            field_, report = _project(Y, stage, current, settings)
            projected.append(field_)
            reports.append(report)
        stages.append(replace(stage, reports=tuple(reports)))
        fields = projected
    logger.info("reduced %d variables along a chain of %d generators", system.n, len(chain))
    return ReductionResult(tuple(stages), current, form)


def separable_system(
    space: VariableSpace, beta: Expression, f: Expression, sigma: Expression, domain: Optional[Domain] = None
) -> GeneralizedSystem:
    """``dx = beta(x) f(t) dt + beta(x) sigma(t) dw``."""
    return make_system(space, [simplify(beta * f)], [[simplify(beta * sigma)]], domain)


def separable_detect(
    space: VariableSpace,
    beta: Expression,
    domain: Optional[Domain] = None,
    settings: Optional[Settings] = None,
) -> Optional[Tuple[VectorField, ChangeOfVariables]]:
    """
    The scaling symmetry of ``dx = beta(x) f(t) dt + beta(x) sigma(t) dw``, if there is one.

    It exists when ``beta(x) = b0 x``, decided by sampling ``beta / x``. The symmetry is
    ``x d/dx`` and the map ``y = log(x)``, which absorbs ``b0`` into the time functions.

    Returns:
        ``(X, map)`` or ``None``
    """
    settings = resolve(settings)
    validate_shape(space.n, 1, "state dimension of a scalar equation", raise_on_error=True)
    x = space.state_names[0]
    ratio = simplify(beta / Var(x))
    box = (domain or Domain()).box(space, [beta, ratio], settings.seed)
    try:
        if not sampled_independent(ratio, [x], box, settings):
            return None
    except DegenerateSamplingError as e:
        logger.debug("separable test failed to sample: %s", e)
        return None
    X = VectorField(space, [Var(x)], "X")
    return X, build_phi_from_symmetry(space, Var(x), domain, settings, name="log")


def _split_variable(
    equation: ReconstructionEquation,
    reduced_states: np.ndarray,
    names: Sequence[str],
    ensemble: PathEnsemble,
    start: float,
) -> np.ndarray:
    paths, times, _ = reduced_states.shape
    size = paths * times
    w = ensemble.wiener()
    point = {name: reduced_states[:, :, i].ravel() for i, name in enumerate(names)}
    point["t"] = np.tile(ensemble.grid.times, paths)
    point.update({f"w{k + 1}": w[:, :, k].ravel() for k in range(ensemble.m)})
    g = evaluate_array(equation.drift, point, size).reshape(paths, times)
    moves = g[:, :-1] * ensemble.grid.dt
    for k, rho in enumerate(equation.diffusion):
        values = evaluate_array(rho, point, size).reshape(paths, times)
        moves = moves + values[:, :-1] * ensemble.increments[:, :, k]
    return np.concatenate([np.full((paths, 1), start), start + np.cumsum(moves, axis=1)], axis=1)


def _pull_back(cov: ChangeOfVariables, states: np.ndarray, ensemble: PathEnsemble) -> np.ndarray:
    paths, times, n = states.shape
    size = paths * times
    space = cov.space
    w = ensemble.wiener()
    point = {"t": np.tile(ensemble.grid.times, paths)}
    point.update({name: w[:, :, k].ravel() for k, name in enumerate(space.noise_names)})
    result = np.empty_like(states)
    with np.errstate(all="ignore"):
        if cov.inverse is not None:
            point.update({name: states[:, :, i].ravel() for i, name in enumerate(space.state_names)})
            for i, F in enumerate(cov.inverse):
                result[:, :, i] = evaluate_array(F, point, size).reshape(paths, times)
        else:
            y = space.state_names[0]
            phi = cov.forward[0]
            slope = simplify(differentiate(phi, y))
            lower, upper = cov.domain.box(space, cov.forward)[y]
            roots = invert_numeric(phi, slope, y, states[:, :, 0].ravel(), point, start=0.5 * (lower + upper))
            result[:, :, 0] = roots.reshape(paths, times)
    return result


def reconstruct(result: ReductionResult, reduced_paths: PathEnsemble, x0: Sequence[float]) -> PathEnsemble:
    """
    Rebuild full paths, in the variables of the reduced input system, from paths of the remaining system.

    Working from the last stage back, each split-off variable is the left-point Ito sum of its
    reconstruction equation along the already known variables, driven by the stored increments,
    and the stage's inverse map returns to the previous variables.

    Args:
        result: A reduction
        reduced_paths: Paths of the remaining system (no state columns when nothing remains)
        x0: Initial state of the input system

    Raises:
        IncrementMismatchError: If the ensemble does not match the remaining system
    """
    if reduced_paths.n != result.dimension:
        raise IncrementMismatchError(
            f"paths have {reduced_paths.n} state columns, the remaining system has {result.dimension}"
        )
    starts: List[np.ndarray] = []
    current0 = np.asarray(x0, dtype=float)
    t0 = reduced_paths.grid.t0
    for stage in result.stages:
        point = stage.cov.space.point(list(current0), t0)
        mapped = np.array([float(evaluate(phi, point)) for phi in stage.cov.forward])
        starts.append(mapped)
        current0 = mapped[:-1]
    states = reduced_paths.states
    for stage, start in zip(reversed(result.stages), reversed(starts)):
        equation = stage.reconstruction
        if equation is None or reduced_paths.m != stage.cov.space.m:
            raise IncrementMismatchError(f"stage {stage.index} cannot be rebuilt from these increments")
        names = stage.cov.space.state_names[:-1]
        column = _split_variable(equation, states, names, reduced_paths, float(start[-1]))
        full = np.concatenate([states, column[:, :, None]], axis=2)
        states = _pull_back(stage.cov, full, reduced_paths)
    completed = reduced_paths.completed & np.all(np.isfinite(states), axis=(1, 2))
    return reduced_paths.with_states(states, completed)
