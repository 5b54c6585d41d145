"""
The shipped example models and the verdicts they must reproduce.

Each :class:`FixtureCase` names a model file under ``stochsym/models``, the checks to run on it
and the expected outcome of each. :func:`run_fixture` reruns the checks and the reduction
pipeline and compares every observed verdict with the recorded one.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

from .config import Settings, resolve
from .exceptions import ModelFileError, StochSymError
from .expr import Expression, VariableSpace, is_printable
from .model import Domain, SolvableChain
from .modelfile import ModelFile, loads_model
from .parsing import parse
from .reduce import TABULATED_TOLERANCE, ReductionResult, integrate_scalar, reduce_chain, reduce_once, separable_detect
from .sampling import relative_gap, sample
from .symcheck import CompatibilityInput, check_symmetry, compatibility_check, kernel_membership

logger = logging.getLogger(__name__)

#: str: Package directory holding the model files
MODELS = "models"

Equation = Tuple[str, Tuple[str, ...]]


def packaged_models() -> List[str]:
    """File names of the models shipped with the package."""
    folder = resources.files(__package__).joinpath(MODELS)
    return sorted(entry.name for entry in folder.iterdir() if entry.name.endswith(".sde"))


def load_packaged(filename: str, settings: Optional[Settings] = None) -> ModelFile:
    """
    Load a model shipped with the package.

    Raises:
        ModelFileError: If there is no such model or it is invalid
    """
    try:
        text = resources.files(__package__).joinpath(MODELS, filename).read_text(encoding="utf-8")
    except OSError as e:
        raise ModelFileError(None, 0, f"no packaged model {filename!r}: {e}") from e
    return loads_model(text, settings)


@dataclass(frozen=True)
class FixtureCase:
    """A model file and the verdicts recorded for it."""

    name: str
    model: str
    "File name under ``stochsym/models``."

    pipeline: str = "none"
    "``integrate``, ``reduce``, ``chain``, ``separable`` or ``none``."

    symmetries: Tuple[Tuple[str, bool], ...] = ()
    "Named symmetries with their expected residual verdicts; the first one drives the pipeline."

    maps: Tuple[Optional[str], ...] = ()
    "Map names per stage for ``reduce`` and ``chain``."

    reconstruction: Tuple[Equation, ...] = ()
    "Expected split-off equations in stage order, as ``(drift, diffusion row)`` texts."

    reduced: Tuple[Equation, ...] = ()
    "Expected remaining system, one equation per state variable."

    reduction_passes: bool = True
    "Whether the pipeline is expected to succeed."

    compatibility_passes: Optional[bool] = None
    "Expected compatibility verdict of the first symmetry, when it is checked."

    kernels: Tuple[Tuple[str, bool, bool], ...] = ()
    "Named kernel functions with the expected ``(in kernel of L, in kernel of M)``."

    separable: Optional[bool] = None
    "Whether the scaling symmetry is expected to be detected."

    def load(self, settings: Optional[Settings] = None) -> ModelFile:
        """Load the model file from the package data."""
        return load_packaged(self.model, settings)


@dataclass(frozen=True)
class FixtureResult:
    """Observed and expected verdicts of one fixture."""

    name: str
    observed: Dict[str, bool]
    expected: Dict[str, bool]
    notes: Dict[str, str] = field(default_factory=dict)
    reduction: Optional[dict] = None

    @property
    def passed(self) -> bool:
        """Whether every recorded verdict was reproduced."""
        return self.observed == self.expected

    def as_dict(self) -> dict:
        """A JSON-ready summary."""
        return {
            "fixture": self.name,
            "verdict": "pass" if self.passed else "fail",
            "observed": dict(sorted(self.observed.items())),
            "expected": dict(sorted(self.expected.items())),
            "notes": dict(sorted(self.notes.items())),
            "reduction": self.reduction,
        }


FIXTURES: Tuple[FixtureCase, ...] = (
    FixtureCase(
        "ex1",
        "ex1.sde",
        "integrate",
        symmetries=(("X", True), ("wrong", False)),
        reconstruction=(("1", ("1",)),),
        compatibility_passes=True,
    ),
    FixtureCase(
        "ex2",
        "ex2.sde",
        "integrate",
        symmetries=(("X", True),),
        reconstruction=(("exp(-t)", ("1",)),),
    ),
    FixtureCase(
        "ex3",
        "ex3.sde",
        "reduce",
        symmetries=(("X", True),),
        maps=("Phi",),
        reconstruction=(("-x1", ("x1", "1")),),
        reduced=(("x1^2", ("1", "0")),),
    ),
    FixtureCase(
        "ex3_chain",
        "ex3_chain.sde",
        "chain",
        symmetries=(("X1", True), ("X2", True)),
        maps=("Phi", None),
        reconstruction=(("-x1", ("x1", "1")), ("1", ("1", "0"))),
    ),
    FixtureCase(
        "ex4",
        "ex4.sde",
        "chain",
        symmetries=(("X1", True), ("X2", True)),
        maps=("Phi", None),
        reconstruction=(
            ("exp(-t)", ("exp(-t)", "0.5*exp(-t)")),
            ("2*exp(t)", ("0.2*exp(t)", "exp(t)")),
        ),
    ),
    FixtureCase(
        "ex5",
        "ex5.sde",
        "integrate",
        symmetries=(("X", True),),
        reconstruction=(("0.5*t^2", ("t",)),),
    ),
    FixtureCase(
        "ex6",
        "ex6.sde",
        "integrate",
        symmetries=(("X", True), ("X0", True), ("Xu", True)),
        reconstruction=(("-(1 + t)", ("1",)),),
        compatibility_passes=True,
    ),
    FixtureCase(
        "ex7",
        "ex7.sde",
        "integrate",
        symmetries=(("X", True),),
        reconstruction=(("0", ("1",)),),
        compatibility_passes=True,
        kernels=(("zeta", True, True),),
    ),
    FixtureCase(
        "ex7_constant",
        "ex7_constant.sde",
        "integrate",
        symmetries=(("X", True),),
        reconstruction=(("0.25", ("0.5",)),),
    ),
    FixtureCase(
        "ex8",
        "ex8.sde",
        "integrate",
        symmetries=(("X", True),),
        reduction_passes=False,
        compatibility_passes=False,
        kernels=(("z", True, False),),
    ),
    FixtureCase(
        "separable_linear",
        "separable_linear.sde",
        "separable",
        reconstruction=(("3*t - 1.5", ("3",)),),
        separable=True,
    ),
    FixtureCase("separable_square", "separable_square.sde", separable=False),
    FixtureCase(
        "quadrature",
        "quadrature.sde",
        "integrate",
        symmetries=(("X", True),),
        reconstruction=(("1", ("1",)),),
    ),
)


def registry() -> Dict[str, FixtureCase]:
    """All fixtures by name."""
    return {case.name: case for case in FIXTURES}


def _gap(actual: Expression, text: str, space: VariableSpace, domain: Domain, settings: Settings) -> float:
    expected = parse(text, space)
    box = domain.box(space, [actual, expected], settings.seed)
    points = sample(box, [actual, expected], settings)
    return relative_gap(actual, expected, points)


def _compare(result: ReductionResult, case: FixtureCase, settings: Settings) -> Tuple[bool, str]:
    equations = result.reconstruction
    if len(equations) != len(case.reconstruction):
        return False, f"{len(equations)} split-off equations, expected {len(case.reconstruction)}"
    worst = 0.0
    numeric = False
    split_off = [stage for stage in result.stages if stage.reconstruction is not None]
    for stage, equation, (drift, row) in zip(split_off, equations, case.reconstruction):
        space = stage.cov.space
        domain = stage.transformed.domain if stage.transformed is not None else Domain()
        pairs = [(equation.drift, drift), *zip(equation.diffusion, row)]
        for actual, text in pairs:
            numeric = numeric or not is_printable(actual)
            worst = max(worst, _gap(actual, text, space, domain, settings))
    if case.reduced:
        reduced = result.reduced
        if reduced is None or reduced.n != len(case.reduced):
            return False, "the remaining system has the wrong dimension"
        for f, row_actual, (drift, row) in zip(reduced.drift, reduced.diffusion, case.reduced):
            for actual, text in [(f, drift), *zip(row_actual, row)]:
                worst = max(worst, _gap(actual, text, reduced.space, reduced.domain, settings))
    tolerance = TABULATED_TOLERANCE if numeric else settings.roundtrip_tolerance
    return worst < tolerance, f"largest coefficient gap {worst:.3e}"


def _reduce(case: FixtureCase, model: ModelFile, settings: Settings) -> ReductionResult:
    system = model.system
    if case.pipeline == "separable":
        beta = model.separable[0] if model.separable else system.drift[0]
        found = separable_detect(system.space, beta, system.domain, settings)
        if found is None:
            raise StochSymError("no scaling symmetry")
        return integrate_scalar(system, found[0], settings=settings)
    fields = [model.symmetry(name) for name, _ in case.symmetries]
    if case.pipeline == "integrate":
        return integrate_scalar(system, fields[0], model.beta_c, model.beta_b, settings)
    covs = [None if name is None else model.map(name) for name in case.maps]
    if case.pipeline == "reduce":
        return reduce_once(system, fields[0], covs[0], settings)
    return reduce_chain(system, SolvableChain(tuple(fields[: len(covs)])), covs, settings)


def run_fixture(case: FixtureCase, settings: Optional[Settings] = None) -> FixtureResult:
    """
    Load a fixture, rerun its checks and its pipeline, and collect the verdicts.

    Raises:
        ModelFileError: If the model file cannot be loaded
    """
    settings = resolve(settings)
    model = case.load(settings)
    system = model.system
    observed: Dict[str, bool] = {}
    expected: Dict[str, bool] = {}
    notes: Dict[str, str] = {}

    for name, passes in case.symmetries:
        report = check_symmetry(system, model.symmetry(name), settings)
        observed[f"symmetry {name}"] = report.passed
        expected[f"symmetry {name}"] = passes
        notes[f"symmetry {name}"] = f"max residual {report.max_residual:.3e}"
    if case.compatibility_passes is not None:
        X = model.symmetry(case.symmetries[0][0])
        report = compatibility_check(CompatibilityInput.from_system(system, X), settings)
        observed["compatibility"] = report.passed
        expected["compatibility"] = case.compatibility_passes
        notes["compatibility"] = f"max residual {report.max_residual:.3e}"
    for name, in_l, in_m in case.kernels:
        observed[f"kernel {name} of L"], observed[f"kernel {name} of M"] = kernel_membership(
            system, model.kernels[name], settings
        )
        expected[f"kernel {name} of L"], expected[f"kernel {name} of M"] = in_l, in_m
    if case.separable is not None:
        beta = model.separable[0] if model.separable else system.drift[0]
        observed["separable"] = separable_detect(system.space, beta, system.domain, settings) is not None
        expected["separable"] = case.separable

    summary = None
    if case.pipeline in ("integrate", "reduce", "chain", "separable"):
        expected["reduction"] = case.reduction_passes
        try:
            result = _reduce(case, model, settings)
        except StochSymError as e:
            observed["reduction"] = False
            notes["reduction"] = f"{type(e).__name__}: {e}"
        else:
            summary = result.as_dict()
            matches, note = _compare(result, case, settings)
            observed["reduction"] = matches
            notes["reduction"] = note
    outcome = FixtureResult(case.name, observed, expected, notes, summary)
    logger.info("fixture %s: %s", case.name, "pass" if outcome.passed else "fail")
    return outcome


def run_all(
    names: Optional[Sequence[str]] = None, settings: Optional[Settings] = None, workers: int = 1
) -> List[FixtureResult]:
    """
    Run fixtures in registry order (all of them when ``names`` is empty).

    Raises:
        ModelFileError: If a name is not registered
    """
    cases = registry()
    selected = list(cases) if not names else list(names)
    unknown = [name for name in selected if name not in cases]
    if unknown:
        raise ModelFileError(None, 0, f"unknown fixtures {unknown}; known: {sorted(cases)}")
    chosen = [cases[name] for name in selected]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda case: run_fixture(case, settings), chosen))
    return [run_fixture(case, settings) for case in chosen]
