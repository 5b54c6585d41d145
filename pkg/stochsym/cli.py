"""
Command-line interface.

Every subcommand loads a model file, runs one pipeline and prints a :class:`~stochsym.report.Report`.
The exit code is 0 when every checked verdict passes, 1 when one fails and 2 on usage, input or
model errors.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

from . import __version__
from .config import Settings
from .exceptions import ModelError, StochSymError, UsageError
from .fixtures import load_packaged, packaged_models, run_all
from .mc import DEFAULT_STEP_SEQUENCE, TimeGrid, exact_law, law_check, map_paths, pathwise_check, simulate, to_columns
from .model import GeneralizedSystem, SolvableChain, VectorField
from .modelfile import GRAMMAR_EXCERPT, ModelFile, dump_model, load_model, loads_basis
from .parsing import parse
from .reduce import IntegrableScalarForm, ReductionResult, integrate_scalar, reduce_chain, reduce_once
from .report import Report
from .serialize import pack_ensemble
from .symcheck import (
    CompatibilityInput,
    check_regular_action,
    check_solvable_chain,
    check_symmetry,
    compatibility_check,
    random_residuals,
    search_symmetry_ansatz,
)
from .transform import Direction, build_phi_from_symmetry, solve_beta, transform_system

logger = logging.getLogger(__name__)

#: str: Log record format on stderr
LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """An argument parser whose errors raise instead of exiting."""

    def error(self, message: str):
        raise UsageError(message)


def _load(name: str, settings: Settings) -> ModelFile:
    path = Path(name)
    if path.exists() or path.name not in packaged_models():
        return load_model(path, settings)
    logger.debug("using packaged model %s", path.name)
    return load_packaged(path.name, settings)


def _model(args: argparse.Namespace, settings: Settings) -> ModelFile:
    return _load(args.model, settings)


def _beta_b(args: argparse.Namespace, model: ModelFile):
    if args.beta_b is None:
        return model.beta_b
    b = parse(args.beta_b, model.space)
    if not b.variables <= {"t"}:
        raise ModelError(f"--beta-b must be a function of t alone, not {args.beta_b!r}")
    return b


def _beta_c(args: argparse.Namespace, model: ModelFile) -> float:
    return model.beta_c if args.beta_c is None else args.beta_c


def _reduction(report: Report, result: ReductionResult) -> None:
    for stage, summary in zip(result.stages, result.as_dict()["stages"]):
        passed = all(check["verdict"] == "pass" for check in summary["checks"])
        report.add(f"stage {stage.index}", passed, {"map": str(stage.cov)}, summary)
    report.add(
        "result",
        "pass" if result.integrable else "info",
        results={
            "reduced": None if result.reduced is None else list(result.reduced.equations()),
            "reconstruction": [str(e) for e in result.reconstruction],
            "solution": None if result.form is None else result.form.solution_text(),
        },
    )


def cmd_check(args: argparse.Namespace, settings: Settings, report: Report) -> None:
    """Evaluate the determining equations of one or more named symmetries."""
    model = _model(args, settings)
    for name in args.symmetry:
        X = model.symmetry(name)
        if args.random and not X.is_random:
            result = random_residuals(model.system, X, settings)
        else:
            result = check_symmetry(model.system, X, settings)
        report.add(f"symmetry {name}", result.passed, {"model": args.model, "field": str(X)}, result.as_dict())
    if len(args.symmetry) > 1:
        chain = SolvableChain(tuple(model.symmetry(name) for name in args.symmetry))
        if not any(X.is_random for X in chain.fields):
            solvable = check_solvable_chain(chain, model.system.domain, settings)
            report.add("solvable chain", solvable.passed, results=solvable.as_dict())
            regular = check_regular_action(chain, model.system.domain, settings)
            report.add("regular action", regular.passed, results=regular.as_dict())


def cmd_search(args: argparse.Namespace, settings: Settings, report: Report) -> None:
    """Search a basis for symmetries: a basis file, or the ``[basis]`` section of the model."""
    if args.model is None and args.basis is None:
        raise UsageError("search needs --basis, --model or both")
    if args.model is None:
        model = _load(args.basis, settings)
        elements = model.basis
    else:
        model = _model(args, settings)
        elements = model.basis
        if args.basis is not None:
            elements = loads_basis(Path(args.basis).read_text(encoding="utf-8"), model.space)
    if not elements:
        raise ModelError("no basis elements: give a basis file or a [basis] section")
    basis = [VectorField(model.space, element, f"b{k}") for k, element in enumerate(elements, start=1)]
    vectors = search_symmetry_ansatz(model.system, basis, args.random, settings)
    report.add(
        "ansatz search",
        bool(vectors),
        {"model": args.model or args.basis, "basis": [str(b) for b in basis], "random": args.random},
        {"dimension": len(vectors), "coefficients": [[round(float(c), 12) for c in v] for v in vectors]},
    )


def cmd_compat(args: argparse.Namespace, settings: Settings, report: Report) -> None:
    """Evaluate the compatibility condition of a random symmetry."""
    model = _model(args, settings)
    X = model.symmetry(args.symmetry)
    result = compatibility_check(CompatibilityInput.from_system(model.system, X), settings)
    report.add(f"compatibility {args.symmetry}", result.passed, {"field": str(X)}, result.as_dict())


def cmd_transform(args: argparse.Namespace, settings: Settings, report: Report) -> None:
    """Rewrite the system through a named map."""
    model = _model(args, settings)
    cov = model.map(args.map)
    direction = Direction.PULLBACK if args.pullback else Direction.FORWARD
    transformed = transform_system(model.system, cov, direction, settings)
    report.add(
        f"{direction.value} through {args.map}",
        inputs={"map": str(cov)},
        results={"system": list(transformed.equations())},
    )
    if args.output:
        if not isinstance(transformed, GeneralizedSystem):
            raise ModelError("the transformed system has no printable form to save")
        Path(args.output).write_text(dump_model(ModelFile(transformed)), encoding="utf-8")
        logger.info("wrote %s", args.output)


def cmd_build_map(args: argparse.Namespace, settings: Settings, report: Report) -> None:
    """Build ``Phi`` from a scalar symmetry and, when asked or needed, the integration term."""
    if args.beta == "zero" and (args.beta_c is not None or args.beta_b is not None):
        raise UsageError("--beta zero excludes --beta-c and --beta-b")
    model = _model(args, settings)
    system = model.system
    X = model.symmetry(args.symmetry)
    cov = build_phi_from_symmetry(system.space, X.coeffs[0], system.domain, settings)
    results = {"Phi": [str(cov)], "inverse": None if cov.inverse is None else [str(F) for F in cov.inverse]}
    c, b = _beta_c(args, model), _beta_b(args, model)
    if args.beta == "auto" and (X.is_random or c != 0.0 or b.variables):
        solution = solve_beta(
            system.space, system.drift[0], system.diffusion[0][0], cov.forward[0], system.domain, c, b, settings
        )
        results.update(
            beta=str(solution.beta), drift=str(solution.drift), diffusion=str(solution.diffusion), numeric=solution.numeric
        )
    inputs = {"field": str(X), "beta": args.beta, "c": c if args.beta == "auto" else 0.0}
    report.add(f"map from {args.symmetry}", inputs=inputs, results=results)


def cmd_reduce(args: argparse.Namespace, settings: Settings, report: Report) -> None:
    """Reduce by one symmetry, or along a chain when several are named."""
    model = _model(args, settings)
    fields = [model.symmetry(name) for name in args.symmetry]
    names = args.map or ["-"] * len(fields)
    covs = [None if name == "-" else model.map(name) for name in names]
    if len(fields) == 1:
        result = reduce_once(model.system, fields[0], covs[0], settings)
    else:
        result = reduce_chain(model.system, SolvableChain(tuple(fields)), covs, settings)
    _reduction(report, result)


def cmd_integrate(args: argparse.Namespace, settings: Settings, report: Report) -> None:
    """Map a scalar equation to one with coefficients of ``t`` alone."""
    model = _model(args, settings)
    X = model.symmetry(args.symmetry)
    result = integrate_scalar(model.system, X, _beta_c(args, model), _beta_b(args, model), settings)
    _reduction(report, result)


def cmd_validate(args: argparse.Namespace, settings: Settings, report: Report) -> None:
    """Compare mapped paths of the original system with paths of the transformed one."""
    model = _model(args, settings)
    system = model.system
    form = None
    if args.symmetry:
        result = integrate_scalar(
            system, model.symmetry(args.symmetry), _beta_c(args, model), _beta_b(args, model), settings
        )
        stage = result.stages[0]
        cov, transformed, form = stage.cov, stage.transformed, result.form
    elif args.map:
        cov, transformed = model.map(args.map), None
    else:
        raise UsageError("validate needs --symmetry or --map")
    if args.reduced is not None:
        transformed, form = _load(args.reduced, settings).system, None
        if (transformed.n, transformed.m) != (system.n, system.m):
            raise ModelError(
                f"{args.reduced} has n={transformed.n}, m={transformed.m}; the model has n={system.n}, m={system.m}"
            )
    elif transformed is None:
        transformed = transform_system(system, cov, settings=settings)
    y0 = args.y0 or [1.0] * system.n
    pathwise = pathwise_check(
        system, cov, transformed, y0, args.end, args.steps, args.paths, settings.seed, args.threshold,
        settings=settings,
    )
    report.add("pathwise", pathwise.passed, {"y0": list(y0), "end": args.end, "paths": args.paths}, pathwise.as_dict())
    if form is None and isinstance(transformed, GeneralizedSystem) and transformed.n == transformed.m == 1:
        if all(e.variables <= {"t"} for e in transformed.expressions()):
            form = IntegrableScalarForm(transformed.drift[0], transformed.diffusion[0][0])
    if args.law_paths and form is not None:
        grid = TimeGrid.spanning(args.end, args.steps[-1])
        ensemble = simulate(system, y0, grid, args.law_paths, settings.seed, settings=settings)
        mapped = ensemble.with_states(map_paths(cov, ensemble))
        x0 = float(mapped.states[0, 0, 0])
        law = law_check(mapped, exact_law(form.drift, form.diffusion, x0, grid.times), settings=settings)
        report.add("law", law.passed, {"paths": args.law_paths}, law.as_dict())
        if args.columns:
            Path(args.columns).write_text(to_columns(mapped), encoding="utf-8")
        if args.ensemble:
            Path(args.ensemble).write_bytes(pack_ensemble(mapped))


def cmd_fixtures(args: argparse.Namespace, settings: Settings, report: Report) -> None:
    """Rerun the shipped example fixtures."""
    names = [] if args.run == ["all"] else args.run
    for outcome in run_all(names, settings, args.workers):
        summary = outcome.as_dict()
        report.add(f"fixture {outcome.name}", outcome.passed, results={k: summary[k] for k in ("observed", "notes")})


COMMANDS: Dict[str, Callable[[argparse.Namespace, Settings, Report], None]] = {
    "check": cmd_check,
    "search": cmd_search,
    "compat": cmd_compat,
    "transform": cmd_transform,
    "build-map": cmd_build_map,
    "reduce": cmd_reduce,
    "integrate": cmd_integrate,
    "validate": cmd_validate,
    "fixtures": cmd_fixtures,
}


def build_parser() -> argparse.ArgumentParser:
    """The argument parser with every subcommand."""
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=42, help="sampling and Monte Carlo seed (default 42)")
    common.add_argument("--tol", type=float, default=1e-8, help="residual tolerance (default 1e-8)")
    common.add_argument("--points", type=int, default=200, help="sample points per check (default 200)")
    common.add_argument("--format", choices=("text", "json"), default="text", help="report format")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")

    modelled = _Parser(add_help=False)
    modelled.add_argument("--model", required=True, help="model file, or the name of a packaged model")

    beta = _Parser(add_help=False)
    beta.add_argument("--beta-c", type=float, default=None, help="free constant of the integration term")
    beta.add_argument("--beta-b", default=None, help="free function of t of the integration term")

    parser = _Parser(prog="stochsym", description="Symmetry reduction of Ito stochastic differential equations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    check = commands.add_parser("check", parents=[common, modelled], help="check named symmetries")
    check.add_argument("--symmetry", action="append", required=True, help="symmetry name (repeat for a chain)")
    check.add_argument("--random", action="store_true", help="use the random determining equations")

    search = commands.add_parser("search", parents=[common], help="search a basis for symmetries")
    search.add_argument("--model", help="model file, or the name of a packaged model")
    search.add_argument("--basis", help="basis entries b<k> = ..., or a model file with a [basis] section")
    search.add_argument("--random", action="store_true", help="use the random determining equations")

    compat = commands.add_parser("compat", parents=[common, modelled], help="check the compatibility condition")
    compat.add_argument("--symmetry", required=True)

    transform = commands.add_parser("transform", parents=[common, modelled], help="apply a named map")
    transform.add_argument("--map", required=True)
    transform.add_argument("--pullback", action="store_true", help="treat the model as written in the new variables")
    transform.add_argument("--output", help="write the transformed model here")

    build_map = commands.add_parser("build-map", parents=[common, modelled, beta], help="build Phi from a symmetry")
    build_map.add_argument("--symmetry", required=True)
    build_map.add_argument(
        "--beta", choices=("auto", "zero"), default="auto", help="build the integration term when needed, or never"
    )

    reduce = commands.add_parser("reduce", parents=[common, modelled], help="reduce by symmetries")
    reduce.add_argument(
        "--symmetry",
        "--chain",
        dest="symmetry",
        action="extend",
        nargs="+",
        required=True,
        help="symmetry names, in chain order",
    )
    reduce.add_argument(
        "--map", "--maps", dest="map", action="extend", nargs="+", help="map name per symmetry, '-' for none"
    )

    integrate = commands.add_parser("integrate", parents=[common, modelled, beta], help="integrate a scalar equation")
    integrate.add_argument("--symmetry", required=True)

    validate = commands.add_parser("validate", parents=[common, modelled, beta], help="Monte Carlo validation")
    validate.add_argument("--symmetry", help="integrate with this symmetry and validate the result")
    validate.add_argument("--map", help="validate this map instead")
    validate.add_argument("--y0", type=float, nargs="+", help="initial state (default all ones)")
    validate.add_argument("--end", type=float, default=1.0)
    validate.add_argument("--paths", type=int, default=200, help="paths of the pathwise check")
    validate.add_argument(
        "--steps", "--dt", dest="steps", type=float, nargs="+", default=list(DEFAULT_STEP_SEQUENCE), help="step sizes"
    )
    validate.add_argument("--reduced", help="model file of the transformed system, instead of computing it")
    validate.add_argument("--law-paths", type=int, default=10_000, help="paths of the law check, 0 to skip")
    validate.add_argument("--threshold", type=float, default=1e-2, help="largest accepted final median error")
    validate.add_argument("--columns", help="write the mapped ensemble as columnar text")
    validate.add_argument("--ensemble", help="write the mapped ensemble as packed binary")

    fixtures = commands.add_parser("fixtures", parents=[common], help="rerun the example fixtures")
    fixtures.add_argument("--run", nargs="+", default=["all"], help="fixture names or 'all'")
    fixtures.add_argument("--workers", type=int, default=1)
    return parser


def configure_logging(verbosity: int) -> None:
    """Send log records to stderr at WARNING, INFO or DEBUG."""
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(verbosity, 2)]
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        configure_logging(args.verbose)
        settings = Settings(seed=args.seed, tolerance=args.tol, points=args.points)
        report = Report.start(args.command, settings)
        COMMANDS[args.command](args, settings, report)
    except SystemExit as e:
        return EXIT_PASS if not e.code else EXIT_ERROR
    except UsageError as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        print(GRAMMAR_EXCERPT, file=sys.stderr)
        return EXIT_ERROR
    except (StochSymError, OSError, ValueError) as e:
        logger.error("%s", e)
        return EXIT_ERROR
    sys.stdout.write(report.render(args.format))
    return EXIT_PASS if report.passed else EXIT_FAIL
