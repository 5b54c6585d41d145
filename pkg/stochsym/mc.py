"""
Monte Carlo ground truth: Euler-Maruyama paths with stored Wiener increments.

Increments come from one counter-based Philox stream per ``(seed, path)``, converted to normals
through the inverse normal CDF, so an ensemble does not depend on how paths are split among
workers.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, special, stats

from .config import Settings, resolve
from .exceptions import DimensionError, IncrementMismatchError, TooFewPathsError
from .expr import Expression, evaluate, evaluate_array
from .model import GeneralizedSystem, NumericSystem
from .validation import validate_int, validate_positive, validate_shape

if TYPE_CHECKING:  # pragma: no cover
    from .transform import ChangeOfVariables

logger = logging.getLogger(__name__)

System = Union[GeneralizedSystem, NumericSystem]

#: float: Scale of the 53-bit mantissa used to turn raw 64-bit draws into uniforms
UNIT = 2.0**-53

#: tuple: Time steps of the default pathwise convergence sequence
DEFAULT_STEP_SEQUENCE = (1e-2, 5e-3, 2.5e-3, 1.25e-3)


@dataclass(frozen=True)
class TimeGrid:
    """``steps`` equal steps of size ``dt`` starting at ``t0``."""

    dt: float
    steps: int
    t0: float = 0.0

    def __post_init__(self):
        validate_positive(self.dt, raise_on_error=True)
        validate_int(self.steps, min_value=1, raise_on_error=True)

    @classmethod
    def spanning(cls, end: float, dt: float, t0: float = 0.0) -> "TimeGrid":
        """The grid from ``t0`` to (about) ``end`` with step ``dt``."""
        return cls(dt, max(1, int(round((end - t0) / dt))), t0)

    @property
    def times(self) -> np.ndarray:
        """The ``steps + 1`` grid times."""
        return self.t0 + self.dt * np.arange(self.steps + 1)

    @property
    def end(self) -> float:
        """The last grid time."""
        return self.t0 + self.dt * self.steps

    def halved(self) -> "TimeGrid":
        """Same span, half the step."""
        return TimeGrid(self.dt / 2, self.steps * 2, self.t0)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Simulated paths together with the increments that drove them."""

    grid: TimeGrid

    increments: np.ndarray
    "Wiener increments, shape ``(paths, steps, m)``."

    states: np.ndarray
    "States, shape ``(paths, steps + 1, n)``; ``nan`` after a blow-up."

    completed: np.ndarray
    "Per-path flag, false for paths stopped by the blow-up threshold."

    seed: int = 0

    def __post_init__(self):
        paths, steps, _ = self.increments.shape
        validate_shape(steps, self.grid.steps, "increment steps", raise_on_error=True)
        validate_shape(self.states.shape[0], paths, "state paths", raise_on_error=True)
        validate_shape(self.states.shape[1], steps + 1, "state times", raise_on_error=True)
        validate_shape(self.completed.shape[0], paths, "completion flags", raise_on_error=True)

    @property
    def paths(self) -> int:
        """Number of paths."""
        return self.increments.shape[0]

    @property
    def n(self) -> int:
        """State dimension."""
        return self.states.shape[2]

    @property
    def m(self) -> int:
        """Noise dimension."""
        return self.increments.shape[2]

    @property
    def completion(self) -> float:
        """Fraction of paths that reached the end of the grid."""
        return float(self.completed.mean()) if self.paths else 1.0

    def wiener(self) -> np.ndarray:
        """``w(t_k)`` as running sums of the increments, ``w(t_0) = 0``; shape ``(paths, steps + 1, m)``."""
        zeros = np.zeros((self.paths, 1, self.m))
        return np.concatenate([zeros, np.cumsum(self.increments, axis=1)], axis=1)

    def final(self, component: int = 0) -> np.ndarray:
        """Values of one component at the last time, completed paths only."""
        return self.states[self.completed, -1, component]

    def with_states(self, states: np.ndarray, completed: Optional[np.ndarray] = None) -> "PathEnsemble":
        """The same increments carrying other states."""
        return PathEnsemble(
            self.grid, self.increments, states, self.completed if completed is None else completed, self.seed
        )


def _path_normals(seed: int, path: int, count: int) -> np.ndarray:
    generator = np.random.Philox(key=(path << 64) | seed)
    raw = generator.random_raw(count)
    uniforms = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * UNIT
    return special.ndtri(uniforms)


def wiener_increments(grid: TimeGrid, m: int, paths: int, seed: int = 42, workers: int = 1) -> np.ndarray:
    """
    Normal(0, dt) increments of shape ``(paths, steps, m)``.

    Path ``p`` always uses the Philox stream keyed by ``(p, seed)``, so results are bitwise
    identical for any number of ``workers``.
    """
    validate_int(paths, min_value=1, raise_on_error=True)
    validate_int(m, min_value=1, raise_on_error=True)
    increments = np.empty((paths, grid.steps, m))
    scale = math.sqrt(grid.dt)
    count = grid.steps * m

    def fill(path: int) -> None:
        increments[path] = (_path_normals(seed, path, count) * scale).reshape(grid.steps, m)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(paths)))
    else:
        for path in range(paths):
            fill(path)
    return increments


def _euler_block(
    system: System, x0: np.ndarray, grid: TimeGrid, increments: np.ndarray, threshold: float
) -> Tuple[np.ndarray, np.ndarray]:
    paths, steps, m = increments.shape
    n = x0.shape[0]
    states = np.empty((paths, steps + 1, n))
    x = np.repeat(x0[:, None], paths, axis=1)
    w = np.zeros((m, paths))
    alive = np.ones(paths, dtype=bool)
    states[:, 0, :] = x.T
    times = grid.times
    with np.errstate(all="ignore"):
        for k in range(steps):
            drift, diffusion = system.coefficients(x, float(times[k]), w)
            dW = increments[:, k, :].T
            x = x + drift * grid.dt + np.einsum("imp,mp->ip", diffusion, dW)
            w = w + dW
            blown = ~np.all(np.isfinite(x) & (np.abs(x) <= threshold), axis=0)
            alive &= ~blown
            x[:, ~alive] = np.nan
            states[:, k + 1, :] = x.T
    return states, alive


def simulate(
    system: System,
    x0: Sequence[float],
    grid: TimeGrid,
    paths: int = 1000,
    seed: int = 42,
    increments: Optional[np.ndarray] = None,
    workers: int = 1,
    settings: Optional[Settings] = None,
) -> PathEnsemble:
    """
    Euler-Maruyama: ``x_{k+1} = x_k + f(x_k, t_k, w_k) dt + sigma(x_k, t_k, w_k) dW_k``.

    Coefficients are evaluated at the left end of each step. ``w_k`` is the running sum of the
    increments, which matters for systems whose coefficients depend on ``w``.

    Args:
        system: Any system with a vectorized ``coefficients`` method
        x0: Initial state
        grid: Time grid
        paths: Number of paths
        seed: Increment stream seed
        increments: Reuse these increments instead of drawing new ones
        workers: Threads used to split paths
        settings: Supplies the blow-up threshold

    Raises:
        IncrementMismatchError: If ``increments`` has the wrong shape

    Returns:
        The ensemble; paths exceeding the threshold are flagged, not fatal
    """
    settings = resolve(settings)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    validate_shape(x0.shape[0], system.n, "initial state", raise_on_error=True)
    if increments is None:
        increments = wiener_increments(grid, system.m, paths, seed, workers)
    elif increments.shape[1:] != (grid.steps, system.m):
        raise IncrementMismatchError(
            f"increments of shape {increments.shape} do not fit {grid.steps} steps and {system.m} noises"
        )
    total = increments.shape[0]
    chunks = np.array_split(np.arange(total), max(1, min(workers, total)))

    def run(indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _euler_block(system, x0, grid, increments[indices], settings.blowup_threshold)

    if len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results: List[Tuple[np.ndarray, np.ndarray]] = list(pool.map(run, chunks))
    else:
        results = [run(chunks[0])]
    states = np.concatenate([r[0] for r in results], axis=0)
    completed = np.concatenate([r[1] for r in results], axis=0)
    ensemble = PathEnsemble(grid, increments, states, completed, seed)
    if not completed.all():
        logger.warning("%d of %d paths exceeded the blow-up threshold", int((~completed).sum()), total)
    logger.info("simulated %d paths over %d steps of %g", total, grid.steps, grid.dt)
    return ensemble


def map_paths(cov: "ChangeOfVariables", ensemble: PathEnsemble) -> np.ndarray:
    """Apply ``x = Phi(y, t, w)`` to every state of ``ensemble``; shape ``(paths, steps + 1, n)``."""
    space = cov.space
    paths, times, n = ensemble.states.shape
    size = paths * times
    w = ensemble.wiener()
    point = {name: ensemble.states[:, :, i].ravel() for i, name in enumerate(space.state_names)}
    point["t"] = np.tile(ensemble.grid.times, paths)
    point.update({name: w[:, :, k].ravel() for k, name in enumerate(space.noise_names)})
    mapped = np.empty_like(ensemble.states)
    with np.errstate(all="ignore"):
        for i, phi in enumerate(cov.forward):
            mapped[:, :, i] = evaluate_array(phi, point, size).reshape(paths, times)
    return mapped


@dataclass(frozen=True)
class PathwiseReport:
    """Pathwise distance between a mapped ensemble and a directly simulated one, per step size."""

    steps: Tuple[float, ...]
    medians: Tuple[float, ...]
    p95: Tuple[float, ...]
    threshold: float = 1e-2

    @property
    def factors(self) -> Tuple[float, ...]:
        """Ratios of consecutive medians."""
        return tuple(a / b if b > 0 else math.inf for a, b in zip(self.medians, self.medians[1:]))

    @property
    def decreasing(self) -> bool:
        """Whether the median error decreases with every halving."""
        return all(b < a for a, b in zip(self.medians, self.medians[1:])) or all(v == 0 for v in self.medians)

    @property
    def passed(self) -> bool:
        """Monotone decrease and a small final median."""
        return self.decreasing and self.medians[-1] < self.threshold

    def as_dict(self) -> dict:
        """A JSON-ready summary."""
        return {
            "check": "pathwise",
            "verdict": "pass" if self.passed else "fail",
            "steps": list(self.steps),
            "medians": list(self.medians),
            "p95": list(self.p95),
            "threshold": self.threshold,
        }


def sup_errors(mapped: np.ndarray, direct: np.ndarray) -> np.ndarray:
    """Per-path ``sup_t |mapped - direct|`` over all components; paths with ``nan`` are dropped."""
    errors = np.abs(mapped - direct).max(axis=(1, 2))
    return errors[np.isfinite(errors)]


def pathwise_check(
    original: System,
    cov: "ChangeOfVariables",
    transformed: System,
    y0: Sequence[float],
    end: float = 1.0,
    step_sequence: Sequence[float] = DEFAULT_STEP_SEQUENCE,
    paths: int = 200,
    seed: int = 42,
    threshold: float = 1e-2,
    workers: int = 1,
    settings: Optional[Settings] = None,
) -> PathwiseReport:
    """
    Simulate ``original`` from ``y0`` and ``transformed`` from ``Phi(y0)`` with the same increments and
    compare ``Phi(y(t))`` with ``x(t)`` path by path, for each step size of ``step_sequence``.
    """
    settings = resolve(settings)
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    medians, p95 = [], []
    for dt in step_sequence:
        grid = TimeGrid.spanning(end, dt)
        start = cov.space.point(list(y0), grid.t0)
        x0 = [float(evaluate(phi, start)) for phi in cov.forward]
        source = simulate(original, y0, grid, paths, seed, workers=workers, settings=settings)
        target = simulate(transformed, x0, grid, increments=source.increments, seed=seed, workers=workers, settings=settings)
        errors = sup_errors(map_paths(cov, source), target.states)
        if errors.size == 0:
            medians.append(math.inf)
            p95.append(math.inf)
            continue
        medians.append(float(np.median(errors)))
        p95.append(float(np.percentile(errors, 95)))
        logger.debug("dt %g: median %.3e, p95 %.3e", dt, medians[-1], p95[-1])
    return PathwiseReport(tuple(step_sequence), tuple(medians), tuple(p95), threshold)


@dataclass(frozen=True, eq=False)
class ExactLaw:
    """Gaussian marginals ``x(t) ~ N(mean(t), variance(t))`` of an integrable equation."""

    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray

    def at(self, index: int = -1) -> Tuple[float, float]:
        """Mean and variance at a grid index."""
        return float(self.mean[index]), float(self.variance[index])


def _scalar(e: Expression):
    def value(s: float) -> float:
        return float(evaluate(e, {"t": s}))

    return value


def exact_law(drift: Expression, diffusion: Expression, x0: float, times: Sequence[float]) -> ExactLaw:
    """
    ``mean(t) = x0 + int f`` and ``variance(t) = int sigma^2`` from the first time, by quadrature.

    Raises:
        DimensionError: If a coefficient depends on anything but ``t``
    """
    for e in (drift, diffusion):
        if not e.variables <= {"t"}:
            raise DimensionError("coefficients of t only", sorted(e.variables), "integrable form")
    times = np.asarray(times, dtype=float)
    f, s = _scalar(drift), _scalar(diffusion)
    mean = np.empty_like(times)
    variance = np.empty_like(times)
    mean_so_far, variance_so_far = float(x0), 0.0
    mean[0], variance[0] = mean_so_far, 0.0
    for k in range(1, times.size):
        a, b = times[k - 1], times[k]
        mean_so_far += integrate.quad(f, a, b)[0]
        variance_so_far += integrate.quad(lambda u: s(u) ** 2, a, b)[0]
        mean[k], variance[k] = mean_so_far, variance_so_far
    return ExactLaw(times, mean, variance)


def exact_sample(drift: Expression, diffusion: Expression, x0: float, ensemble: PathEnsemble) -> PathEnsemble:
    """
    Exact Gaussian paths of ``dx = f(t) dt + sigma(t) dw`` driven by the increments of ``ensemble``.

    Each step adds ``int f`` and ``sqrt(int sigma^2 / dt) dW``, which has the exact law.
    """
    validate_shape(ensemble.m, 1, "noise dimension of an integrable form", raise_on_error=True)
    law = exact_law(drift, diffusion, x0, ensemble.grid.times)
    steps_mean = np.diff(law.mean)
    steps_scale = np.sqrt(np.diff(law.variance) / ensemble.grid.dt)
    moves = steps_mean[None, :] + steps_scale[None, :] * ensemble.increments[:, :, 0]
    states = np.concatenate([np.full((ensemble.paths, 1), float(x0)), x0 + np.cumsum(moves, axis=1)], axis=1)
    return ensemble.with_states(states[:, :, None], np.ones(ensemble.paths, dtype=bool))


@dataclass(frozen=True)
class LawReport:
    """Kolmogorov-Smirnov comparison of sampled values with a normal law."""

    statistic: float
    p_value: float
    paths: int
    mean: float
    variance: float
    alpha: float = 0.01

    @property
    def passed(self) -> bool:
        """Whether the normal law is not rejected at level ``alpha``."""
        return self.p_value > self.alpha

    def as_dict(self) -> dict:
        """A JSON-ready summary."""
        return {
            "check": "law",
            "verdict": "pass" if self.passed else "fail",
            "statistic": self.statistic,
            "p_value": self.p_value,
            "paths": self.paths,
            "mean": self.mean,
            "variance": self.variance,
        }


def law_check(
    ensemble: PathEnsemble, law: ExactLaw, index: int = -1, component: int = 0, settings: Optional[Settings] = None
) -> LawReport:
    """
    Two-sided KS test of the states at grid ``index`` against ``N(mean, variance)`` (asymptotic p-value).

    Raises:
        TooFewPathsError: With fewer than ``settings.min_law_paths`` completed paths
    """
    settings = resolve(settings)
    values = ensemble.states[ensemble.completed, index, component]
    values = values[np.isfinite(values)]
    if values.size < settings.min_law_paths:
        raise TooFewPathsError(settings.min_law_paths, int(values.size))
    mean, variance = law.at(index)
    result = stats.kstest(values, "norm", args=(mean, math.sqrt(variance)), method="asymp")
    logger.info("KS statistic %.4f, p-value %.4f over %d paths", result.statistic, result.pvalue, values.size)
    return LawReport(float(result.statistic), float(result.pvalue), int(values.size), mean, variance, settings.ks_alpha)


def to_columns(ensemble: PathEnsemble, component: int = 0) -> str:
    """Columnar text: a header ``t path0 path1 ...`` and one row per grid time."""
    header = " ".join(["t", *(f"path{p}" for p in range(ensemble.paths))])
    table = np.column_stack([ensemble.grid.times, ensemble.states[:, :, component].T])
    rows = [" ".join(repr(float(v)) for v in row) for row in table]
    return "\n".join([header, *rows]) + "\n"
