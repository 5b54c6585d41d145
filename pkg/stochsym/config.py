"""Run-wide numerical settings."""

from dataclasses import dataclass, replace
from typing import Any

from .validation import validate_float, validate_int, validate_positive


@dataclass(frozen=True)
class Settings:
    """Tolerances, sample sizes and seeds shared by all checks."""

    seed: int = 42
    "Seed for quasi-random sampling and Monte Carlo streams."

    tolerance: float = 1e-8
    """Residual verdict tolerance. A check passes when the max sampled ``|residual|`` is below
    ``tolerance * (1 + scale)``, where ``scale`` is the max sampled magnitude of the tested field."""

    points: int = 200
    "Number of quasi-random sample points per check."

    guard_band: float = 1e-3
    "Sample points closer than this to a detected singular locus are discarded."

    null_space_cutoff: float = 1e-8
    "Relative singular-value cutoff for the ansatz null space."

    roundtrip_tolerance: float = 1e-7
    "Tolerance for map round trips and sampled coefficient equality."

    integration_check_tolerance: float = 1e-9
    "Relative residual allowed when verifying a rule-based antiderivative."

    jacobian_min_det: float = 1e-6
    "Smallest sampled ``|det J|`` accepted for a change of variables."

    quadrature_tolerance: float = 1e-10
    "Absolute tolerance for adaptive quadrature."

    beta_grid_spacing: float = 1e-2
    "Grid spacing in ``t`` and ``w`` for the numeric integration-term fallback."

    blowup_threshold: float = 1e12
    "Paths whose state exceeds this magnitude are stopped and flagged."

    ks_alpha: float = 0.01
    "Significance level of the Kolmogorov-Smirnov law check."

    min_law_paths: int = 1000
    "Fewest completed paths accepted by the law check."

    def __post_init__(self):
        validate_int(self.seed, min_value=0, raise_on_error=True)
        validate_int(self.points, min_value=1, raise_on_error=True)
        validate_int(self.min_law_paths, min_value=1, raise_on_error=True)
        for name in (
            "tolerance",
            "null_space_cutoff",
            "roundtrip_tolerance",
            "integration_check_tolerance",
            "jacobian_min_det",
            "quadrature_tolerance",
            "beta_grid_spacing",
            "blowup_threshold",
        ):
            validate_positive(getattr(self, name), raise_on_error=True)
        validate_float(self.guard_band, min_value=0.0, raise_on_error=True)
        validate_float(self.ks_alpha, min_value=0.0, max_value=1.0, raise_on_error=True)

    def replace(self, **changes: Any) -> "Settings":
        """Return a copy with ``changes`` applied."""
        return replace(self, **changes)


#: :class:`Settings`: The settings used when an operation is not given any
DEFAULT_SETTINGS = Settings()


def resolve(settings: "Settings | None") -> Settings:
    """Return ``settings`` or the defaults."""
    return DEFAULT_SETTINGS if settings is None else settings
