"""Exceptions raised."""

from typing import Optional, Union


class StochSymError(Exception):
    """
    Base class for all stochsym exceptions.
    """

    pass


class ParseError(StochSymError):
    """
    Raised when an expression does not conform to the expression grammar.

    The ``line`` and ``column`` attributes are 1-based positions within the parsed text.
    """

    def __init__(self, line: int, column: int, message: str):
        self.line = line
        self.column = column
        self.detail = message
        super().__init__(f"line {line}, column {column}: {message}")


class UnknownVariableError(ParseError):
    """
    Raised when an identifier is not part of the declared :class:`~stochsym.expr.VariableSpace`.
    """

    def __init__(self, name: str, line: int, column: int):
        self.name = name
        super().__init__(line, column, f"unknown variable '{name}'")


class DomainError(StochSymError):
    """
    Raised when an expression is evaluated at a singular point.

    The offending subexpression is kept in :attr:`subexpression` as printed text.
    """

    def __init__(self, subexpression: str, detail: str):
        self.subexpression = subexpression
        self.detail = detail
        super().__init__(f"{detail} in `{subexpression}`")


class DimensionError(StochSymError):
    """
    Raised when shapes or dimensions of systems, fields or points disagree.
    """

    def __init__(self, expected: Union[int, str], actual: Union[int, str], what: str):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


class ModelError(StochSymError):
    """
    The base exception for invalid systems, fields and maps.
    """

    pass


class NoiseDependenceError(ModelError):
    """
    Raised when an :class:`~stochsym.model.ItoSystem` coefficient references a Wiener variable.

    Use :class:`~stochsym.model.GeneralizedSystem` for w-dependent coefficients.
    """

    def __init__(self, where: str):
        self.where = where
        super().__init__(f"{where} references a Wiener variable; use a GeneralizedSystem instead.")


class ModelFileError(ModelError):
    """
    Raised when a model file cannot be parsed or violates an invariant.
    """

    def __init__(self, section: Optional[str], line: int, message: str):
        self.section = section
        self.line = line
        where = f"[{section}] " if section else ""
        super().__init__(f"{where}line {line}: {message}")


class DegenerateSamplingError(StochSymError):
    """
    Raised when too few usable sample points or independent rows are available.
    """

    def __init__(self, needed: int, found: int):
        self.needed = needed
        self.found = found
        super().__init__(f"Degenerate sampling: needed {needed} usable rows or points, found {found}.")


class PhiZeroError(StochSymError):
    """
    Raised when a symmetry coefficient vanishes somewhere on the sampling domain.
    """

    def __init__(self, where: str):
        super().__init__(f"The symmetry coefficient vanishes on the domain ({where}).")


class MonotonicityError(StochSymError):
    """
    Raised when a scalar map is not strictly monotone in the state variable on the domain.
    """

    def __init__(self) -> None:
        super().__init__("The map derivative with respect to the state variable vanishes or changes sign on the domain.")


class InversionError(StochSymError):
    """
    Raised when a map cannot be inverted, symbolically or numerically.
    """

    def __init__(self, detail: str):
        super().__init__(f"Cannot invert map: {detail}")


class SingularJacobianError(StochSymError):
    """
    Raised when the Jacobian of a change of variables is (numerically) singular on the domain.
    """

    def __init__(self, min_det: float):
        self.min_det = min_det
        super().__init__(f"Jacobian determinant too small on the domain (min |det| = {min_det:.3e}).")


class BetaError(StochSymError):
    """
    Raised when the equations for the integration term of a random map depend on the state variable.
    """

    def __init__(self, detail: str):
        super().__init__(f"Cannot solve for the integration term: {detail}")


class CompatibilityError(StochSymError):
    """
    Raised when a random symmetry fails the compatibility condition and no integrating map exists.
    """

    def __init__(self, max_residual: float):
        self.max_residual = max_residual
        super().__init__(f"Compatibility condition fails (max sampled residual {max_residual:.3e}).")


class NonIntegrableError(StochSymError):
    """
    Raised when a reduction that should give t-only coefficients does not.
    """

    def __init__(self, detail: str):
        super().__init__(f"Reduced equation is not integrable: {detail}")


class StraighteningError(StochSymError):
    """
    Raised when a supplied change of variables does not map the symmetry to the last coordinate field.
    """

    def __init__(self, detail: str):
        super().__init__(f"Map does not straighten the symmetry: {detail}")


class StageError(StochSymError):
    """
    Raised when a stage of a chain reduction fails one of its checks.
    """

    def __init__(self, stage: int, check: str, detail: str):
        self.stage = stage
        self.check = check
        super().__init__(f"Stage {stage} failed {check}: {detail}")


class UnsupportedFieldError(StochSymError):
    """
    Raised for vector fields an operation does not support (random fields in chains).
    """

    def __init__(self, detail: str):
        super().__init__(detail)


class IncrementMismatchError(StochSymError):
    """
    Raised when an ensemble lacks or disagrees with the stored Wiener increments.
    """

    def __init__(self, detail: str):
        super().__init__(detail)


class TooFewPathsError(StochSymError):
    """
    Raised when a distributional test has fewer completed paths than required.
    """

    def __init__(self, needed: int, found: int):
        self.needed = needed
        self.found = found
        super().__init__(f"At least {needed} completed paths are required, found {found}.")


class ValueTooLow(ValueError):
    """
    Raised when a numerical value is lower than a specified minimum.
    """

    def __init__(self, min_val: Union[int, float]):
        super().__init__(f"The value must not be lower than {min_val}.")


class ValueTooHigh(ValueError):
    """
    Raised when a numerical value is greater than a specified maximum.
    """

    def __init__(self, max_val: Union[int, float]):
        super().__init__(f"The value must not be higher than {max_val}.")


class UnserializableReport(StochSymError):
    """
    Raised when a report or ensemble cannot be serialized.
    """

    def __init__(self, payload: object, serializer: str):
        super().__init__(f"Cannot serialize `{type(payload).__name__}` with {serializer}")


class UndeserializableReport(StochSymError):
    """
    Raised when bytes cannot be decoded back into a report or ensemble.
    """

    def __init__(self, payload: bytes, deserializer: str):
        super().__init__(f"Cannot deserialize {len(payload)} bytes with {deserializer}")


class UsageError(StochSymError):
    """
    Raised when the command line does not follow the command grammar.
    """

    def __init__(self, detail: str):
        super().__init__(detail)
