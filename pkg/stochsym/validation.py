"""Validation functions."""

import math
import re
from typing import Any, Collection, Optional

from .exceptions import DimensionError, ValueTooHigh, ValueTooLow

#: :obj:`re.Pattern`: Canonical variable names: state ``x1..xn``, time ``t`` and Wiener ``w1..wm``
VARIABLE_NAME_RE = re.compile(r"^(x[1-9][0-9]*|t|w[1-9][0-9]*)$")

#: int: The largest state or noise dimension accepted for a variable space
MAX_DIMENSION = 64

#: int: The largest ansatz basis accepted by the symmetry search
MAX_BASIS_SIZE = 64


def validate_variable_name(
    name: str, allowed: Optional[Collection[str]] = None, raise_on_error: bool = False
) -> bool:
    """
    Verify that ``name`` is a canonical variable name, optionally from an allowed set.

    Args:
        name: The variable name to validate
        allowed: If specified, the name must be one of these
        raise_on_error: If ``False``, return a ``bool`` instead of raising exceptions on errors

    Raises:
        ValueError: If ``name`` is not canonical or not allowed and ``raise_on_error`` is ``True``

    Returns:
        ``True`` if valid, ``False`` otherwise if ``raise_on_error`` is ``False``
    """
    if not isinstance(name, str) or not VARIABLE_NAME_RE.match(name):
        if raise_on_error:
            raise ValueError(f"'{name}' is not a variable name (expected x<i>, t or w<k>).")
        return False

    if allowed is not None and name not in allowed:
        if raise_on_error:
            raise ValueError(f"'{name}' is not a variable of this space.")
        return False

    return True


def validate_int(
    value: Any,
    min_value: Optional[int] = None,
    max_value: Optional[int] = None,
    raise_on_error: bool = False,
) -> bool:
    """
    Validate value is integer and between min and max values (if specified).

    Raises:
        TypeError: If ``value`` is not an ``int``
        ValueTooLow: If ``value`` is lower than a specified ``min_value``
        ValueTooHigh: If ``value`` is greater than a specified ``max_value``

    Args:
        value: The value to validate
        min_value: If specified, the integer must be greater than or equal to this value
        max_value: If specified, the integer must be less than or equal to this value
        raise_on_error: If False, return a ``bool`` instead of raising exceptions on errors

    Returns:
        ``True`` if valid, ``False`` otherwise if ``raise_on_error`` is ``False``
    """
    if value is None or isinstance(value, bool) or not isinstance(value, int):
        if raise_on_error:
            raise TypeError("An integer value is required.")
        return False

    if min_value is not None and value < min_value:
        if raise_on_error:
            raise ValueTooLow(min_value)
        return False

    if max_value is not None and value > max_value:
        if raise_on_error:
            raise ValueTooHigh(max_value)
        return False

    return True


def validate_float(
    value: Any,
    min_value: Optional[float] = None,
    max_value: Optional[float] = None,
    raise_on_error: bool = False,
) -> bool:
    """
    Validate value is a finite real number between min and max values (if specified).

    Raises:
        TypeError: If ``value`` is not an ``int`` or ``float``, or is not finite
        ValueTooLow: If ``value`` is lower than a specified ``min_value``
        ValueTooHigh: If ``value`` is greater than a specified ``max_value``

    Args:
        value: The value to validate
        min_value: If specified, the value must be greater than or equal to this value
        max_value: If specified, the value must be less than or equal to this value
        raise_on_error: If False, return a ``bool`` instead of raising exceptions on errors

    Returns:
        ``True`` if valid, ``False`` otherwise if ``raise_on_error`` is ``False``
    """
    if value is None or isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        if raise_on_error:
            raise TypeError("A finite integer or float value is required.")
        return False

    if min_value is not None and value < min_value:
        if raise_on_error:
            raise ValueTooLow(min_value)
        return False

    if max_value is not None and value > max_value:
        if raise_on_error:
            raise ValueTooHigh(max_value)
        return False

    return True


def validate_positive(value: Any, raise_on_error: bool = False) -> bool:
    """
    Validate value is a finite real number strictly greater than zero.

    Raises:
        TypeError: If ``value`` is not a finite number
        ValueTooLow: If ``value`` is not positive

    Args:
        value: The value to validate
        raise_on_error: If False, return a ``bool`` instead of raising exceptions on errors

    Returns:
        ``True`` if valid, ``False`` otherwise if ``raise_on_error`` is ``False``
    """
    if not validate_float(value, raise_on_error=raise_on_error):
        return False
    if value <= 0:
        if raise_on_error:
            raise ValueTooLow(0)
        return False
    return True


def validate_shape(actual: int, expected: int, what: str, raise_on_error: bool = False) -> bool:
    """
    Check that a length matches the expected dimension.

    Raises:
        DimensionError: If the lengths differ and ``raise_on_error`` is ``True``

    Returns:
        ``True`` if the lengths match, ``False`` otherwise if ``raise_on_error`` is ``False``
    """
    if actual != expected:
        if raise_on_error:
            raise DimensionError(expected, actual, what)
        return False
    return True
