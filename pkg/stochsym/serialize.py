"""Serialize and deserialize reports and path ensembles."""

import json
from typing import Any, Callable, Optional

import numpy as np
import umsgpack

from .exceptions import UndeserializableReport, UnserializableReport
from .mc import PathEnsemble, TimeGrid

SerializerFunc = Callable[[Any], bytes]
DeserializerFunc = Callable[[bytes], Any]

#: str: Tag stored in every packed ensemble
ENSEMBLE_FORMAT = "stochsym-ensemble"

#: int: Layout version of packed ensembles
ENSEMBLE_VERSION = 1

_FLOAT = np.dtype("<f8")


def default_serializer(report: Any) -> bytes:
    """Serialize a report using JSON with sorted keys, so equal reports give equal bytes."""
    return json.dumps(report, sort_keys=True, indent=2).encode()


def default_deserializer(report: bytes) -> Any:
    """Deserialize a report using JSON."""
    if isinstance(report, bytes):
        return json.loads(report.decode("utf-8"))
    else:
        return json.loads(report)


def serialize_report(report: Any, serializer: Optional[SerializerFunc] = None) -> bytes:
    """
    Serialize a report.

    Args:
        report: A JSON-ready mapping
        serializer: Optional function replacing :func:`default_serializer`

    Raises:
        UnserializableReport: If the serializer fails

    Returns:
        The serialized report
    """
    serializer = serializer or default_serializer
    try:
        return serializer(report)
    except Exception as e:  # NOQA: BLE001
        raise UnserializableReport(report, serializer.__name__) from e


def deserialize_report(payload: bytes, deserializer: Optional[DeserializerFunc] = None) -> Any:
    """
    Deserialize a report.

    Raises:
        UndeserializableReport: If the deserializer fails
    """
    deserializer = deserializer or default_deserializer
    try:
        return deserializer(payload)
    except Exception as e:  # NOQA: BLE001
        raise UndeserializableReport(payload, deserializer.__name__) from e


def pack_ensemble(ensemble: PathEnsemble) -> bytes:
    """
    Pack an ensemble into a msgpack map.

    The map holds the header fields ``format``, ``version``, ``paths``, ``steps``, ``n``, ``m``,
    ``dt``, ``t0`` and ``seed``, and three binary blocks: ``states[path, step, i]`` and
    ``increments[path, step, k]`` as little-endian float64 in row-major order, and ``completed``
    as one byte per path.

    Raises:
        UnserializableReport: If packing fails
    """
    try:
        return umsgpack.packb(
            {
                "format": ENSEMBLE_FORMAT,
                "version": ENSEMBLE_VERSION,
                "paths": ensemble.paths,
                "steps": ensemble.grid.steps,
                "n": ensemble.n,
                "m": ensemble.m,
                "dt": float(ensemble.grid.dt),
                "t0": float(ensemble.grid.t0),
                "seed": int(ensemble.seed),
                "states": np.ascontiguousarray(ensemble.states, dtype=_FLOAT).tobytes(),
                "increments": np.ascontiguousarray(ensemble.increments, dtype=_FLOAT).tobytes(),
                "completed": np.ascontiguousarray(ensemble.completed, dtype=np.uint8).tobytes(),
            }
        )
    except Exception as e:  # NOQA: BLE001
        raise UnserializableReport(ensemble, "pack_ensemble") from e


def unpack_ensemble(payload: bytes) -> PathEnsemble:
    """
    Rebuild an ensemble packed by :func:`pack_ensemble`.

    Raises:
        UndeserializableReport: If the payload is not a packed ensemble of a known version
    """
    try:
        header = umsgpack.unpackb(payload)
        if header["format"] != ENSEMBLE_FORMAT or header["version"] != ENSEMBLE_VERSION:
            raise ValueError(f"unknown ensemble layout {header['format']} v{header['version']}")
        paths, steps, n, m = header["paths"], header["steps"], header["n"], header["m"]
        states = np.frombuffer(header["states"], dtype=_FLOAT).reshape(paths, steps + 1, n)
        increments = np.frombuffer(header["increments"], dtype=_FLOAT).reshape(paths, steps, m)
        completed = np.frombuffer(header["completed"], dtype=np.uint8).astype(bool)
        grid = TimeGrid(header["dt"], steps, header["t0"])
        return PathEnsemble(grid, increments.copy(), states.copy(), completed, header["seed"])
    except Exception as e:  # NOQA: BLE001
        raise UndeserializableReport(payload, "unpack_ensemble") from e
