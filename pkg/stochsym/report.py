"""Run reports: a log of checked steps rendered as text or JSON."""

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Union

from .config import Settings
from .exceptions import UndeserializableReport
from .serialize import DeserializerFunc, SerializerFunc, deserialize_report, serialize_report

#: tuple: Verdicts an entry may carry
VERDICTS = ("pass", "fail", "info")


@dataclass
class Entry:
    """One step of a run."""

    step: str
    "What was done, e.g. ``symmetry X`` or ``stage 1``."

    verdict: str = "info"
    "``pass``, ``fail`` or ``info`` for steps that decide nothing."

    inputs: Dict[str, Any] = field(default_factory=dict)
    "The model, names and parameters the step used."

    results: Dict[str, Any] = field(default_factory=dict)
    "Residual maxima, coefficients or any other JSON-ready output."

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}, not {self.verdict!r}")


@dataclass
class Report:
    """The entries of one command, with the settings it ran under."""

    command: str
    settings: Dict[str, Any] = field(default_factory=dict)
    entries: List[Entry] = field(default_factory=list)

    @classmethod
    def start(cls, command: str, settings: Settings) -> "Report":
        """An empty report for ``command``."""
        return cls(command, asdict(settings))

    def add(
        self,
        step: str,
        verdict: Union[str, bool, None] = None,
        inputs: Optional[Dict[str, Any]] = None,
        results: Optional[Dict[str, Any]] = None,
    ) -> Entry:
        """Append an entry; a boolean verdict becomes ``pass`` or ``fail``."""
        if isinstance(verdict, bool):
            verdict = "pass" if verdict else "fail"
        entry = Entry(step, verdict or "info", dict(inputs or {}), dict(results or {}))
        self.entries.append(entry)
        return entry

    @property
    def passed(self) -> bool:
        """True unless some entry failed."""
        return all(entry.verdict != "fail" for entry in self.entries)

    @property
    def verdict(self) -> str:
        """``pass`` or ``fail``."""
        return "pass" if self.passed else "fail"

    def as_dict(self) -> dict:
        """A JSON-ready mapping."""
        return {
            "command": self.command,
            "verdict": self.verdict,
            "settings": dict(self.settings),
            "entries": [asdict(entry) for entry in self.entries],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Report":
        """
        Rebuild a report from :meth:`as_dict` output.

        Raises:
            KeyError: If a required key is missing
            ValueError: If an entry has an unknown verdict
        """
        entries = [
            Entry(item["step"], item["verdict"], dict(item.get("inputs", {})), dict(item.get("results", {})))
            for item in data["entries"]
        ]
        return cls(data["command"], dict(data.get("settings", {})), entries)

    def to_json(self, serializer: Optional[SerializerFunc] = None) -> str:
        """
        The report as JSON text.

        Raises:
            UnserializableReport: If some result is not JSON-ready
        """
        return serialize_report(self.as_dict(), serializer).decode("utf-8")

    @classmethod
    def parse(cls, payload: Union[str, bytes], deserializer: Optional[DeserializerFunc] = None) -> "Report":
        """
        Read a report written by :meth:`to_json`.

        Raises:
            UndeserializableReport: If the payload is not a report
        """
        raw = payload.encode("utf-8") if isinstance(payload, str) else payload
        data = deserialize_report(raw, deserializer)
        try:
            return cls.from_dict(data)
        except (KeyError, TypeError, ValueError) as e:
            raise UndeserializableReport(raw, "Report.from_dict") from e

    def to_text(self) -> str:
        """A human-readable rendering."""
        lines = [f"{self.command}: {self.verdict.upper()}"]
        for entry in self.entries:
            lines.append(f"  [{entry.verdict}] {entry.step}")
            for key, value in entry.inputs.items():
                lines.append(f"      {key}: {_short(value)}")
            for key, value in entry.results.items():
                lines.append(f"      {key} = {_short(value)}")
        return "\n".join(lines) + "\n"

    def render(self, format: str = "text") -> str:
        """Render as ``text`` or ``json``."""
        return self.to_json() + "\n" if format == "json" else self.to_text()


def _short(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value):
        return "; ".join(value)
    return json.dumps(value, sort_keys=True)
