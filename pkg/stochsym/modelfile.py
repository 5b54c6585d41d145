"""
Reading and writing model files.

A model file is line oriented. ``#`` starts a comment. Sections open with a bracketed header and
hold ``key = value`` entries::

    [space]
    n = 1
    m = 1
    type = ito             # or "generalized" when coefficients may use w1..wm

    [domain]
    x1 = 0.1, 2            # closed sampling interval; t and w<k> may be declared too

    [drift]
    f1 = exp(-x1) - 0.5*exp(-2*x1)

    [diffusion]
    s11 = exp(-x1)         # missing entries are zero

    [symmetry X]
    phi1 = exp(-x1)

    [map Phi]
    Phi1 = exp(x1)
    inverse                # optional; the following F<i> entries give the inverse
    F1 = log(x1)

    [beta]                 # optional free parameters of the integration term
    c = 0
    b = -t^3/6

Further optional sections: ``[separable]`` with ``beta``, ``f`` and ``sigma`` in place of drift
and diffusion; ``[basis]`` with entries ``b<k> = <expr>, <expr>, ...`` (one expression per state
variable) for the ansatz search; ``[kernel <name>]`` with one ``psi`` entry.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .config import Settings, resolve
from .exceptions import ModelFileError, ParseError, StochSymError
from .expr import ZERO, Expression, VariableSpace, evaluate_array, to_text
from .model import Domain, GeneralizedSystem, ItoSystem, VectorField, check_evaluable, make_system
from .parsing import parse
from .reduce import separable_system
from .sampling import sample
from .transform import ChangeOfVariables, check_round_trip
from .validation import validate_float, validate_int

logger = logging.getLogger(__name__)

HEADER_RE = re.compile(r"^\[\s*(?P<kind>[a-z]+)(?:\s+(?P<name>[A-Za-z_][A-Za-z0-9_]*))?\s*\]$")
ENTRY_RE = re.compile(r"^(?P<key>[A-Za-z_][A-Za-z0-9_]*)\s*=\s*(?P<value>.+)$")

#: tuple: Section kinds that take a name
NAMED_SECTIONS = ("symmetry", "map", "kernel")

#: tuple: Section kinds that appear at most once and take no name
SINGLE_SECTIONS = ("space", "domain", "drift", "diffusion", "beta", "separable", "basis")

#: str: Short grammar reminder printed with usage errors
GRAMMAR_EXCERPT = """\
model file sections:
  [space] n=<int> m=<int> [type=ito|generalized]
  [domain] x1=<lo>,<hi> ...
  [drift] f1=<expr> ...
  [diffusion] s11=<expr> ...
  [symmetry <name>] phi1=<expr> ...
  [map <name>] Phi1=<expr> ... inverse F1=<expr> ...
  [beta] c=<number> b=<expr of t>
expressions: + - * / ^, exp log sin cos sqrt, variables x1..xn t w1..wm"""


@dataclass
class _Section:
    kind: str
    name: Optional[str]
    line: int
    entries: List[Tuple[int, str, str]] = field(default_factory=list)
    inverse_from: Optional[int] = None


@dataclass(frozen=True)
class ModelFile:
    """A loaded model: the system with its named symmetries, maps and auxiliary data."""

    system: GeneralizedSystem
    symmetries: Dict[str, VectorField] = field(default_factory=dict)
    maps: Dict[str, ChangeOfVariables] = field(default_factory=dict)

    beta_c: float = 0.0
    "Free constant of the integration term."

    beta_b: Expression = ZERO
    "Free function of ``t`` of the integration term."

    basis: Tuple[Tuple[Expression, ...], ...] = ()
    "Ansatz elements, one expression per state variable."

    kernels: Dict[str, Expression] = field(default_factory=dict)
    "Named functions tested for membership in the kernels of ``L`` and ``M``."

    separable: Optional[Tuple[Expression, Expression, Expression]] = None
    "``(beta, f, sigma)`` when the equation was declared in separable form."

    @property
    def space(self) -> VariableSpace:
        """The variable space of the system."""
        return self.system.space

    def symmetry(self, name: str) -> VectorField:
        """
        A named symmetry.

        Raises:
            ModelFileError: If there is no such symmetry
        """
        try:
            return self.symmetries[name]
        except KeyError:
            raise ModelFileError("symmetry", 0, f"no symmetry named {name!r}") from None

    def map(self, name: str) -> ChangeOfVariables:
        """
        A named map.

        Raises:
            ModelFileError: If there is no such map
        """
        try:
            return self.maps[name]
        except KeyError:
            raise ModelFileError("map", 0, f"no map named {name!r}") from None

    def full_rank(self, settings: Optional[Settings] = None) -> bool:
        """Whether a square diffusion matrix has ``|det| > jacobian_min_det`` at every sample point."""
        settings = resolve(settings)
        n, m = self.system.n, self.system.m
        if n != m:
            return False
        entries = [s for row in self.system.diffusion for s in row]
        points = sample(self.system.box(seed=settings.seed), entries, settings)
        size = settings.points
        matrix = np.empty((size, n, m))
        for i, row in enumerate(self.system.diffusion):
            for k, s in enumerate(row):
                matrix[:, i, k] = evaluate_array(s, points, size)
        return bool(np.all(np.abs(np.linalg.det(matrix)) > settings.jacobian_min_det))


def _split(text: str) -> List[_Section]:
    sections: List[_Section] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        header = HEADER_RE.match(line)
        if header:
            kind, name = header.group("kind"), header.group("name")
            if kind in NAMED_SECTIONS and name is None:
                raise ModelFileError(kind, number, "this section needs a name")
            if kind in SINGLE_SECTIONS and name is not None:
                raise ModelFileError(kind, number, "this section takes no name")
            if kind not in NAMED_SECTIONS + SINGLE_SECTIONS:
                raise ModelFileError(kind, number, "unknown section")
            if any(s.kind == kind and s.name == name for s in sections):
                raise ModelFileError(kind, number, "duplicate section")
            sections.append(_Section(kind, name, number))
            continue
        if not sections:
            raise ModelFileError(None, number, "entry before the first section header")
        current = sections[-1]
        if line == "inverse" and current.kind == "map":
            if current.inverse_from is not None:
                raise ModelFileError("map", number, "duplicate inverse marker")
            current.inverse_from = len(current.entries)
            continue
        entry = ENTRY_RE.match(line)
        if not entry:
            raise ModelFileError(current.kind, number, f"expected 'key = value', got {line!r}")
        current.entries.append((number, entry.group("key"), entry.group("value").strip()))
    return sections


def _expression(text: str, space: VariableSpace, section: _Section, number: int) -> Expression:
    try:
        return parse(text, space)
    except ParseError as e:
        raise ModelFileError(section.kind, number, str(e)) from e


def _number(text: str, section: _Section, number: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ModelFileError(section.kind, number, f"{text!r} is not a number") from None
    if not validate_float(value):
        raise ModelFileError(section.kind, number, f"{text!r} is not a finite number")
    return value


def _entries(section: _Section, allowed: List[str]) -> Dict[str, Tuple[int, str]]:
    found: Dict[str, Tuple[int, str]] = {}
    for number, key, value in section.entries:
        if key not in allowed:
            raise ModelFileError(section.kind, number, f"unexpected key {key!r}; expected one of {allowed}")
        if key in found:
            raise ModelFileError(section.kind, number, f"duplicate key {key!r}")
        found[key] = (number, value)
    return found


def _space(section: _Section) -> Tuple[VariableSpace, str]:
    entries = _entries(section, ["n", "m", "type"])
    values = {}
    for key in ("n", "m"):
        if key not in entries:
            raise ModelFileError("space", section.line, f"missing {key}")
        number, text = entries[key]
        if not text.isdigit() or not validate_int(int(text), min_value=1 if key == "m" else 0, max_value=64):
            raise ModelFileError("space", number, f"{key} must be a small non-negative integer, got {text!r}")
        values[key] = int(text)
    kind = entries.get("type", (section.line, "ito"))[1]
    if kind not in ("ito", "generalized"):
        raise ModelFileError("space", entries["type"][0], f"type must be 'ito' or 'generalized', got {kind!r}")
    return VariableSpace(values["n"], values["m"]), kind


def _domain(section: Optional[_Section], space: VariableSpace) -> Domain:
    if section is None:
        return Domain()
    intervals = {}
    for number, key, value in section.entries:
        if key not in space.names:
            raise ModelFileError("domain", number, f"unknown variable {key!r}")
        parts = value.split(",")
        if len(parts) != 2:
            raise ModelFileError("domain", number, "expected '<lo>, <hi>'")
        lower, upper = (_number(part.strip(), section, number) for part in parts)
        if not lower < upper:
            raise ModelFileError("domain", number, f"empty interval [{lower}, {upper}]")
        intervals[key] = (lower, upper)
    return Domain.of(intervals)


def _vector(section: _Section, prefix: str, space: VariableSpace, required: bool) -> List[Expression]:
    keys = [f"{prefix}{i}" for i in range(1, space.n + 1)]
    entries = _entries(section, keys)
    if required:
        missing = [key for key in keys if key not in entries]
        if missing:
            raise ModelFileError(section.kind, section.line, f"missing {', '.join(missing)}")
    return [_expression(entries[key][1], space, section, entries[key][0]) if key in entries else ZERO for key in keys]


def _system(sections: Dict[str, _Section], space: VariableSpace, kind: str, domain: Domain):
    separable = sections.get("separable")
    if separable is not None:
        if "drift" in sections or "diffusion" in sections:
            raise ModelFileError("separable", separable.line, "use either [separable] or [drift]/[diffusion]")
        if space.n != 1 or space.m != 1:
            raise ModelFileError("separable", separable.line, "only scalar equations can be separable")
        entries = _entries(separable, ["beta", "f", "sigma"])
        missing = [key for key in ("beta", "f", "sigma") if key not in entries]
        if missing:
            raise ModelFileError("separable", separable.line, f"missing {', '.join(missing)}")
        beta, f, sigma = (_expression(entries[key][1], space, separable, entries[key][0]) for key in ("beta", "f", "sigma"))
        return separable_system(space, beta, f, sigma, domain), (beta, f, sigma)
    if "drift" not in sections:
        raise ModelFileError("drift", 0, "missing [drift] section")
    drift = _vector(sections["drift"], "f", space, required=False)
    diffusion = [[ZERO] * space.m for _ in range(space.n)]
    if "diffusion" in sections:
        section = sections["diffusion"]
        keys = [f"s{i}{k}" for i in range(1, space.n + 1) for k in range(1, space.m + 1)]
        for key, (number, text) in _entries(section, keys).items():
            i, k = keys.index(key) // space.m, keys.index(key) % space.m
            diffusion[i][k] = _expression(text, space, section, number)
    if kind == "ito":
        return ItoSystem(space, drift, diffusion, domain), None
    return make_system(space, drift, diffusion, domain), None


def _map(section: _Section, space: VariableSpace, domain: Domain) -> ChangeOfVariables:
    split = len(section.entries) if section.inverse_from is None else section.inverse_from
    forward_section = _Section(section.kind, section.name, section.line, section.entries[:split])
    forward = _vector(forward_section, "Phi", space, required=True)
    inverse = None
    if section.inverse_from is not None:
        inverse_section = _Section(section.kind, section.name, section.line, section.entries[split:])
        inverse = _vector(inverse_section, "F", space, required=True)
    return ChangeOfVariables(space, forward, inverse, domain=domain, name=section.name or "map")


def _basis(section: _Section, space: VariableSpace) -> Tuple[Tuple[Expression, ...], ...]:
    elements = []
    for number, key, value in section.entries:
        if not re.fullmatch(r"b[1-9][0-9]*", key):
            raise ModelFileError("basis", number, f"basis keys are b1, b2, ...; got {key!r}")
        parts = [part.strip() for part in value.split(",")]
        if len(parts) != space.n:
            raise ModelFileError("basis", number, f"expected {space.n} components, got {len(parts)}")
        elements.append(tuple(_expression(part, space, section, number) for part in parts))
    return tuple(elements)


def loads_basis(text: str, space: VariableSpace) -> Tuple[Tuple[Expression, ...], ...]:
    """
    Parse ansatz elements for ``space`` from text.

    The text is either bare ``b<k> = <expr>, ...`` entries or a file with a ``[basis]`` section,
    such as a model file.

    Raises:
        ModelFileError: On syntax errors, or when sections are present but none is ``[basis]``
    """
    lines = [raw.split("#", 1)[0].strip() for raw in text.splitlines()]
    if any(HEADER_RE.match(line) for line in lines):
        sections = [s for s in _split(text) if s.kind == "basis"]
        if not sections:
            raise ModelFileError("basis", 0, "missing [basis] section")
        return _basis(sections[0], space)
    section = _Section("basis", None, 0)
    for number, line in enumerate(lines, start=1):
        if not line:
            continue
        entry = ENTRY_RE.match(line)
        if not entry:
            raise ModelFileError("basis", number, f"expected 'key = value', got {line!r}")
        section.entries.append((number, entry.group("key"), entry.group("value").strip()))
    return _basis(section, space)


def loads_model(text: str, settings: Optional[Settings] = None) -> ModelFile:
    """
    Parse and validate a model from text.

    Every coefficient is evaluated at the sample points of the domain and every map with an
    inverse is round-trip checked.

    Raises:
        ModelFileError: On syntax errors, with section and line
        StochSymError: When a loaded object violates one of its invariants

    Returns:
        The validated model
    """
    settings = resolve(settings)
    sections = _split(text)
    singles = {s.kind: s for s in sections if s.kind in SINGLE_SECTIONS}
    if "space" not in singles:
        raise ModelFileError("space", 0, "missing [space] section")
    space, kind = _space(singles["space"])
    domain = _domain(singles.get("domain"), space)
    system, separable = _system(singles, space, kind, domain)
    check_evaluable(system, settings)

    symmetries = {}
    maps = {}
    kernels = {}
    for section in sections:
        if section.kind == "symmetry":
            coeffs = _vector(section, "phi", space, required=True)
            symmetries[section.name] = VectorField(space, coeffs, section.name)
        elif section.kind == "map":
            cov = _map(section, space, domain)
            if cov.inverse is not None:
                try:
                    check_round_trip(cov, settings)
                except StochSymError as e:
                    raise ModelFileError("map", section.line, f"{section.name}: {e}") from e
            maps[section.name] = cov
        elif section.kind == "kernel":
            entries = _entries(section, ["psi"])
            if "psi" not in entries:
                raise ModelFileError("kernel", section.line, "missing psi")
            number, value = entries["psi"]
            kernels[section.name] = _expression(value, space, section, number)

    beta_c, beta_b = 0.0, ZERO
    if "beta" in singles:
        section = singles["beta"]
        entries = _entries(section, ["c", "b"])
        if "c" in entries:
            beta_c = _number(entries["c"][1], section, entries["c"][0])
        if "b" in entries:
            beta_b = _expression(entries["b"][1], space, section, entries["b"][0])
            if not beta_b.variables <= {"t"}:
                raise ModelFileError("beta", entries["b"][0], "b must be a function of t alone")
    basis = _basis(singles["basis"], space) if "basis" in singles else ()

    model = ModelFile(system, symmetries, maps, beta_c, beta_b, basis, kernels, separable)
    if space.n == space.m and space.n > 1 and not model.full_rank(settings):
        logger.warning("the diffusion matrix is singular somewhere on the domain")
    logger.info("loaded %d-dimensional model with %d symmetries and %d maps", space.n, len(symmetries), len(maps))
    return model


def load_model(path: Union[str, Path], settings: Optional[Settings] = None) -> ModelFile:
    """
    Read and validate a model file.

    Raises:
        OSError: If the file cannot be read
        ModelFileError: On syntax errors
    """
    return loads_model(Path(path).read_text(encoding="utf-8"), settings)


def _interval(lower: float, upper: float) -> str:
    return f"{lower!r}, {upper!r}"


def dump_model(model: ModelFile) -> str:
    """
    Render a model in the model-file format.

    Numbers print with full precision, so loading the output gives value-equal objects.
    """
    system = model.system
    space = system.space
    kind = "ito" if isinstance(system, ItoSystem) else "generalized"
    lines = ["[space]", f"n = {space.n}", f"m = {space.m}", f"type = {kind}", ""]
    if system.domain.intervals:
        lines.append("[domain]")
        lines.extend(f"{name} = {_interval(*interval)}" for name, interval in system.domain.intervals)
        lines.append("")
    if model.separable is not None:
        beta, f, sigma = model.separable
        lines.extend(["[separable]", f"beta = {to_text(beta)}", f"f = {to_text(f)}", f"sigma = {to_text(sigma)}", ""])
    else:
        lines.append("[drift]")
        lines.extend(f"f{i} = {to_text(f)}" for i, f in enumerate(system.drift, start=1))
        lines.extend(["", "[diffusion]"])
        for i, row in enumerate(system.diffusion, start=1):
            lines.extend(f"s{i}{k} = {to_text(s)}" for k, s in enumerate(row, start=1) if s != ZERO)
        lines.append("")
    for name, X in model.symmetries.items():
        lines.append(f"[symmetry {name}]")
        lines.extend(f"phi{i} = {to_text(phi)}" for i, phi in enumerate(X.coeffs, start=1))
        lines.append("")
    for name, cov in model.maps.items():
        lines.append(f"[map {name}]")
        lines.extend(f"Phi{i} = {to_text(phi)}" for i, phi in enumerate(cov.forward, start=1))
        if cov.inverse is not None:
            lines.append("inverse")
            lines.extend(f"F{i} = {to_text(F)}" for i, F in enumerate(cov.inverse, start=1))
        lines.append("")
    if model.beta_c != 0.0 or model.beta_b != ZERO:
        lines.extend(["[beta]", f"c = {model.beta_c!r}", f"b = {to_text(model.beta_b)}", ""])
    if model.basis:
        lines.append("[basis]")
        lines.extend(
            f"b{k} = " + ", ".join(to_text(e) for e in element) for k, element in enumerate(model.basis, start=1)
        )
        lines.append("")
    for name, psi in model.kernels.items():
        lines.extend([f"[kernel {name}]", f"psi = {to_text(psi)}", ""])
    return "\n".join(lines)
