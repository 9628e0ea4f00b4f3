"""SPICE-subset netlist: circuit data model, parser and canonical printer.

Grammar (line oriented, case-insensitive, ``*`` starts a comment line and a
leading ``+`` continues the previous line)::

    R<name> n+ n- <value>
    C<name> n+ n- <value> [IC=<volts>]
    V<name> n+ n- [DC] <value> [AC <mag> [<phase_deg>]] [PWL(t1 v1 t2 v2 ...)]
    I<name> n+ n- [DC] <value> [AC <mag> [<phase_deg>]] [PWL(...)]
    E<name> out+ out- in+ in- <gain>
    M<name> nd ng ns nb <model> W=<m> L=<m> [M=<int>]
    .MODEL <name> NMOS|PMOS (VTO=<v> KP=<a/v2> LAMBDA=<1/v> [CGS=<f>] [CGD=<f>])
    .OP | .DC <src> <start> <stop> <step> | .AC DEC <n> <fstart> <fstop> | .TRAN <tstep> <tstop>
    .END

Nodes ``0`` and ``gnd`` are both ground.  Node names are stored lower-case;
element names keep their spelling but are compared case-insensitively.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

import numpy as np

from .errors import (
    DuplicateName,
    MalformedNumber,
    NetlistSyntaxError,
    NoGroundNode,
    UnknownModel,
)

GROUND = "0"
_GROUND_ALIASES = {"0", "gnd"}

_SUFFIXES = {"f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6, "m": 1e-3, "k": 1e3, "g": 1e9}
_UNITS = {"v", "a", "s", "f", "h", "hz", "ohm", "ohms", "sec", "w"}
_NUMBER_RE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+))([eE][+-]?\d+)?([a-zA-Z]*)$")


def parse_value(token: str) -> float:
    """Convert a SPICE number token such as ``3p``, ``5meg`` or ``2.6V`` to float.

    ``meg`` is matched before ``m`` so ``5meg`` is 5e6 while ``5m`` is 5e-3.
    Unit letters after the suffix (``3pF``, ``10kohm``) are ignored.
    An exponent cannot be combined with a suffix.
    """
    m = _NUMBER_RE.match(token.strip())
    if m is None:
        raise MalformedNumber(f"MalformedNumber: {token!r} is not a number")
    mantissa, exponent, letters = m.groups()
    letters = letters.lower()
    if letters.startswith("meg"):
        scale, rest = 1e6, letters[3:]
    elif letters[:1] in _SUFFIXES:
        scale, rest = _SUFFIXES[letters[0]], letters[1:]
    else:
        scale, rest = 1.0, letters
    if rest and rest not in _UNITS:
        raise MalformedNumber(f"MalformedNumber: unknown suffix in {token!r}")
    if exponent and scale != 1.0:
        raise MalformedNumber(f"MalformedNumber: {token!r} mixes exponent and suffix")
    value = float(mantissa + (exponent or "")) * scale
    if not math.isfinite(value):
        raise MalformedNumber(f"MalformedNumber: {token!r} is not finite")
    return value


def format_value(value: float) -> str:
    """Shortest text that parses back to exactly ``value``."""
    text = repr(float(value))
    if text.endswith(".0"):
        text = text[:-2]
    return text


def _node(name: str) -> str:
    name = name.lower()
    return GROUND if name in _GROUND_ALIASES else name


# --- data model --------------------------------------------------------------

@dataclass(frozen=True)
class ModelCard:
    name: str
    polarity: str  # "N" or "P"
    vto: float
    kp: float
    lam: float = 0.0
    cgs: float = 0.0
    cgd: float = 0.0

    def __post_init__(self):
        if self.polarity not in ("N", "P"):
            raise NetlistSyntaxError(f"model {self.name}: polarity must be NMOS or PMOS")
        for key in ("vto", "kp", "lam", "cgs", "cgd"):
            if not math.isfinite(getattr(self, key)):
                raise NetlistSyntaxError(f"model {self.name}: {key.upper()} must be finite")
        if self.kp <= 0:
            raise NetlistSyntaxError(f"model {self.name}: KP must be > 0")
        if self.lam < 0 or self.cgs < 0 or self.cgd < 0:
            raise NetlistSyntaxError(f"model {self.name}: LAMBDA, CGS and CGD must be >= 0")


Pwl = tuple  # tuple of (time, value) pairs


def pwl_value(points: Pwl, t: float) -> float:
    """Piecewise-linear waveform value; held constant outside the breakpoints."""
    times = [p[0] for p in points]
    values = [p[1] for p in points]
    return float(np.interp(t, times, values))


@dataclass(frozen=True)
class Resistor:
    name: str
    n1: str
    n2: str
    value: float
    line: int | None = field(default=None, compare=False)
    column: int | None = field(default=None, compare=False)

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.n1, self.n2)


@dataclass(frozen=True)
class Capacitor:
    name: str
    n1: str
    n2: str
    value: float
    ic: float | None = None
    line: int | None = field(default=None, compare=False)
    column: int | None = field(default=None, compare=False)

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.n1, self.n2)


@dataclass(frozen=True)
class VoltageSource:
    name: str
    n1: str
    n2: str
    dc: float = 0.0
    ac_mag: float | None = None
    ac_phase: float = 0.0
    pwl: Pwl | None = None
    line: int | None = field(default=None, compare=False)
    column: int | None = field(default=None, compare=False)

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.n1, self.n2)

    def value_at(self, t: float | None) -> float:
        if t is None or self.pwl is None:
            return self.dc
        return pwl_value(self.pwl, t)


@dataclass(frozen=True)
class CurrentSource(VoltageSource):
    """Current flows from n1 through the source to n2 (SPICE convention)."""


@dataclass(frozen=True)
class Vcvs:
    name: str
    out_p: str
    out_n: str
    in_p: str
    in_n: str
    gain: float
    line: int | None = field(default=None, compare=False)
    column: int | None = field(default=None, compare=False)

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.out_p, self.out_n, self.in_p, self.in_n)


@dataclass(frozen=True)
class Mosfet:
    name: str
    d: str
    g: str
    s: str
    b: str
    model: str
    w: float
    l: float  # noqa: E741
    m: int = 1
    line: int | None = field(default=None, compare=False)
    column: int | None = field(default=None, compare=False)

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.d, self.g, self.s, self.b)


Element = Union[Resistor, Capacitor, VoltageSource, CurrentSource, Vcvs, Mosfet]


@dataclass(frozen=True)
class Op:
    pass


@dataclass(frozen=True)
class DcSweep:
    source: str
    start: float
    stop: float
    step: float

    def __post_init__(self):
        if self.start == self.stop:
            raise NetlistSyntaxError(".DC start and stop must differ")
        if self.step == 0 or math.copysign(1.0, self.step) != math.copysign(1.0, self.stop - self.start):
            raise NetlistSyntaxError(".DC step sign must agree with stop - start")

    def values(self) -> np.ndarray:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9))
        return self.start + self.step * np.arange(n + 1)


@dataclass(frozen=True)
class Ac:
    points: int
    fstart: float
    fstop: float

    def __post_init__(self):
        if int(self.points) != self.points or self.points < 1:
            raise NetlistSyntaxError(".AC points per decade must be an integer >= 1")
        if not (0 < self.fstart < self.fstop):
            raise NetlistSyntaxError(".AC requires 0 < fstart < fstop")

    def frequencies(self) -> np.ndarray:
        decades = math.log10(self.fstop / self.fstart)
        n = int(math.floor(decades * self.points + 1e-9))
        f = self.fstart * 10.0 ** (np.arange(n + 1) / self.points)
        if f[-1] < self.fstop * (1 - 1e-12):
            f = np.append(f, self.fstop)
        return f


@dataclass(frozen=True)
class Tran:
    tstep: float
    tstop: float

    def __post_init__(self):
        if not (0 < self.tstep < self.tstop):
            raise NetlistSyntaxError(".TRAN requires 0 < tstep < tstop")


AnalysisDirective = Union[Op, DcSweep, Ac, Tran]


@dataclass(frozen=True)
class Circuit:
    """Validated, immutable circuit.  Construction fails on any invalid input."""

    elements: tuple[Element, ...]
    models: Mapping[str, ModelCard] = field(default_factory=dict, hash=False)
    analyses: tuple[AnalysisDirective, ...] = ()
    title: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "analyses", tuple(self.analyses))
        object.__setattr__(self, "models", {k.lower(): v for k, v in dict(self.models).items()})
        _validate(self)

    @property
    def nodes(self) -> frozenset[str]:
        return frozenset(n for e in self.elements for n in e.nodes)

    @property
    def node_order(self) -> tuple[str, ...]:
        """Non-ground nodes in order of first appearance."""
        seen: dict[str, None] = {}
        for e in self.elements:
            for n in e.nodes:
                if n != GROUND:
                    seen.setdefault(n, None)
        return tuple(seen)

    def element(self, name: str) -> Element:
        key = name.lower()
        for e in self.elements:
            if e.name.lower() == key:
                return e
        raise KeyError(name)

    def replace_element(self, name: str, **changes) -> "Circuit":
        key = name.lower()
        if not any(e.name.lower() == key for e in self.elements):
            raise KeyError(name)
        elements = tuple(dataclasses.replace(e, **changes) if e.name.lower() == key else e
                         for e in self.elements)
        return dataclasses.replace(self, elements=elements)

    def with_elements(self, elements: Iterable[Element]) -> "Circuit":
        return dataclasses.replace(self, elements=tuple(elements))

    def with_analyses(self, analyses: Iterable[AnalysisDirective]) -> "Circuit":
        return dataclasses.replace(self, analyses=tuple(analyses))

    @property
    def mosfets(self) -> tuple[Mosfet, ...]:
        return tuple(e for e in self.elements if isinstance(e, Mosfet))


def _check_positive(e, attr: str) -> None:
    v = getattr(e, attr)
    if not (math.isfinite(v) and v > 0):
        raise NetlistSyntaxError(f"{e.name}: {attr.upper()} must be finite and > 0", e.line)


def _validate(c: Circuit) -> None:
    names: set[str] = set()
    for e in c.elements:
        key = e.name.lower()
        if key in names:
            raise DuplicateName(e.name, e.line)
        names.add(key)
        if isinstance(e, (Resistor, Capacitor)):
            _check_positive(e, "value")
            if isinstance(e, Capacitor) and e.ic is not None and not math.isfinite(e.ic):
                raise NetlistSyntaxError(f"{e.name}: IC must be finite", e.line)
        elif isinstance(e, VoltageSource):
            vals = [e.dc, e.ac_phase] + ([e.ac_mag] if e.ac_mag is not None else [])
            if e.pwl is not None:
                if len(e.pwl) < 1:
                    raise NetlistSyntaxError(f"{e.name}: empty PWL", e.line)
                times = [p[0] for p in e.pwl]
                vals += times + [p[1] for p in e.pwl]
                if any(b <= a for a, b in zip(times, times[1:])):
                    raise NetlistSyntaxError(f"{e.name}: PWL times must be strictly increasing", e.line)
            if not all(math.isfinite(v) for v in vals):
                raise NetlistSyntaxError(f"{e.name}: source values must be finite", e.line)
        elif isinstance(e, Vcvs):
            if not math.isfinite(e.gain):
                raise NetlistSyntaxError(f"{e.name}: gain must be finite", e.line)
        elif isinstance(e, Mosfet):
            _check_positive(e, "w")
            _check_positive(e, "l")
            if int(e.m) != e.m or e.m < 1:
                raise NetlistSyntaxError(f"{e.name}: multiplier M must be an integer >= 1", e.line)
            if e.model.lower() not in c.models:
                raise UnknownModel(e.name, e.model, e.line)
        else:
            raise NetlistSyntaxError(f"unsupported element {e!r}")
    if c.elements and GROUND not in c.nodes:
        raise NoGroundNode()
    if not c.elements:
        raise NoGroundNode()
    for a in c.analyses:
        if isinstance(a, DcSweep):
            try:
                src = c.element(a.source)
            except KeyError:
                raise NetlistSyntaxError(f".DC source {a.source!r} does not exist") from None
            if not isinstance(src, VoltageSource):
                raise NetlistSyntaxError(f".DC source {a.source!r} is not an independent source")


# --- parser ------------------------------------------------------------------

def _logical_lines(text: str):
    """Yield (line_number, column, text) with comments dropped and continuations joined."""
    out: list[list] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("*"):
            continue
        if stripped.startswith("+"):
            if not out:
                raise NetlistSyntaxError("continuation line with nothing to continue", number)
            out[-1][2] += " " + stripped[1:]
            continue
        column = len(raw) - len(raw.lstrip()) + 1
        out.append([number, column, stripped])
    for number, column, line in out:
        yield number, column, line


def _tokens(line: str) -> list[str]:
    line = re.sub(r"\s*=\s*", "=", line)
    line = line.replace("(", " ( ").replace(")", " ) ")
    return line.split()


def _kv(tokens: list[str], allowed: set[str], line: int) -> dict[str, float]:
    out: dict[str, float] = {}
    for tok in tokens:
        if tok in ("(", ")"):
            continue
        if "=" not in tok:
            raise NetlistSyntaxError(f"expected KEY=VALUE, got {tok!r}", line)
        key, _, val = tok.partition("=")
        key = key.lower()
        if key not in allowed:
            raise NetlistSyntaxError(f"unknown parameter {key.upper()}", line)
        out[key] = _num(val, line)
    return out


def _num(token: str, line: int) -> float:
    try:
        return parse_value(token)
    except MalformedNumber as exc:
        raise MalformedNumber(str(exc), line) from None


def _is_number(token: str) -> bool:
    try:
        parse_value(token)
    except MalformedNumber:
        return False
    return True


def _parse_source(cls, name, toks, line, column):
    if len(toks) < 2:
        raise NetlistSyntaxError(f"{name}: expected two nodes", line)
    n1, n2 = _node(toks[0]), _node(toks[1])
    dc, ac_mag, ac_phase, pwl = None, None, 0.0, None
    i, rest = 0, toks[2:]
    while i < len(rest):
        word = rest[i].lower()
        if word == "dc":
            if i + 1 >= len(rest):
                raise NetlistSyntaxError(f"{name}: DC needs a value", line)
            dc = _num(rest[i + 1], line)
            i += 2
        elif word == "ac":
            if i + 1 >= len(rest):
                raise NetlistSyntaxError(f"{name}: AC needs a magnitude", line)
            ac_mag = _num(rest[i + 1], line)
            i += 2
            if i < len(rest) and _is_number(rest[i]):
                ac_phase = _num(rest[i], line)
                i += 1
        elif word == "pwl":
            if i + 1 >= len(rest) or rest[i + 1] != "(":
                raise NetlistSyntaxError(f"{name}: PWL needs a parenthesised list", line)
            try:
                close = rest.index(")", i + 2)
            except ValueError:
                raise NetlistSyntaxError(f"{name}: unterminated PWL", line) from None
            vals = [_num(t, line) for t in rest[i + 2:close]]
            if not vals or len(vals) % 2:
                raise NetlistSyntaxError(f"{name}: PWL needs time/value pairs", line)
            pwl = tuple(zip(vals[0::2], vals[1::2]))
            i = close + 1
        elif dc is None and i == 0 and _is_number(rest[i]):
            dc = _num(rest[i], line)
            i += 1
        else:
            raise NetlistSyntaxError(f"{name}: unexpected token {rest[i]!r}", line)
    return cls(name, n1, n2, dc if dc is not None else 0.0, ac_mag, ac_phase, pwl,
               line=line, column=column)


def _parse_element(toks: list[str], line: int, column: int) -> Element:
    name = toks[0]
    kind = name[0].upper()
    args = toks[1:]
    if kind == "R":
        if len(args) != 3:
            raise NetlistSyntaxError(f"{name}: expected 'R n+ n- value'", line)
        return Resistor(name, _node(args[0]), _node(args[1]), _num(args[2], line),
                        line=line, column=column)
    if kind == "C":
        if len(args) not in (3, 4):
            raise NetlistSyntaxError(f"{name}: expected 'C n+ n- value [IC=v]'", line)
        ic = _kv(args[3:], {"ic"}, line).get("ic")
        return Capacitor(name, _node(args[0]), _node(args[1]), _num(args[2], line), ic,
                         line=line, column=column)
    if kind == "V":
        return _parse_source(VoltageSource, name, args, line, column)
    if kind == "I":
        return _parse_source(CurrentSource, name, args, line, column)
    if kind == "E":
        if len(args) != 5:
            raise NetlistSyntaxError(f"{name}: expected 'E out+ out- in+ in- gain'", line)
        return Vcvs(name, *(_node(a) for a in args[:4]), _num(args[4], line),
                    line=line, column=column)
    if kind == "M":
        if len(args) < 5:
            raise NetlistSyntaxError(f"{name}: expected 'M nd ng ns nb model W= L= [M=]'", line)
        params = _kv(args[5:], {"w", "l", "m"}, line)
        if "w" not in params or "l" not in params:
            raise NetlistSyntaxError(f"{name}: W and L are required", line)
        mult = params.get("m", 1.0)
        if mult != int(mult) or mult < 1:
            raise NetlistSyntaxError(f"{name}: multiplier M must be an integer >= 1", line)
        return Mosfet(name, *(_node(a) for a in args[:4]), args[4].lower(),
                      params["w"], params["l"], int(mult), line=line, column=column)
    raise NetlistSyntaxError(f"unsupported element type {kind!r} ({name})", line)


def _parse_model(toks: list[str], line: int) -> ModelCard:
    if len(toks) < 3:
        raise NetlistSyntaxError(".MODEL needs a name and NMOS|PMOS", line)
    kind = toks[2].lower()
    if kind not in ("nmos", "pmos"):
        raise NetlistSyntaxError(f".MODEL type must be NMOS or PMOS, got {toks[2]!r}", line)
    params = _kv(toks[3:], {"vto", "kp", "lambda", "cgs", "cgd"}, line)
    for required in ("vto", "kp", "lambda"):
        if required not in params:
            raise NetlistSyntaxError(f".MODEL {toks[1]}: {required.upper()} is required", line)
    try:
        return ModelCard(toks[1].lower(), kind[0].upper(), params["vto"], params["kp"],
                         params["lambda"], params.get("cgs", 0.0), params.get("cgd", 0.0))
    except NetlistSyntaxError as exc:
        raise NetlistSyntaxError(str(exc), line) from None


def _parse_analysis(toks: list[str], line: int) -> AnalysisDirective:
    word = toks[0].lower()
    try:
        if word == ".op" and len(toks) == 1:
            return Op()
        if word == ".dc" and len(toks) == 5:
            return DcSweep(toks[1], *(_num(t, line) for t in toks[2:]))
        if word == ".ac" and len(toks) == 5 and toks[1].lower() == "dec":
            n = _num(toks[2], line)
            if n != int(n):
                raise NetlistSyntaxError(".AC points per decade must be an integer")
            return Ac(int(n), _num(toks[3], line), _num(toks[4], line))
        if word == ".tran" and len(toks) == 3:
            return Tran(_num(toks[1], line), _num(toks[2], line))
    except NetlistSyntaxError as exc:
        if exc.line is None:
            raise NetlistSyntaxError(str(exc), line) from None
        raise
    raise NetlistSyntaxError(f"malformed {toks[0].upper()} directive", line)


def parse_netlist(text: str) -> Circuit:
    """Parse netlist text into a validated :class:`Circuit`."""
    elements: list[Element] = []
    models: dict[str, ModelCard] = {}
    analyses: list[AnalysisDirective] = []
    title = None
    for line, column, content in _logical_lines(text):
        if content.lower().startswith(".title"):
            title = content[6:].strip() or None
            continue
        toks = _tokens(content)
        head = toks[0].lower()
        if head == ".end":
            break
        if head == ".model":
            card = _parse_model(toks, line)
            if card.name in models:
                raise DuplicateName(card.name, line)
            models[card.name] = card
        elif head in (".op", ".dc", ".ac", ".tran"):
            analyses.append(_parse_analysis(toks, line))
        elif head.startswith("."):
            raise NetlistSyntaxError(f"unsupported directive {toks[0]!r}", line)
        else:
            elements.append(_parse_element(toks, line, column))
    return Circuit(tuple(elements), models, tuple(analyses), title)


def read_netlist(path) -> Circuit:
    with open(path, encoding="utf-8") as fh:
        return parse_netlist(fh.read())


# --- printer -----------------------------------------------------------------

def _format_source(e: VoltageSource) -> str:
    parts = [e.name, e.n1, e.n2, "DC", format_value(e.dc)]
    if e.ac_mag is not None:
        parts += ["AC", format_value(e.ac_mag), format_value(e.ac_phase)]
    if e.pwl is not None:
        flat = " ".join(format_value(v) for pair in e.pwl for v in pair)
        parts.append(f"PWL({flat})")
    return " ".join(parts)


def format_element(e: Element) -> str:
    if isinstance(e, Resistor):
        return f"{e.name} {e.n1} {e.n2} {format_value(e.value)}"
    if isinstance(e, Capacitor):
        ic = f" IC={format_value(e.ic)}" if e.ic is not None else ""
        return f"{e.name} {e.n1} {e.n2} {format_value(e.value)}{ic}"
    if isinstance(e, VoltageSource):
        return _format_source(e)
    if isinstance(e, Vcvs):
        return f"{e.name} {e.out_p} {e.out_n} {e.in_p} {e.in_n} {format_value(e.gain)}"
    if isinstance(e, Mosfet):
        mult = f" M={e.m}" if e.m != 1 else ""
        return (f"{e.name} {e.d} {e.g} {e.s} {e.b} {e.model} "
                f"W={format_value(e.w)} L={format_value(e.l)}{mult}")
    raise TypeError(f"cannot format {e!r}")


def _format_analysis(a: AnalysisDirective) -> str:
    if isinstance(a, Op):
        return ".OP"
    if isinstance(a, DcSweep):
        return f".DC {a.source} {format_value(a.start)} {format_value(a.stop)} {format_value(a.step)}"
    if isinstance(a, Ac):
        return f".AC DEC {a.points} {format_value(a.fstart)} {format_value(a.fstop)}"
    return f".TRAN {format_value(a.tstep)} {format_value(a.tstop)}"


def print_netlist(circuit: Circuit) -> str:
    """Canonical netlist text; ``parse_netlist(print_netlist(c)) == c``."""
    lines = []
    if circuit.title:
        lines.append(f".TITLE {circuit.title}")
    for card in circuit.models.values():
        extra = "".join(f" {k}={format_value(getattr(card, k.lower()))}"
                        for k in ("CGS", "CGD") if getattr(card, k.lower()))
        lines.append(f".MODEL {card.name} {card.polarity}MOS (VTO={format_value(card.vto)} "
                     f"KP={format_value(card.kp)} LAMBDA={format_value(card.lam)}{extra})")
    lines += [format_element(e) for e in circuit.elements]
    lines += [_format_analysis(a) for a in circuit.analyses]
    lines.append(".END")
    return "\n".join(lines) + "\n"
