"""Element stamps for modified nodal analysis and the Level-1 MOSFET model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from . import _kernels
from .errors import UnsupportedElement
from .netlist import (
    GROUND,
    Capacitor,
    Circuit,
    CurrentSource,
    Element,
    ModelCard,
    Mosfet,
    Resistor,
    Vcvs,
    VoltageSource,
)

GMIN = 1e-12


class Region(str, Enum):
    CUTOFF = "cutoff"
    TRIODE = "triode"
    SATURATION = "saturation"


_REGIONS = {_kernels.CUTOFF: Region.CUTOFF, _kernels.TRIODE: Region.TRIODE,
            _kernels.SATURATION: Region.SATURATION}


@dataclass(frozen=True)
class MosfetEval:
    """Large- and small-signal state of one MOSFET at a bias point.

    All quantities are polarity-normalised (a PMOS looks like an NMOS) and
    refer to the effective orientation: when ``reversed`` is set the physical
    source acts as the drain.  ``vgs``/``vds`` are the normalised controlling
    voltages the linearisation was taken at.
    """

    region: Region
    id: float
    gm: float
    gds: float
    ieq: float
    vgs: float
    vds: float
    reversed: bool = False
    polarity: int = 1


def device_beta(model: ModelCard, w: float, l: float, m: int = 1) -> float:
    return model.kp * (w / l) * m


def normalized_threshold(model: ModelCard) -> float:
    return model.vto if model.polarity == "N" else -model.vto


def mosfet_eval(model: ModelCard, vgs: float, vds: float, w: float, l: float, m: int = 1,
                gmin: float = GMIN) -> MosfetEval:
    """Square-law evaluation at terminal voltages ``vgs``, ``vds`` (V_G-V_S, V_D-V_S).

    PMOS inputs are sign-flipped so one set of equations serves both
    polarities; a negative normalised ``vds`` swaps drain and source.
    """
    pol = 1 if model.polarity == "N" else -1
    ngs, nds = pol * vgs, pol * vds
    rev = nds < 0
    if rev:
        ngs, nds = ngs - nds, -nds
    region, ids, gm, gds = _kernels.square_law(ngs, nds, normalized_threshold(model),
                                               device_beta(model, w, l, m), model.lam, gmin)
    return MosfetEval(_REGIONS[int(region)], ids, gm, gds, ids - gm * ngs - gds * nds,
                      ngs, nds, bool(rev), pol)


# --- stamps ------------------------------------------------------------------

@dataclass
class StampSet:
    """Additive contributions to an MNA system; index -1 (ground) is dropped."""

    matrix: list[tuple[int, int, complex | float]] = field(default_factory=list)
    rhs: list[tuple[int, complex | float]] = field(default_factory=list)

    def add(self, row: int, col: int, value) -> None:
        if row >= 0 and col >= 0:
            self.matrix.append((row, col, value))

    def add_rhs(self, row: int, value) -> None:
        if row >= 0:
            self.rhs.append((row, value))

    def conductance(self, a: int, b: int, g) -> None:
        self.add(a, a, g)
        self.add(b, b, g)
        self.add(a, b, -g)
        self.add(b, a, -g)

    def current(self, a: int, b: int, i) -> None:
        """Independent current ``i`` flowing out of node a, into node b."""
        self.add_rhs(a, -i)
        self.add_rhs(b, i)

    def extend(self, other: "StampSet") -> None:
        self.matrix.extend(other.matrix)
        self.rhs.extend(other.rhs)


class SystemIndex:
    """Bijection between circuit unknowns and system rows.

    Rows ``0..n_nodes-1`` are the non-ground node voltages in first-appearance
    order, followed by one branch current per voltage source and VCVS.
    """

    def __init__(self, circuit: Circuit, extra_branches: tuple[str, ...] = ()):
        self.node_names = circuit.node_order
        self.nodes = {n: i for i, n in enumerate(self.node_names)}
        branch_names = [e.name for e in circuit.elements
                        if isinstance(e, (Vcvs, VoltageSource)) and not isinstance(e, CurrentSource)]
        branch_names += list(extra_branches)
        base = len(self.node_names)
        self.branch_names = tuple(branch_names)
        self.branches = {n.lower(): base + i for i, n in enumerate(branch_names)}
        self.size = base + len(branch_names)

    @property
    def n_nodes(self) -> int:
        return len(self.node_names)

    def node(self, name: str) -> int:
        return -1 if name == GROUND else self.nodes[name]

    def branch(self, name: str) -> int:
        return self.branches[name.lower()]

    def label(self, row: int) -> str:
        if row < self.n_nodes:
            return f"V({self.node_names[row]})"
        return f"I({self.branch_names[row - self.n_nodes]})"


@dataclass(frozen=True)
class StampContext:
    """Analysis kind plus the data a reactive or time-varying stamp needs.

    kind: ``"dc"``, ``"ac"`` or ``"tran"``.  For transient, ``history`` maps a
    capacitor name to (v_prev, i_prev) and ``method`` is ``"trap"`` or ``"be"``.
    ``source_scale`` multiplies every independent DC/transient source value.
    """

    kind: str = "dc"
    frequency: float = 0.0
    timestep: float = 0.0
    time: float | None = None
    method: str = "trap"
    history: dict = field(default_factory=dict)
    source_scale: float = 1.0


def capacitor_companion(c: float, h: float, method: str, v_prev: float, i_prev: float):
    """(conductance, history current) for one integration step.

    The capacitor current is ``geq * v - ihist``.
    """
    if method == "be":
        geq = c / h
        return geq, geq * v_prev
    geq = 2.0 * c / h
    return geq, geq * v_prev + i_prev


def stamp_linear(element: Element, ctx: StampContext, index: SystemIndex) -> StampSet:
    """MNA contribution of a linear element (R, C, V, I, E)."""
    st = StampSet()
    if isinstance(element, Mosfet):
        raise UnsupportedElement(f"{element.name}: MOSFETs are stamped by mosfet_stamp")
    if isinstance(element, Resistor):
        st.conductance(index.node(element.n1), index.node(element.n2), 1.0 / element.value)
    elif isinstance(element, Capacitor):
        a, b = index.node(element.n1), index.node(element.n2)
        if ctx.kind == "ac":
            st.conductance(a, b, 2j * math.pi * ctx.frequency * element.value)
        elif ctx.kind == "tran":
            v_prev, i_prev = ctx.history.get(element.name, (0.0, 0.0))
            geq, ihist = capacitor_companion(element.value, ctx.timestep, ctx.method, v_prev, i_prev)
            st.conductance(a, b, geq)
            st.current(b, a, ihist)
    elif isinstance(element, CurrentSource):
        a, b = index.node(element.n1), index.node(element.n2)
        if ctx.kind == "ac":
            if element.ac_mag:
                st.current(a, b, _phasor(element))
        else:
            st.current(a, b, ctx.source_scale * element.value_at(ctx.time))
    elif isinstance(element, VoltageSource):
        a, b = index.node(element.n1), index.node(element.n2)
        k = index.branch(element.name)
        st.add(a, k, 1.0)
        st.add(b, k, -1.0)
        st.add(k, a, 1.0)
        st.add(k, b, -1.0)
        if ctx.kind == "ac":
            if element.ac_mag:
                st.add_rhs(k, _phasor(element))
        else:
            st.add_rhs(k, ctx.source_scale * element.value_at(ctx.time))
    elif isinstance(element, Vcvs):
        op, on = index.node(element.out_p), index.node(element.out_n)
        ip, inn = index.node(element.in_p), index.node(element.in_n)
        k = index.branch(element.name)
        st.add(op, k, 1.0)
        st.add(on, k, -1.0)
        st.add(k, op, 1.0)
        st.add(k, on, -1.0)
        st.add(k, ip, -element.gain)
        st.add(k, inn, element.gain)
    else:
        raise UnsupportedElement(f"cannot stamp {element!r}")
    return st


def _phasor(src: VoltageSource) -> complex:
    ph = math.radians(src.ac_phase)
    return src.ac_mag * complex(math.cos(ph), math.sin(ph))


def mosfet_stamp(ev: MosfetEval, terminals: tuple[int, int, int], *, ac: bool = False,
                 frequency: float = 0.0, cgs: float = 0.0, cgd: float = 0.0) -> StampSet:
    """Newton (or small-signal) stamps of one MOSFET.

    ``terminals`` are the system indices of (drain, gate, source), -1 for
    ground.  The DC form adds the equivalent current ``ieq`` to the RHS; the AC
    form omits it and adds the gate-source and gate-drain capacitances.
    """
    d, g, s = terminals
    nd, ns = (s, d) if ev.reversed else (d, s)
    st = StampSet()
    st.add(nd, nd, ev.gds)
    st.add(nd, g, ev.gm)
    st.add(nd, ns, -(ev.gds + ev.gm))
    st.add(ns, ns, ev.gds + ev.gm)
    st.add(ns, g, -ev.gm)
    st.add(ns, nd, -ev.gds)
    if ac:
        w = 2j * math.pi * frequency
        if cgs:
            st.conductance(g, s, w * cgs)
        if cgd:
            st.conductance(g, d, w * cgd)
    else:
        st.current(nd, ns, ev.polarity * ev.ieq)
    return st
