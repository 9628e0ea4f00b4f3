"""Operating point, DC sweep, AC small-signal and transient analyses."""

from __future__ import annotations

import copy
import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .engine import CompiledCircuit, NewtonConfig, OperatingPoint, _newton, lu_solve, newton_solve, SystemMatrix
from .errors import NonConvergence, SingularMatrix
from .netlist import Ac, Capacitor, Circuit, CurrentSource, DcSweep, Tran, VoltageSource, format_value


def run_op(circuit: Circuit, config: NewtonConfig | None = None,
           initial: np.ndarray | None = None) -> OperatingPoint:
    return newton_solve(circuit, config, initial)


# --- DC sweep ----------------------------------------------------------------

@dataclass
class SweepResult:
    source: str
    values: np.ndarray
    points: list[OperatingPoint | None]
    converged: np.ndarray
    errors: list[str | None] = field(default_factory=list)

    def voltage(self, node: str) -> np.ndarray:
        return np.array([p.v(node) if p is not None else np.nan for p in self.points])

    def current(self, source: str) -> np.ndarray:
        return np.array([p.i(source) if p is not None else np.nan for p in self.points])


def _with_source_value(cc: CompiledCircuit, name: str, value: float) -> CompiledCircuit:
    """Shallow copy of ``cc`` with one independent source's DC value changed."""
    out = copy.copy(cc)
    key = name.lower()
    out.sources = [dataclasses.replace(s, dc=value) if s.name.lower() == key else s for s in cc.sources]
    out._src_cache = {}
    return out


def run_dc_sweep(circuit: Circuit, directive: DcSweep, config: NewtonConfig | None = None,
                 values: np.ndarray | None = None) -> SweepResult:
    """Solve at each swept value, seeding every point with the previous solution."""
    src = circuit.element(directive.source)
    if not isinstance(src, VoltageSource):
        raise ValueError(f"{directive.source} is not an independent source")
    values = directive.values() if values is None else np.asarray(values, dtype=float)
    base = CompiledCircuit(circuit)
    points: list[OperatingPoint | None] = []
    flags, errors = [], []
    seed = None
    for v in values:
        cc = _with_source_value(base, src.name, float(v))
        try:
            op = newton_solve(cc, config, seed)
        except NonConvergence as exc:
            points.append(None)
            flags.append(False)
            errors.append(str(exc))
            continue
        points.append(op)
        flags.append(True)
        errors.append(None)
        seed = op.x
    return SweepResult(src.name, values, points, np.array(flags, dtype=bool), errors)


# --- AC ----------------------------------------------------------------------

@dataclass
class AcResponse:
    frequencies: np.ndarray
    values: np.ndarray
    bias: OperatingPoint
    output: str = ""
    input: str = ""
    singular: np.ndarray | None = None

    @property
    def magnitude_db(self) -> np.ndarray:
        return 20.0 * np.log10(np.abs(self.values))

    @property
    def phase_deg(self) -> np.ndarray:
        """Unwrapped phase in degrees."""
        return np.degrees(np.unwrap(np.angle(self.values)))


def _ac_source(circuit: Circuit, name: str | None) -> VoltageSource:
    flagged = [e for e in circuit.elements if isinstance(e, VoltageSource) and e.ac_mag]
    if len(flagged) != 1:
        raise ValueError(f"AC analysis needs exactly one AC source, found {len(flagged)}")
    src = flagged[0]
    if name is not None and src.name.lower() != name.lower():
        raise ValueError(f"input source {name} has no AC magnitude")
    return src


def run_ac(circuit: Circuit, directive: Ac, input: str | None = None, output: str | None = None,
           config: NewtonConfig | None = None, bias: OperatingPoint | None = None,
           frequencies: np.ndarray | None = None) -> AcResponse:
    """Small-signal response V(output) / (AC phasor of the input source)."""
    src = _ac_source(circuit, input)
    cc = CompiledCircuit(circuit)
    if bias is None:
        bias = newton_solve(cc, config)
    g, _ = cc.system(bias.x, 0.0)
    rhs = cc.ac_source_vector()
    phasor = src.ac_mag * complex(math.cos(math.radians(src.ac_phase)), math.sin(math.radians(src.ac_phase)))
    out_row = cc.index.node(output.lower()) if output is not None else None
    freqs = directive.frequencies() if frequencies is None else np.asarray(frequencies, dtype=float)
    values = np.empty(len(freqs), dtype=complex)
    singular = np.zeros(len(freqs), dtype=bool)
    for k, f in enumerate(freqs):
        a = g + 2j * math.pi * f * cc.c_matrix
        try:
            x = lu_solve(SystemMatrix(a, rhs, cc.index))
        except SingularMatrix:
            values[k] = np.nan
            singular[k] = True
            continue
        values[k] = (x[out_row] if out_row is not None and out_row >= 0 else 0.0) / phasor
    return AcResponse(freqs, values, bias, output or "", src.name, singular)


# --- transient ---------------------------------------------------------------

@dataclass
class TransientWaveform:
    times: np.ndarray
    x: np.ndarray  # (n_points, n_unknowns)
    labels: tuple[str, ...]
    node_names: tuple[str, ...]
    methods: tuple[str, ...]

    def voltage(self, node: str) -> np.ndarray:
        node = node.lower()
        if node in ("0", "gnd"):
            return np.zeros(len(self.times))
        return self.x[:, self.node_names.index(node)]

    def column(self, label: str) -> np.ndarray:
        return self.x[:, self.labels.index(label)]


def _initial_state(circuit: Circuit, cc: CompiledCircuit, cfg: NewtonConfig):
    has_ic = any(isinstance(e, Capacitor) and e.ic is not None for e in circuit.elements)
    cc0 = CompiledCircuit(circuit, ic_branches=True) if has_ic else cc
    cc0_t0 = copy.copy(cc0)
    cc0_t0.sources = [dataclasses.replace(s, dc=s.value_at(0.0)) for s in cc0.sources]
    cc0_t0._src_cache = {}
    op = newton_solve(cc0_t0, cfg)
    x0 = op.x[:cc.n].copy()
    i0 = np.zeros(len(cc.cap_c))
    for k, name in enumerate(cc.cap_names):
        key = f"ic:{name}".lower()
        if has_ic and key in cc0.index.branches:
            i0[k] = op.x[cc0.index.branches[key]]
    return x0, i0


def run_tran(circuit: Circuit, directive: Tran, config: NewtonConfig | None = None) -> TransientWaveform:
    """Fixed-step trapezoidal integration (backward Euler on the first step)."""
    cfg = config or NewtonConfig()
    cc = CompiledCircuit(circuit)
    x, i_prev = _initial_state(circuit, cc, cfg)
    h = directive.tstep
    nsteps = int(math.floor(directive.tstop / h + 1e-9))
    ca, cb, cval = cc.cap_a, cc.cap_b, cc.cap_c
    n = cc.n

    def cap_matrix(geq):
        m = np.zeros((n + 1, n + 1))
        np.add.at(m, (ca, ca), geq)
        np.add.at(m, (cb, cb), geq)
        np.add.at(m, (ca, cb), -geq)
        np.add.at(m, (cb, ca), -geq)
        return m[:n, :n]

    geq_be, geq_tr = cval / h, 2.0 * cval / h
    g_be, g_tr = cap_matrix(geq_be), cap_matrix(geq_tr)
    times = [0.0]
    states = [x.copy()]
    methods = ["op"]
    for k in range(1, nsteps + 1):
        t = k * h
        xg = np.append(x, 0.0)
        v_prev = xg[ca] - xg[cb]
        if k == 1:
            method, geq, gmat = "be", geq_be, g_be
            ihist = geq * v_prev
        else:
            method, geq, gmat = "trap", geq_tr, g_tr
            ihist = geq * v_prev + i_prev
        rhs = np.zeros(n + 1)
        np.add.at(rhs, ca, ihist)
        np.add.at(rhs, cb, -ihist)
        try:
            x, _ = _newton(cc, cfg, x, cfg.gmin, 1.0, t, gmat, rhs[:n])
        except NonConvergence as exc:
            partial = TransientWaveform(np.array(times), np.array(states), _labels(cc),
                                        cc.index.node_names, tuple(methods))
            err = NonConvergence(f"transient step {k} (t={t:.6g}s): {exc}", node=exc.node,
                                 step=k, time=t, last_iterate=exc.last_iterate)
            err.partial = partial
            raise err from exc
        xg = np.append(x, 0.0)
        i_prev = geq * (xg[ca] - xg[cb]) - ihist
        times.append(t)
        states.append(x.copy())
        methods.append(method)
    return TransientWaveform(np.array(times), np.array(states), _labels(cc),
                             cc.index.node_names, tuple(methods))


def _labels(cc: CompiledCircuit) -> tuple[str, ...]:
    return tuple(cc.index.label(i) for i in range(cc.n))


# --- CSV ---------------------------------------------------------------------

def _fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def _write(rows, path) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


def op_csv(op: OperatingPoint, path=None) -> str:
    rows = [["quantity", "value"]]
    rows += [[f"V({n})", _fmt(v)] for n, v in op.node_voltages.items()]
    rows += [[op.index.label(op.index.branch(b)), _fmt(i)] for b, i in op.branch_currents.items()]
    return _write(rows, path)


def sweep_csv(result: SweepResult, path=None) -> str:
    ref = next((p for p in result.points if p is not None), None)
    labels = [] if ref is None else [ref.index.label(i) for i in range(len(ref.x))]
    rows = [[result.source] + labels + ["converged"]]
    for v, p, ok in zip(result.values, result.points, result.converged):
        vals = [_fmt(x) for x in p.x] if p is not None else ["nan"] * len(labels)
        rows.append([_fmt(v)] + vals + [str(int(ok))])
    return _write(rows, path)


def ac_csv(resp: AcResponse, path=None) -> str:
    rows = [["freq_hz", "mag_db", "phase_deg"]]
    rows += [[_fmt(f), _fmt(m), _fmt(p)] for f, m, p in zip(resp.frequencies, resp.magnitude_db, resp.phase_deg)]
    return _write(rows, path)


def tran_csv(wave: TransientWaveform, path=None) -> str:
    rows = [["time_s"] + list(wave.labels)]
    rows += [[_fmt(t)] + [_fmt(v) for v in x] for t, x in zip(wave.times, wave.x)]
    return _write(rows, path)
