"""Figures of merit extracted from analysis results."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analyses import AcResponse, SweepResult
from .engine import OperatingPoint
from .errors import AlwaysRegulated, NeverRegulated, NonConvergence, NoUnityCrossing, RegulatedAtUpperBound
from .netlist import Circuit, CurrentSource, Mosfet, Resistor, Vcvs, VoltageSource

DB_3 = 20.0 * math.log10(math.sqrt(2.0))  # 3.0103 dB


@dataclass
class BodeMetrics:
    dc_gain_db: float
    f3db: float | None
    gbw: float | None
    unity_gain_frequency: float | None
    phase_margin_deg: float | None
    absent: tuple[str, ...] = ()

    @property
    def dc_gain(self) -> float:
        return 10.0 ** (self.dc_gain_db / 20.0)


def _log_crossing(f: np.ndarray, y: np.ndarray, level: float) -> tuple[float, int] | None:
    """First downward crossing of ``level``; frequency interpolated linearly in log f."""
    above = y > level
    idx = np.flatnonzero(above[:-1] & ~above[1:])
    if idx.size == 0:
        return None
    k = int(idx[0])
    y0, y1 = y[k], y[k + 1]
    frac = 0.0 if y1 == y0 else (y0 - level) / (y0 - y1)
    lf = math.log10(f[k]) + frac * (math.log10(f[k + 1]) - math.log10(f[k]))
    return 10.0 ** lf, k


def _interp_log(f: np.ndarray, y: np.ndarray, at: float, k: int) -> float:
    lf0, lf1 = math.log10(f[k]), math.log10(f[k + 1])
    frac = (math.log10(at) - lf0) / (lf1 - lf0)
    return float(y[k] + frac * (y[k + 1] - y[k]))


def bode_metrics(response: AcResponse) -> BodeMetrics:
    """DC gain, -3 dB frequency, GBW, unity-gain frequency and phase margin.

    Missing quantities are ``None`` and named in ``absent``; a response that
    never crosses 0 dB has no phase margin (``NoUnityCrossing``).
    """
    f = np.asarray(response.frequencies, dtype=float)
    ok = np.isfinite(response.values)
    f, vals = f[ok], np.asarray(response.values)[ok]
    mag = 20.0 * np.log10(np.abs(vals))
    phase = np.degrees(np.unwrap(np.angle(vals)))
    dc_db = float(mag[0])
    absent = []
    f3 = _log_crossing(f, mag, dc_db - DB_3)
    f3db = f3[0] if f3 else None
    if f3db is None:
        absent.append("f3db")
    gbw = 10.0 ** (dc_db / 20.0) * f3db if f3db is not None else None
    if gbw is None:
        absent.append("gbw")
    unity = _log_crossing(f, mag, 0.0) if dc_db > 0 else None
    if unity is None:
        absent += ["unity_gain_frequency", "NoUnityCrossing"]
        fu = pm = None
    else:
        fu, k = unity
        pm = 180.0 + _interp_log(f, phase, fu, k)
    return BodeMetrics(dc_db, f3db, gbw, fu, pm, tuple(absent))


def require_phase_margin(m: BodeMetrics) -> float:
    if m.phase_margin_deg is None:
        raise NoUnityCrossing("gain never reaches unity inside the swept range")
    return m.phase_margin_deg


# --- regulation --------------------------------------------------------------

def regulated(vout: float, vtarget: float, tolerance: float) -> bool:
    return bool(np.isfinite(vout) and abs(vout - vtarget) <= tolerance * abs(vtarget))


def dropout_from_curve(vin: np.ndarray, vout: np.ndarray, vtarget: float, tolerance: float = 0.02) -> float:
    """Input-output differential at the lowest input that still regulates.

    The knee input is interpolated linearly where the output crosses
    ``(1 - tolerance) * vtarget``; the dropout is knee input minus the
    output there.  Sweep direction does not matter.
    """
    vin = np.asarray(vin, dtype=float)
    vout = np.asarray(vout, dtype=float)
    keep = np.isfinite(vout)
    order = np.argsort(vin[keep], kind="stable")
    vin, vout = vin[keep][order], vout[keep][order]
    ok = np.array([regulated(v, vtarget, tolerance) for v in vout])
    if not ok.any():
        raise NeverRegulated(f"output never within {tolerance:.1%} of {vtarget} V")
    top = int(np.flatnonzero(ok)[-1])
    k = top
    while k > 0 and ok[k - 1]:
        k -= 1
    if k == 0:
        raise AlwaysRegulated("output regulated down to the bottom of the sweep")
    threshold = (1.0 - tolerance) * vtarget
    v0, v1 = vout[k - 1], vout[k]
    if v1 == v0:
        knee = vin[k]
    else:
        frac = min(max((threshold - v0) / (v1 - v0), 0.0), 1.0)
        knee = vin[k - 1] + frac * (vin[k] - vin[k - 1])
    return float(knee - threshold)


def dropout_voltage(sweep: SweepResult, vtarget: float, tolerance: float = 0.02, output: str = "out") -> float:
    return dropout_from_curve(sweep.values, sweep.voltage(output), vtarget, tolerance)


def line_regulation(vin: np.ndarray, vout: np.ndarray, vtarget: float, tolerance: float = 0.02) -> float:
    """Least-squares dVout/dVin over the regulated points (V/V)."""
    vin = np.asarray(vin, dtype=float)
    vout = np.asarray(vout, dtype=float)
    ok = np.array([regulated(v, vtarget, tolerance) for v in vout])
    if ok.sum() < 2:
        raise NeverRegulated("fewer than two regulated points")
    return float(np.polyfit(vin[ok], vout[ok], 1)[0])


@dataclass
class LoadSearch:
    max_load: float
    lower: float
    upper: float
    brackets: list[tuple[float, float]] = field(default_factory=list)


def max_load_current(template: Callable[[float], Circuit], vtarget: float, tolerance: float = 0.02,
                     upper: float = 0.1, resolution: float = 1e-4, output: str = "out",
                     solve: Callable[[Circuit, np.ndarray | None], OperatingPoint] | None = None) -> LoadSearch:
    """Largest load current that keeps the output regulated, by bisection.

    ``template(iload)`` must return the circuit with that load current.
    The result is regulated; result + resolution is not.
    """
    from .engine import newton_solve

    solve = solve or (lambda c, seed: newton_solve(c, None, seed))
    seeds: dict[float, np.ndarray] = {}

    def ok(i: float) -> bool:
        near = min(seeds, key=lambda k: abs(k - i)) if seeds else None
        try:
            op = solve(template(i), seeds.get(near) if near is not None else None)
        except NonConvergence:
            return False
        good = regulated(op.v(output), vtarget, tolerance)
        if good:
            seeds[i] = op.x
        return good

    if not ok(0.0):
        raise NeverRegulated("output not regulated even at zero load")
    if ok(upper):
        raise RegulatedAtUpperBound(f"still regulated at {upper} A")
    lo, hi = 0.0, upper
    brackets = [(lo, hi)]
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
        brackets.append((lo, hi))
    return LoadSearch(lo, lo, hi, brackets)


# --- power -------------------------------------------------------------------

@dataclass
class PowerReport:
    total: float
    pass_network: float | None = None
    quiescent: float | None = None


def source_power(op: OperatingPoint, circuit: Circuit) -> dict[str, float]:
    """Power delivered by each independent source and VCVS (W, positive = delivering)."""
    out = {}
    for e in circuit.elements:
        if isinstance(e, CurrentSource):
            out[e.name] = e.dc * (op.v(e.n2) - op.v(e.n1))
        elif isinstance(e, VoltageSource):
            out[e.name] = -(op.v(e.n1) - op.v(e.n2)) * op.i(e.name)
        elif isinstance(e, Vcvs):
            out[e.name] = -(op.v(e.out_p) - op.v(e.out_n)) * op.i(e.name)
    return out


def element_dissipation(op: OperatingPoint, circuit: Circuit) -> dict[str, float]:
    """Power absorbed by each resistor and MOSFET channel (W).

    When the operating point was solved with a node-to-ground gmin, its loss
    is reported under the key ``"(gmin)"`` so the totals balance.
    """
    out = {}
    for e in circuit.elements:
        if isinstance(e, Resistor):
            out[e.name] = (op.v(e.n1) - op.v(e.n2)) ** 2 / e.value
        elif isinstance(e, Mosfet):
            ev = op.devices[e.name]
            d, s = (e.s, e.d) if ev.reversed else (e.d, e.s)
            out[e.name] = ev.polarity * ev.id * (op.v(d) - op.v(s))
    if op.gmin:
        out["(gmin)"] = op.gmin * sum(v * v for v in op.node_voltages.values())
    return out


def power_dissipated(op: OperatingPoint, circuit: Circuit, pass_device: str | None = None) -> PowerReport:
    """Power drawn from the delivering sources, optionally split for an LDO.

    Sinks (a load current source absorbing power) are not counted in the
    total, so for an LDO it equals Vin * Iin plus the reference's share.

    With ``pass_device`` the split is (Vsource - Vdrain) * Ipass for the pass
    network and Vin * Iq for the quiescent part, Iq being supply current not
    flowing through the pass device.
    """
    total = float(sum(p for p in source_power(op, circuit).values() if p > 0))
    if pass_device is None:
        return PowerReport(total)
    dev = circuit.element(pass_device)
    ev = op.devices[dev.name]
    ipass = abs(ev.id)
    p_pass = abs(op.v(dev.s) - op.v(dev.d)) * ipass
    supply = next(e for e in circuit.elements
                  if isinstance(e, VoltageSource) and not isinstance(e, CurrentSource)
                  and dev.s in (e.n1, e.n2))
    vin = op.v(supply.n1) - op.v(supply.n2)
    iin = -op.i(supply.name)
    return PowerReport(total, p_pass, vin * (iin - ipass))
