"""Reconstructed two-stage OTA and PMOS LDO, plus the experiments run on them.

Device sizes are not published for the original design, so the templates
below carry generic 180 nm-class Level-1 parameters.  The pass network is
sized so that its deep-triode resistance sets the dropout ladder
(about 60 mV per mA of load).  The module also holds the experiments
(OTA Bode plot, Miller ablation, line sweep, load limit, load step) and the
report writer that aggregates them.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .analyses import (
    AcResponse,
    SweepResult,
    TransientWaveform,
    ac_csv,
    run_ac,
    run_dc_sweep,
    run_op,
    run_tran,
    sweep_csv,
    tran_csv,
)
from .devices import Region
from .errors import LdosimError
from .metrics import (
    BodeMetrics,
    LoadSearch,
    PowerReport,
    bode_metrics,
    dropout_voltage,
    max_load_current,
    power_dissipated,
)
from .netlist import (
    Ac,
    Capacitor,
    Circuit,
    CurrentSource,
    DcSweep,
    ModelCard,
    Mosfet,
    Op,
    Resistor,
    Tran,
    Vcvs,
    VoltageSource,
)

NMOS = "nch"
PMOS = "pch"


@dataclass(frozen=True)
class OtaTemplate:
    """Two-stage Miller OTA.

    M1/M6 tail mirror, M2 (inverting) / M3 (non-inverting) NMOS pair, M4
    diode-connected and M5 mirror-output PMOS loads, M8 PMOS common-source
    second stage with M7 NMOS current-sink load; Cc from drain M5 to drain M8.
    """

    m1_w: float = 3e-6
    m1_l: float = 1e-6
    m2_w: float = 4e-6
    m2_l: float = 1e-6
    m3_w: float = 4e-6
    m3_l: float = 1e-6
    m4_w: float = 4e-6
    m4_l: float = 1e-6
    m5_w: float = 4e-6
    m5_l: float = 1e-6
    m6_w: float = 3e-6
    m6_l: float = 1e-6
    m7_w: float = 25e-6
    m7_l: float = 1e-6
    m8_w: float = 66e-6
    m8_l: float = 1e-6
    ibias: float = 15e-6
    cc: float = 3e-12
    cl: float = 1e-12
    supply: float = 3.3
    vcm: float = 1.2
    kp_n: float = 170e-6
    kp_p: float = 60e-6
    vto: float = 0.45
    lam: float = 0.05
    cgs: float = 10e-15
    cgd: float = 2e-15

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite")
            if f.name.startswith("m") and v <= 0:
                raise ValueError(f"{f.name} must be > 0")
        if self.cc < 0 or self.cl < 0 or self.ibias <= 0 or self.supply <= 0:
            raise ValueError("cc, cl must be >= 0; ibias, supply > 0")

    def models(self) -> dict[str, ModelCard]:
        return {
            NMOS: ModelCard(NMOS, "N", self.vto, self.kp_n, self.lam, self.cgs, self.cgd),
            PMOS: ModelCard(PMOS, "P", -self.vto, self.kp_p, self.lam, self.cgs, self.cgd),
        }


@dataclass(frozen=True)
class LdoTemplate:
    ota: OtaTemplate = field(default_factory=OtaTemplate)
    vref: float = 1.2
    r1: float = 20e3
    r2: float = 30e3
    pass_w: float = 39e-6
    pass_l: float = 1e-6
    pass_m: int = 4
    cout: float = 1e-6
    esr: float = 3.0
    vin: float = 3.3
    iload: float = 5e-3

    def __post_init__(self):
        if self.r1 < 0 or self.r2 <= 0 or self.vref <= 0:
            raise ValueError("need r1 >= 0, r2 > 0, vref > 0")
        if self.pass_w <= 0 or self.pass_l <= 0 or int(self.pass_m) != self.pass_m or self.pass_m < 1:
            raise ValueError("pass device needs W, L > 0 and integer M >= 1")
        if self.cout <= 0 or self.esr < 0 or self.iload < 0:
            raise ValueError("need cout > 0, esr >= 0, iload >= 0")

    @property
    def target(self) -> float:
        """Regulated output voltage vref * (r1 + r2) / r2."""
        return self.vref * (self.r1 + self.r2) / self.r2

    @property
    def feedback_factor(self) -> float:
        return self.r2 / (self.r1 + self.r2)


def _ota_core(t: OtaTemplate, vdd: str, inn: str, inp: str, out: str, prefix: str = "") -> list:
    """The eight transistors, bias reference and compensation of the OTA."""
    p = prefix
    tail, n1, o1, bias = f"{p}tail", f"{p}n1", f"{p}o1", f"{p}bias"
    els = [
        Mosfet("M1", tail, bias, "0", "0", NMOS, t.m1_w, t.m1_l),
        Mosfet("M2", n1, inn, tail, "0", NMOS, t.m2_w, t.m2_l),
        Mosfet("M3", o1, inp, tail, "0", NMOS, t.m3_w, t.m3_l),
        Mosfet("M4", n1, n1, vdd, vdd, PMOS, t.m4_w, t.m4_l),
        Mosfet("M5", o1, n1, vdd, vdd, PMOS, t.m5_w, t.m5_l),
        Mosfet("M6", bias, bias, "0", "0", NMOS, t.m6_w, t.m6_l),
        Mosfet("M7", out, bias, "0", "0", NMOS, t.m7_w, t.m7_l),
        Mosfet("M8", out, o1, vdd, vdd, PMOS, t.m8_w, t.m8_l),
        CurrentSource("IBIAS", vdd, bias, t.ibias),
    ]
    if t.cc > 0:
        els.append(Capacitor("CC", o1, out, t.cc))
    if t.cl > 0:
        els.append(Capacitor("CL", out, "0", t.cl))
    return els


def build_ota(template: OtaTemplate | None = None, *, ac: Ac | None = None) -> Circuit:
    """Open-loop OTA test bench.

    The non-inverting input carries the common-mode DC level plus a unit AC
    stimulus.  A 1 GOhm / 1 F network closes a unity DC feedback loop onto the
    inverting input to fix the bias, and is open for any frequency of
    interest, so the AC response is the open-loop gain.
    """
    t = template or OtaTemplate()
    els = [VoltageSource("VDD", "vdd", "0", t.supply)]
    els += _ota_core(t, "vdd", "inn", "inp", "out")
    els += [
        VoltageSource("VIN", "inp", "0", t.vcm, ac_mag=1.0),
        Resistor("RFB", "out", "inn", 1e9),
        Capacitor("CFB", "inn", "0", 1.0),
    ]
    analyses = (ac or Ac(20, 0.1, 100e6),)
    return Circuit(tuple(els), t.models(), (Op(),) + analyses, "two-stage Miller OTA, open loop")


def build_ota_closed_loop(template: OtaTemplate | None = None, rf: float = 1e6, rg: float = 10e3) -> Circuit:
    """Non-inverting amplifier of gain 1 + rf/rg around the OTA."""
    t = template or OtaTemplate()
    els = [VoltageSource("VDD", "vdd", "0", t.supply)]
    els += _ota_core(t, "vdd", "inn", "inp", "out")
    vmid = t.vcm
    els += [
        VoltageSource("VIN", "inp", "0", vmid, ac_mag=1.0),
        VoltageSource("VREFG", "gref", "0", vmid),
        Resistor("RF", "out", "inn", rf),
        Resistor("RG", "inn", "gref", rg),
    ]
    return Circuit(tuple(els), t.models(), (Op(),), "OTA, closed-loop non-inverting gain")


def _load(t: LdoTemplate, pwl=None) -> CurrentSource:
    return CurrentSource("ILOAD", "out", "0", t.iload, pwl=pwl)


def build_ldo(template: LdoTemplate | None = None, *, ideal_gain: float | None = None,
              swap_inputs: bool = False, load_pwl=None, analyses=(Op(),)) -> Circuit:
    """PMOS LDO: OTA drives the pass gate, divider tap feeds the non-inverting input.

    ``ideal_gain`` replaces the OTA by a VCVS of that gain.  ``swap_inputs``
    wires the feedback to the inverting input instead (positive feedback).
    """
    t = template or LdoTemplate()
    tap = "fb" if t.r1 > 0 else "out"
    fb, ref = ("ref", tap) if swap_inputs else (tap, "ref")
    els = [
        VoltageSource("VIN", "vin", "0", t.vin),
        VoltageSource("VREF", "ref", "0", t.vref),
    ]
    if ideal_gain is None:
        els += _ota_core(t.ota, "vin", inn=ref, inp=fb, out="gate")
    else:
        els.append(Vcvs("EAMP", "gate", "0", fb, ref, ideal_gain))
    els.append(Mosfet("MPASS", "out", "gate", "vin", "vin", PMOS, t.pass_w, t.pass_l, int(t.pass_m)))
    if t.r1 > 0:
        els.append(Resistor("R1", "out", "fb", t.r1))
    els.append(Resistor("R2", tap, "0", t.r2))
    if t.esr > 0:
        els += [Resistor("RESR", "out", "esr", t.esr), Capacitor("COUT", "esr", "0", t.cout)]
    else:
        els.append(Capacitor("COUT", "out", "0", t.cout))
    els.append(_load(t, load_pwl))
    return Circuit(tuple(els), t.ota.models(), tuple(analyses), "PMOS LDO")


# --- experiments -------------------------------------------------------------

BODE_AC = Ac(20, 0.1, 100e6)
# The uncompensated OTA crosses unity at a few hundred MHz, so the ablation
# sweep runs further than the Bode plot.
ABLATION_AC = Ac(20, 0.1, 10e9)
ABLATION_CC = (0.0, 0.5e-12, 1e-12, 3e-12)
LINE_SWEEP = DcSweep("VIN", 5.0, 1.0, -0.05)
LADDER_LOADS = (2.5e-3, 5e-3, 7.5e-3, 10e-3)
LOAD_LIMIT_VIN = 2.6
REG_TOL = 0.02


def ota_ac_response(template: OtaTemplate | None = None, ac: Ac = BODE_AC) -> AcResponse:
    circuit = build_ota(template, ac=ac)
    return run_ac(circuit, ac, output="out")


def ota_regions(template: OtaTemplate | None = None) -> dict[str, Region]:
    op = run_op(build_ota(template))
    return {name: ev.region for name, ev in op.devices.items()}


def experiment_ota_bode(template: OtaTemplate | None = None, ac: Ac = BODE_AC) -> BodeMetrics:
    """Open-loop Bode metrics over 0.1 Hz to 100 MHz at 20 points per decade."""
    return bode_metrics(ota_ac_response(template, ac))


@dataclass(frozen=True)
class AblationRow:
    cc: float
    phase_margin_deg: float | None
    fp1: float | None  # dominant pole, taken as the -3 dB frequency
    unity_gain_frequency: float | None
    absent: tuple[str, ...] = ()


def experiment_miller_ablation(template: OtaTemplate | None = None, cc_values=ABLATION_CC,
                               ac: Ac = ABLATION_AC) -> list[AblationRow]:
    """Phase margin and dominant pole for each compensation capacitance, sorted by Cc."""
    t = template or OtaTemplate()
    values = sorted({float(c) for c in cc_values})
    if any(c < 0 for c in values):
        raise ValueError("Cc values must be >= 0")
    rows = []
    for cc in values:
        m = bode_metrics(ota_ac_response(dataclasses.replace(t, cc=cc), ac))
        rows.append(AblationRow(cc, m.phase_margin_deg, m.f3db, m.unity_gain_frequency, m.absent))
    return rows


def experiment_line_sweep(template: LdoTemplate | None = None,
                          sweep: DcSweep = LINE_SWEEP) -> tuple[SweepResult, float]:
    """Vin swept 5 V to 1 V in 50 mV steps at the template load; returns (sweep, dropout)."""
    t = template or LdoTemplate()
    result = run_dc_sweep(build_ldo(t, analyses=(sweep,)), sweep)
    return result, dropout_voltage(result, t.target, REG_TOL)


def regulation_knee(dropout: float, target: float, tolerance: float = REG_TOL) -> float:
    """Lowest regulating input implied by a dropout value."""
    return dropout + (1.0 - tolerance) * target


def load_search(template: LdoTemplate | None = None, vin: float = LOAD_LIMIT_VIN) -> LoadSearch:
    t = dataclasses.replace(template or LdoTemplate(), vin=vin)
    return max_load_current(lambda i: build_ldo(dataclasses.replace(t, iload=i)), t.target, REG_TOL)


def experiment_load_limit(template: LdoTemplate | None = None, vin: float = LOAD_LIMIT_VIN) -> float:
    """Largest regulated load current (A) at ``vin``, bisected to 0.1 mA."""
    return load_search(template, vin).max_load


@dataclass
class LoadStep:
    wave: TransientWaveform
    target: float
    t_step: float
    pre_step: float
    dip: float
    dip_time: float
    final: float
    recovery_time: float | None  # None when never back inside the band
    r_out: float
    tau: float
    railed: bool

    @property
    def vout(self) -> np.ndarray:
        return self.wave.voltage("out")

    @property
    def recovered(self) -> bool:
        return self.recovery_time is not None and self.recovery_time <= 10.0 * self.tau

    @property
    def passed(self) -> bool:
        return self.recovered and not self.railed and self.dip < self.pre_step


def output_resistance(template: LdoTemplate, iload: float) -> float:
    """Open-loop output resistance: pass-device 1/gds in parallel with the divider."""
    t = dataclasses.replace(template, iload=iload)
    op = run_op(build_ldo(t))
    g = op.devices["MPASS"].gds + 1.0 / (t.r1 + t.r2)
    return 1.0 / g


def experiment_load_step(template: LdoTemplate | None = None, i0: float = 5e-3, i1: float = 10e-3,
                         t_step: float = 20e-6, rise: float = 1e-6,
                         tran: Tran = Tran(0.1e-6, 300e-6), swap_inputs: bool = False,
                         band: float = 0.01) -> LoadStep:
    """PWL load step i0 -> i1; dip, recovery into +-band of target, rail check."""
    t = dataclasses.replace(template or LdoTemplate(), iload=i0)
    pwl = ((0.0, i0), (t_step, i0), (t_step + rise, i1))
    circuit = build_ldo(t, load_pwl=pwl, swap_inputs=swap_inputs, analyses=(tran,))
    wave = run_tran(circuit, tran)
    v = wave.voltage("out")
    times = wave.times
    after = times >= t_step
    pre = float(v[~after][-1]) if (~after).any() else float(v[0])
    k_dip = int(np.argmin(np.where(after, v, np.inf)))
    outside = np.flatnonzero(after & (np.abs(v - t.target) > band * t.target))
    if outside.size == 0:
        recovery = 0.0
    elif outside[-1] + 1 < len(times):
        recovery = float(times[outside[-1] + 1] - t_step)
    else:
        recovery = None
    railed = bool(np.any(v < 0.1) or np.any(v > t.vin - 0.1))
    r_out = output_resistance(t, i1)
    return LoadStep(wave, t.target, t_step, pre, float(v[k_dip]), float(times[k_dip]), float(v[-1]),
                    recovery, r_out, r_out * t.cout, railed)


@dataclass(frozen=True)
class IdealRegulation:
    vout: float
    target: float
    gain: float
    feedback_factor: float

    @property
    def relative_error(self) -> float:
        return abs(self.vout - self.target) / abs(self.vout)

    @property
    def bound(self) -> float:
        return 2.0 / (self.gain * self.feedback_factor)


def experiment_ideal_regulation(template: LdoTemplate | None = None, gain: float = 1e6) -> IdealRegulation:
    """Operating point with the OTA replaced by an ideal VCVS."""
    t = template or LdoTemplate()
    op = run_op(build_ldo(t, ideal_gain=gain))
    return IdealRegulation(op.v("out"), t.target, gain, t.feedback_factor)


def experiment_power(template: LdoTemplate | None = None, loads=LADDER_LOADS) -> list[tuple[float, PowerReport, float]]:
    """(iload, power split, power into the load) at the template input voltage."""
    t = template or LdoTemplate()
    rows = []
    for i in loads:
        c = build_ldo(dataclasses.replace(t, iload=i))
        op = run_op(c)
        rows.append((i, power_dissipated(op, c, "MPASS"), op.v("out") * i))
    return rows


# --- overrides ---------------------------------------------------------------

def template_fields() -> dict[str, str]:
    """Every overridable key, mapped to the template ("ldo" or "ota") owning it."""
    keys = {f.name: "ldo" for f in fields(LdoTemplate) if f.name != "ota"}
    keys.update({f.name: "ota" for f in fields(OtaTemplate)})
    return keys


def apply_overrides(template: LdoTemplate, overrides: dict[str, float]) -> LdoTemplate:
    """New template with flat ``key -> value`` overrides applied to the LDO or its OTA."""
    owner = template_fields()
    ldo_kw, ota_kw = {}, {}
    for key, value in overrides.items():
        k = key.lower()
        if k not in owner:
            raise KeyError(f"unknown template parameter {key!r}")
        if k == "pass_m":
            if value != int(value):
                raise ValueError("pass_m must be an integer")
            value = int(value)
        (ldo_kw if owner[k] == "ldo" else ota_kw)[k] = float(value) if k != "pass_m" else value
    ota = dataclasses.replace(template.ota, **ota_kw)
    return dataclasses.replace(template, ota=ota, **ldo_kw)


# --- report ------------------------------------------------------------------

_UNITS = {
    "ibias": "A", "iload": "A", "cc": "F", "cl": "F", "cout": "F", "cgs": "F", "cgd": "F",
    "supply": "V", "vcm": "V", "vref": "V", "vin": "V", "vto": "V",
    "kp_n": "A/V^2", "kp_p": "A/V^2", "lam": "1/V", "r1": "ohm", "r2": "ohm", "esr": "ohm",
    "pass_m": "1",
}

REPORT_UNITS = {
    "vin": "V", "vout": "V", "iload_a": "A", "dropout_v": "V", "knee_v": "V", "max_load_a": "A",
    "vin_v": "V", "cc_f": "F", "pm_deg": "deg", "fp1_hz": "Hz", "fu_hz": "Hz", "dc_gain_db": "dB",
    "f3db_hz": "Hz", "gbw_hz": "Hz", "phase_margin_deg": "deg", "unity_gain_frequency_hz": "Hz",
    "total_w": "W", "pass_w": "W", "quiescent_w": "W", "load_w": "W",
}


def _unit(name: str) -> str:
    if name in _UNITS:
        return _UNITS[name]
    return "m" if name.endswith("_w") or name.endswith("_l") else ""


def config_echo(template: LdoTemplate) -> dict:
    def block(obj):
        return {f.name: {"value": getattr(obj, f.name), "unit": _unit(f.name)}
                for f in fields(obj) if f.name != "ota"}
    return {"ldo": block(template), "ota": block(template.ota),
            "target_v": template.target, "regulation_tolerance": REG_TOL}


@dataclass
class Outcome:
    """Result of one experiment, or the diagnostic explaining why there is none."""

    value: Any = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def attempt(fn: Callable, *args, **kwargs) -> Outcome:
    try:
        return Outcome(fn(*args, **kwargs))
    except (LdosimError, ValueError, ArithmeticError) as exc:
        return Outcome(error=f"{type(exc).__name__}: {exc}")


@dataclass
class ExperimentResults:
    template: LdoTemplate
    bode: Outcome = field(default_factory=Outcome)
    bode_response: Outcome = field(default_factory=Outcome)
    regions: Outcome = field(default_factory=Outcome)
    ablation: Outcome = field(default_factory=Outcome)
    line_sweeps: dict[float, Outcome] = field(default_factory=dict)
    sweep_raw: dict[float, Outcome] = field(default_factory=dict)
    max_load: dict[float, Outcome] = field(default_factory=dict)
    max_load_double_m: Outcome = field(default_factory=Outcome)
    load_step: Outcome = field(default_factory=Outcome)
    ideal: Outcome = field(default_factory=Outcome)
    power: Outcome = field(default_factory=Outcome)


def _line_sweep_split(template: LdoTemplate, iload: float) -> tuple[Outcome, Outcome]:
    """Run one sweep; keep the raw data even when the dropout cannot be extracted."""
    t = dataclasses.replace(template, iload=iload)
    raw = attempt(run_dc_sweep, build_ldo(t, analyses=(LINE_SWEEP,)), LINE_SWEEP)
    if not raw.ok:
        return raw, Outcome(error=raw.error)
    return raw, attempt(dropout_voltage, raw.value, t.target, REG_TOL)


def run_experiments(template: LdoTemplate | None = None,
                    load_vins: tuple[float, ...] = (LOAD_LIMIT_VIN, 3.3, 5.0)) -> ExperimentResults:
    t = template or LdoTemplate()
    res = ExperimentResults(t)
    res.bode_response = attempt(ota_ac_response, t.ota, BODE_AC)
    res.bode = attempt(bode_metrics, res.bode_response.value) if res.bode_response.ok \
        else Outcome(error=res.bode_response.error)
    res.regions = attempt(ota_regions, t.ota)
    res.ablation = attempt(experiment_miller_ablation, t.ota, ABLATION_CC + (t.ota.cc,))
    for i in LADDER_LOADS:
        res.sweep_raw[i], res.line_sweeps[i] = _line_sweep_split(t, i)
    for vin in load_vins:
        res.max_load[vin] = attempt(experiment_load_limit, t, vin)
    res.max_load_double_m = attempt(experiment_load_limit, dataclasses.replace(t, pass_m=2 * t.pass_m),
                                    LOAD_LIMIT_VIN)
    res.load_step = attempt(experiment_load_step, t)
    res.ideal = attempt(experiment_ideal_regulation, t)
    res.power = attempt(experiment_power, t)
    return res


def _num(v) -> float | None:
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _check(name: str, passed: bool, detail: str) -> dict:
    return {"name": name, "pass": bool(passed), "detail": detail}


def _band_check(name: str, outcome: Outcome, lo: float, hi: float, unit: str, scale: float = 1.0,
                getter=lambda v: v) -> dict:
    if not outcome.ok:
        return _check(name, False, outcome.error)
    x = getter(outcome.value)
    if x is None:
        why = getattr(outcome.value, "absent", ())
        return _check(name, False, "absent" + (f" ({', '.join(why)})" if why else ""))
    return _check(name, lo <= x <= hi, f"{x * scale:.6g} {unit} in [{lo * scale:.6g}, {hi * scale:.6g}]")


def _strict(values, increasing: bool) -> bool:
    if any(v is None for v in values):
        return False
    pairs = zip(values, values[1:])
    return all(b > a for a, b in pairs) if increasing else all(b < a for a, b in pairs)


DROPOUT_BANDS = {5e-3: (0.30, 0.07), 7.5e-3: (0.45, 0.08), 10e-3: (0.60, 0.10)}


def build_checks(res: ExperimentResults) -> list[dict]:
    t = res.template
    checks = [
        _band_check("ota_dc_gain", res.bode, 74.0, math.inf, "dB", getter=lambda m: m.dc_gain_db),
        _band_check("ota_gbw", res.bode, 2.5e6, 10e6, "MHz", 1e-6, getter=lambda m: m.gbw),
        _band_check("ota_phase_margin", res.bode, 50.0, math.inf, "deg",
                    getter=lambda m: m.phase_margin_deg),
    ]
    if res.regions.ok:
        bad = sorted(k for k, r in res.regions.value.items() if r is not Region.SATURATION)
        checks.append(_check("ota_all_saturated", not bad, "all saturated" if not bad else "not saturated: " + ", ".join(bad)))
    else:
        checks.append(_check("ota_all_saturated", False, res.regions.error))

    if res.ablation.ok:
        rows = [r for r in res.ablation.value if r.cc in ABLATION_CC]
        zero = next((r for r in rows if r.cc == 0.0), None)
        pm0 = zero.phase_margin_deg if zero else None
        checks.append(_check("miller_uncompensated_pm", pm0 is not None and pm0 < 30.0,
                             f"Cc=0 phase margin {pm0:.4g} deg < 30" if pm0 is not None else "no unity crossing at Cc=0"))
        pms = [r.phase_margin_deg for r in rows]
        fps = [r.fp1 for r in rows]
        checks.append(_check("miller_pm_increasing", _strict(pms, True), f"pm_deg={[_num(p) for p in pms]}"))
        checks.append(_check("miller_fp1_decreasing", _strict(fps, False), f"fp1_hz={[_num(f) for f in fps]}"))
    else:
        for name in ("miller_uncompensated_pm", "miller_pm_increasing", "miller_fp1_decreasing"):
            checks.append(_check(name, False, res.ablation.error))

    for i, (centre, tol) in DROPOUT_BANDS.items():
        checks.append(_band_check(f"dropout_{i * 1e3:g}mA", res.line_sweeps[i], centre - tol, centre + tol, "V"))
    drops = [res.line_sweeps[i].value for i in LADDER_LOADS]
    if all(res.line_sweeps[i].ok for i in LADDER_LOADS):
        mono = all(b >= a for a, b in zip(drops, drops[1:]))
        checks.append(_check("dropout_monotone", mono, f"dropout_v={drops}"))
    else:
        checks.append(_check("dropout_monotone", False, "missing dropout values"))
    d10 = res.line_sweeps[10e-3]
    checks.append(_band_check("knee_10mA", d10, 2.5, 2.7, "V",
                              getter=lambda d: regulation_knee(d, t.target)))

    if res.ideal.ok:
        ideal = res.ideal.value
        rel = abs(ideal.vout - 2.0) / 2.0
        checks.append(_check("ideal_output_2v", rel <= 1e-3, f"Vout={ideal.vout:.9g} V, target 2.0 V +-0.1%"))
    else:
        checks.append(_check("ideal_output_2v", False, res.ideal.error))

    base = res.max_load.get(LOAD_LIMIT_VIN, Outcome(error="not run"))
    checks.append(_band_check("max_load_band", base, 15e-3, 30e-3, "mA", 1e3))
    dbl = res.max_load_double_m
    if base.ok and dbl.ok:
        ratio = dbl.value / base.value if base.value > 0 else math.inf
        checks.append(_check("max_load_multiplier", ratio >= 1.5, f"{ratio:.4g}x >= 1.5x when M doubles"))
    else:
        checks.append(_check("max_load_multiplier", False, base.error or dbl.error))

    if res.load_step.ok:
        ls = res.load_step.value
        rec = "never" if ls.recovery_time is None else f"{ls.recovery_time:.4g} s"
        checks.append(_check("load_step_recovery", ls.passed,
                             f"dip to {ls.dip:.6g} V, recovery {rec} vs 10*Rout*CL={10 * ls.tau:.4g} s, "
                             f"railed={ls.railed}"))
    else:
        checks.append(_check("load_step_recovery", False, res.load_step.error))
    return checks


def _bode_entry(res: ExperimentResults) -> dict:
    if not res.bode.ok:
        return {"error": res.bode.error}
    m = res.bode.value
    return {"dc_gain_db": _num(m.dc_gain_db), "f3db_hz": _num(m.f3db), "gbw_hz": _num(m.gbw),
            "phase_margin_deg": _num(m.phase_margin_deg),
            "unity_gain_frequency_hz": _num(m.unity_gain_frequency), "absent": list(m.absent)}


def report_dict(res: ExperimentResults, checks: list[dict] | None = None) -> dict:
    t = res.template
    raw10 = res.sweep_raw[10e-3]
    if raw10.ok:
        sw = raw10.value
        line = [{"vin": _num(v), "vout": _num(vo), "converged": bool(c)}
                for v, vo, c in zip(sw.values, sw.voltage("out"), sw.converged)]
    else:
        line = {"error": raw10.error}
    dropout = []
    for i in LADDER_LOADS:
        o = res.line_sweeps[i]
        entry = {"iload_a": i}
        if o.ok:
            entry.update(dropout_v=o.value, knee_v=regulation_knee(o.value, t.target))
        else:
            entry.update(dropout_v=None, error=o.error)
        dropout.append(entry)
    base = res.max_load.get(LOAD_LIMIT_VIN)
    by_vin = []
    for vin, o in res.max_load.items():
        e = {"vin_v": vin, "max_load_a": o.value}
        if not o.ok:
            e["error"] = o.error
        by_vin.append(e)
    dbl = res.max_load_double_m
    if res.ablation.ok:
        ablation = [{"cc_f": r.cc, "pm_deg": _num(r.phase_margin_deg), "fp1_hz": _num(r.fp1),
                     "fu_hz": _num(r.unity_gain_frequency),
                     **({"absent": list(r.absent)} if r.absent else {})} for r in res.ablation.value]
    else:
        ablation = {"error": res.ablation.error}
    if res.load_step.ok:
        ls = res.load_step.value
        step = {"target_v": ls.target, "pre_step_v": ls.pre_step, "dip_v": ls.dip, "dip_time_s": ls.dip_time,
                "final_v": ls.final, "recovery_time_s": ls.recovery_time, "r_out_ohm": ls.r_out,
                "limit_s": 10 * ls.tau, "railed": ls.railed}
    else:
        step = {"error": res.load_step.error}
    if res.power.ok:
        power = [{"iload_a": i, "vin_v": t.vin, "total_w": p.total, "pass_w": p.pass_network,
                  "quiescent_w": p.quiescent, "load_w": pl} for i, p, pl in res.power.value]
    else:
        power = {"error": res.power.error}
    if res.ideal.ok:
        iv = res.ideal.value
        ideal = {"vout_v": iv.vout, "target_v": iv.target, "gain": iv.gain,
                 "relative_error": iv.relative_error, "bound": iv.bound}
    else:
        ideal = {"error": res.ideal.error}
    checks = build_checks(res) if checks is None else checks
    return {
        "config": config_echo(t),
        "units": REPORT_UNITS,
        "bode": _bode_entry(res),
        "line_sweep_iload_a": 10e-3,
        "line_sweep": line,
        "dropout": dropout,
        "max_load_a": base.value if base is not None and base.ok else None,
        "max_load_diagnostic": None if base is None or base.ok else base.error,
        "max_load_by_vin": by_vin,
        "max_load_double_m_a": dbl.value if dbl.ok else None,
        "miller_ablation": ablation,
        "load_step": step,
        "ideal_amplifier": ideal,
        "power": power,
        "checks": checks,
    }


def _ablation_csv(rows: list[AblationRow]) -> str:
    lines = ["cc_f,pm_deg,fp1_hz,fu_hz"]
    for r in rows:
        vals = [r.cc, r.phase_margin_deg, r.fp1, r.unity_gain_frequency]
        lines.append(",".join("nan" if v is None else repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


def _load_tag(i: float) -> str:
    return f"{i * 1e3:g}mA".replace(".", "p")


@dataclass
class LdoReport:
    data: dict
    csv: dict[str, str]

    @property
    def checks(self) -> list[dict]:
        return self.data["checks"]

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, allow_nan=False) + "\n"

    def write(self, out_dir, formats=("json", "csv")) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if "json" in formats:
            p = out / "ldo_report.json"
            p.write_text(self.to_json(), encoding="utf-8", newline="")
            written.append(p)
        if "csv" in formats:
            for name, text in self.csv.items():
                p = out / name
                p.write_text(text, encoding="utf-8", newline="")
                written.append(p)
        return written


def emit_report(results: ExperimentResults, out_dir=None, formats=("json", "csv")) -> LdoReport:
    """Aggregate experiment outcomes into the report; write files when ``out_dir`` is given."""
    data = report_dict(results)
    csvs = {}
    if results.bode_response.ok:
        csvs["ota_bode.csv"] = ac_csv(results.bode_response.value)
    if results.ablation.ok:
        csvs["miller_ablation.csv"] = _ablation_csv(results.ablation.value)
    for i, raw in results.sweep_raw.items():
        if raw.ok:
            csvs[f"line_sweep_{_load_tag(i)}.csv"] = sweep_csv(raw.value)
    if results.load_step.ok:
        csvs["load_step.csv"] = tran_csv(results.load_step.value.wave)
    report = LdoReport(data, csvs)
    if out_dir is not None:
        report.write(out_dir, formats)
    return report


# --- bundled netlists --------------------------------------------------------

def bundled_circuits() -> dict[str, Circuit]:
    """The circuits shipped as netlists under ``ldosim/circuits``."""
    t = LdoTemplate()
    return {
        "ota.cir": build_ota(t.ota),
        "ota_closed_loop.cir": build_ota_closed_loop(t.ota),
        "ldo.cir": build_ldo(t),
        "ldo_line_sweep.cir": build_ldo(dataclasses.replace(t, iload=10e-3), analyses=(LINE_SWEEP,)),
        "ldo_load_step.cir": build_ldo(t, load_pwl=((0.0, 5e-3), (20e-6, 5e-3), (21e-6, 10e-3)),
                                       analyses=(Tran(0.1e-6, 300e-6),)),
        "ldo_ideal.cir": build_ldo(t, ideal_gain=1e6),
    }


def circuits_dir() -> Path:
    return Path(__file__).with_name("circuits")


def write_bundled_circuits(directory=None) -> list[Path]:
    from .netlist import print_netlist

    d = Path(directory) if directory is not None else circuits_dir()
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for name, c in bundled_circuits().items():
        p = d / name
        p.write_text(print_netlist(c), encoding="utf-8", newline="")
        out.append(p)
    return out
