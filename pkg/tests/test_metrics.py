import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ldosim.analyses import AcResponse, run_op
from ldosim.devices import mosfet_eval
from ldosim.engine import newton_solve
from ldosim.errors import AlwaysRegulated, NeverRegulated, NonConvergence, NoUnityCrossing, RegulatedAtUpperBound
from ldosim.ldobench import LdoTemplate, build_ldo, build_ota, experiment_line_sweep
from ldosim.metrics import (
    DB_3,
    bode_metrics,
    dropout_from_curve,
    element_dissipation,
    line_regulation,
    max_load_current,
    power_dissipated,
    regulated,
    require_phase_margin,
    source_power,
)
from ldosim.netlist import Ac, parse_netlist

from oracles import random_network, to_circuit


def synthetic(h, ac=Ac(20, 0.1, 100e6)):
    f = ac.frequencies()
    return AcResponse(f, h(2j * np.pi * f), bias=None)


def test_one_pole_reference_numbers():
    m = bode_metrics(synthetic(lambda s: 11220 / (1 + s / (2 * np.pi * 440))))
    assert m.dc_gain_db == pytest.approx(81.0, abs=0.01)
    assert m.f3db == pytest.approx(440, rel=0.01)
    assert m.gbw == pytest.approx(4.94e6, rel=0.01)
    assert m.dc_gain == pytest.approx(11220, rel=1e-3)
    assert m.phase_margin_deg == pytest.approx(90.0, abs=0.5)
    assert m.absent == ()


def test_flat_response_has_no_unity_crossing():
    m = bode_metrics(synthetic(lambda s: np.ones_like(s)))
    assert m.dc_gain_db == pytest.approx(0.0, abs=1e-12)
    assert m.phase_margin_deg is None and m.unity_gain_frequency is None
    assert "NoUnityCrossing" in m.absent and "f3db" in m.absent
    with pytest.raises(NoUnityCrossing):
        require_phase_margin(m)


def test_two_pole_phase_margin():
    a0, p1 = 1e4, 100.0
    fu_guess = a0 * p1
    p2 = 10 * fu_guess

    def h(s):
        return a0 / ((1 + s / (2 * np.pi * p1)) * (1 + s / (2 * np.pi * p2)))

    m = bode_metrics(synthetic(h, Ac(200, 0.1, 1e9)))
    # exact unity crossing from |H|^2 = 1, a quadratic in f^2
    a, b, c = 1 / (p1 * p2) ** 2, 1 / p1 ** 2 + 1 / p2 ** 2, 1 - a0 ** 2
    fu = math.sqrt((-b + math.sqrt(b * b - 4 * a * c)) / (2 * a))
    expected = 180 - math.degrees(math.atan(fu / p1) + math.atan(fu / p2))
    assert m.unity_gain_frequency == pytest.approx(fu, rel=1e-3)
    assert m.phase_margin_deg == pytest.approx(expected, abs=0.05)
    assert m.phase_margin_deg == pytest.approx(84.3, abs=0.2)


@given(st.floats(10, 1e6), st.floats(1, 1e6))
def test_one_pole_recovery(gain, pole):
    m = bode_metrics(synthetic(lambda s: gain / (1 + s / (2 * np.pi * pole)), Ac(20, 0.01, 1e13)))
    assert m.dc_gain == pytest.approx(gain, rel=0.01)
    assert m.f3db == pytest.approx(pole, rel=0.01)
    assert m.gbw == pytest.approx(gain * pole, rel=0.01)


def test_db3_constant():
    assert DB_3 == pytest.approx(3.0103, abs=1e-4)


def knee_curve():
    vin = np.round(np.arange(5.0, 0.95, -0.05), 10)
    vout = np.where(vin >= 2.6, 2.0, vin - 0.6)
    return vin, vout


def test_dropout_knee_curve():
    vin, vout = knee_curve()
    assert dropout_from_curve(vin, vout, 2.0) == pytest.approx(0.6, abs=1e-9)


def test_always_and_never_regulated():
    vin = np.linspace(1, 5, 9)
    with pytest.raises(AlwaysRegulated):
        dropout_from_curve(vin, np.full(9, 2.0), 2.0)
    with pytest.raises(NeverRegulated):
        dropout_from_curve(vin, np.zeros(9), 2.0)


@given(st.floats(0.1, 1.0), st.floats(1.0, 3.0), st.booleans())
def test_dropout_direction_invariant(drop, target, reverse):
    vin = np.linspace(0.5, 6.0, 111)
    vout = np.minimum(target, np.maximum(vin - drop, 0))
    if vin[0] - drop >= 0.98 * target:
        return
    a = dropout_from_curve(vin, vout, target)
    b = dropout_from_curve(vin[::-1], vout[::-1], target)
    assert a == b
    # interpolation is exact unless the crossing interval straddles the kink
    assert a == pytest.approx(drop, abs=vin[1] - vin[0])


def test_regulated_threshold():
    assert regulated(1.961, 2.0, 0.02) and not regulated(1.959, 2.0, 0.02)
    assert not regulated(float("nan"), 2.0, 0.02)


def test_ldo_dropout_at_5ma():
    _, d = experiment_line_sweep(LdoTemplate(iload=5e-3))
    assert d == pytest.approx(0.3, abs=0.05)


def test_line_regulation_small():
    sweep, _ = experiment_line_sweep(LdoTemplate(iload=5e-3))
    slope = line_regulation(sweep.values, sweep.voltage("out"), 2.0)
    assert abs(slope) < 1e-2


def clipping_solve(c, seed):
    """Ideal amplifier whose output cannot go below ground."""
    op = newton_solve(c, None, seed)
    if op.v("gate") < 0:
        raise NonConvergence("amplifier output below ground rail", node="V(gate)")
    return op


def test_max_load_square_law_oracle():
    t = LdoTemplate(pass_w=10e-6, pass_m=1, vin=3.0)
    res = max_load_current(lambda i: build_ldo(dataclasses.replace(t, iload=i), ideal_gain=1e6), t.target,
                           upper=0.05, resolution=1e-6, solve=clipping_solve)
    pch = t.ota.models()["pch"]
    ev = mosfet_eval(pch, -t.vin, -(t.vin - t.target), t.pass_w, t.pass_l, 1)
    expected = ev.id - t.target / (t.r1 + t.r2)
    assert res.max_load == pytest.approx(expected, abs=1e-4)
    assert res.max_load == pytest.approx(expected, abs=5e-6)


def test_regulated_at_upper_bound():
    t = LdoTemplate(vin=5.0)
    with pytest.raises(RegulatedAtUpperBound):
        max_load_current(lambda i: build_ldo(dataclasses.replace(t, iload=i)), t.target, upper=5e-3)


def test_bisection_properties():
    t = LdoTemplate(vin=3.3)

    def make(i):
        return build_ldo(dataclasses.replace(t, iload=i))

    res = max_load_current(make, t.target)
    widths = [hi - lo for lo, hi in res.brackets]
    assert all(b < a for a, b in zip(widths, widths[1:]))
    assert res.upper - res.lower <= 1e-4
    assert regulated(run_op(make(res.max_load)).v("out"), t.target, 0.02)
    assert not regulated(run_op(make(res.max_load + 1e-4)).v("out"), t.target, 0.02)


def test_divider_power():
    c = parse_netlist("V1 in 0 5\nR1 in out 2k\nR2 out 0 3k\n")
    assert power_dissipated(run_op(c), c).total == pytest.approx(5e-3, rel=1e-12)


def test_zero_source_power():
    c = parse_netlist("V1 in 0 0\nR1 in 0 1k\n")
    assert power_dissipated(run_op(c), c).total == 0.0


def test_ldo_power_split():
    t = LdoTemplate(vin=2.6, iload=10e-3)
    c = build_ldo(t)
    op = run_op(c)
    p = power_dissipated(op, c, "MPASS")
    ipass = op.devices["MPASS"].id
    assert p.pass_network == pytest.approx((2.6 - op.v("out")) * ipass, rel=1e-12)
    assert p.pass_network == pytest.approx(6e-3, rel=0.05)
    assert 0 < p.quiescent < 1e-3
    # input power splits into pass loss, quiescent draw and power leaving through the output
    assert p.total == pytest.approx(p.pass_network + p.quiescent + op.v("out") * ipass
                                    + source_power(op, c)["VREF"], rel=1e-9)


def _tellegen(c):
    op = run_op(c)
    delivered = sum(source_power(op, c).values())
    absorbed = sum(element_dissipation(op, c).values())
    return delivered, absorbed


@given(st.integers(0, 2**32 - 1))
def test_tellegen_random_networks(seed):
    n, branches = random_network(np.random.default_rng(seed))
    delivered, absorbed = _tellegen(to_circuit(n, branches))
    assert delivered == pytest.approx(absorbed, rel=1e-9, abs=1e-15)


@pytest.mark.parametrize("make", [build_ota, build_ldo])
def test_tellegen_transistor_circuits(make):
    delivered, absorbed = _tellegen(make())
    assert delivered == pytest.approx(absorbed, rel=1e-9)
