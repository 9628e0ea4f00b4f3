"""MNA assembly and solution: dense LU and damped Newton-Raphson with homotopies."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .devices import (
    GMIN,
    MosfetEval,
    Region,
    StampContext,
    StampSet,
    SystemIndex,
    _REGIONS,
    device_beta,
    normalized_threshold,
    stamp_linear,
)
from .errors import NonConvergence, SingularMatrix
from .netlist import Capacitor, Circuit, CurrentSource, Mosfet, VoltageSource

log = logging.getLogger(__name__)

PIVOT_RTOL = 1e-13


@dataclass
class SystemMatrix:
    a: np.ndarray
    b: np.ndarray
    index: SystemIndex

    @property
    def n(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class NewtonConfig:
    reltol: float = 1e-3
    vntol: float = 1e-6
    abstol: float = 1e-12
    max_iterations: int = 100
    damping: float = 0.5
    gmin: float = GMIN
    gmin_steps: int = 10
    source_steps: int = 10

    def __post_init__(self):
        if min(self.reltol, self.vntol, self.abstol, self.damping) <= 0 or self.max_iterations < 1:
            raise ValueError("NewtonConfig tolerances must be positive and max_iterations >= 1")
        if self.gmin < 0 or self.gmin_steps < 0 or self.source_steps < 1:
            raise ValueError("invalid homotopy settings")


@dataclass
class OperatingPoint:
    node_voltages: dict[str, float]
    branch_currents: dict[str, float]
    devices: dict[str, MosfetEval]
    iterations: int
    x: np.ndarray = field(repr=False, compare=False)
    index: SystemIndex = field(repr=False, compare=False)
    gmin: float = 0.0  # node-to-ground conductance present in the solved system

    def v(self, node: str) -> float:
        node = node.lower()
        return 0.0 if node in ("0", "gnd") else self.node_voltages[node]

    def i(self, source: str) -> float:
        return self.branch_currents[source.lower()]


# --- linear algebra ----------------------------------------------------------

def lu_solve(system: SystemMatrix | np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Solve A x = b by LU with partial pivoting (largest magnitude in column).

    Rows are first scaled to unit max-norm.  Raises :class:`SingularMatrix`
    when the best available pivot is below ``1e-13 * ||A||_inf`` of the
    scaled matrix.
    """
    if isinstance(system, SystemMatrix):
        a, b, index = system.a, system.b, system.index
    else:
        a, index = system, None
    a = np.array(a, dtype=np.result_type(a, b, np.float64), copy=True)
    b = np.asarray(b, dtype=a.dtype)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or b.shape != (a.shape[0],):
        raise ValueError("lu_solve needs a square matrix and a matching vector")
    # rows mix KCL (A) and branch (V) equations: equilibrate before pivoting
    rmax = np.max(np.abs(a), axis=1, initial=0.0)
    rscale = np.where(rmax > 0, 1.0 / np.where(rmax > 0, rmax, 1.0), 1.0)
    a *= rscale[:, None]
    b = b * rscale
    tol = PIVOT_RTOL * float(np.max(np.sum(np.abs(a), axis=1), initial=0.0))
    perm, status = _kernels.lu_factor(a, tol)
    if status >= 0:
        row = _singular_row(system.a if isinstance(system, SystemMatrix) else system, status)
        raise SingularMatrix(row, index.label(row) if index is not None else None)
    return _kernels.lu_substitute(a, perm, b)


def _singular_row(a: np.ndarray, fallback: int) -> int:
    """Best guess at the offending unknown: an all-zero row/column, else the failed pivot."""
    zero_rows = np.flatnonzero(~np.any(a != 0, axis=1))
    if zero_rows.size:
        return int(zero_rows[0])
    zero_cols = np.flatnonzero(~np.any(a != 0, axis=0))
    if zero_cols.size:
        return int(zero_cols[0])
    return int(fallback)


# --- assembly ----------------------------------------------------------------

def _sum_stamps(stamps: StampSet, n: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    a = np.zeros((n, n), dtype=dtype)
    b = np.zeros(n, dtype=dtype)
    for r, c, v in stamps.matrix:
        a[r, c] += v
    for r, v in stamps.rhs:
        b[r] += v
    return a, b


class CompiledCircuit:
    """A circuit lowered to static matrices plus MOSFET parameter arrays.

    Linear element stamps are computed once; only the MOSFET stamps (and,
    in transient, capacitor history currents) change between iterations.
    """

    def __init__(self, circuit: Circuit, ic_branches: bool = False):
        self.circuit = circuit
        ic_caps = [e for e in circuit.elements if isinstance(e, Capacitor) and e.ic is not None] \
            if ic_branches else []
        self.ic_caps = ic_caps
        self.index = idx = SystemIndex(circuit, tuple(f"ic:{c.name}" for c in ic_caps))
        n = idx.size
        self.n = n
        self.n_nodes = idx.n_nodes

        static = StampSet()
        sources = []
        caps = []
        for e in circuit.elements:
            if isinstance(e, Mosfet):
                continue
            if isinstance(e, Capacitor):
                caps.append((idx.node(e.n1), idx.node(e.n2), e.value, e.name))
                continue
            if isinstance(e, VoltageSource):
                sources.append(e)
            st = stamp_linear(e, StampContext("dc", source_scale=0.0), idx)
            static.extend(StampSet(st.matrix, []))
        for c in ic_caps:
            k = idx.branch(f"ic:{c.name}")
            a, b = idx.node(c.n1), idx.node(c.n2)
            static.add(a, k, 1.0)
            static.add(b, k, -1.0)
            static.add(k, a, 1.0)
            static.add(k, b, -1.0)
        self.g_static, _ = _sum_stamps(static, n, np.float64)
        self.sources = sources
        self.ic_rhs = np.zeros(n)
        for c in ic_caps:
            self.ic_rhs[idx.branch(f"ic:{c.name}")] = c.ic
        self.has_pwl = any(s.pwl is not None for s in sources)
        self._src_cache: dict = {}

        mos = circuit.mosfets
        self.mos_names = tuple(m.name for m in mos)
        self.mos_d = np.array([idx.node(m.d) for m in mos], dtype=np.int64)
        self.mos_g = np.array([idx.node(m.g) for m in mos], dtype=np.int64)
        self.mos_s = np.array([idx.node(m.s) for m in mos], dtype=np.int64)
        cards = [circuit.models[m.model] for m in mos]
        self.mos_pol = np.array([1.0 if c.polarity == "N" else -1.0 for c in cards])
        self.mos_vto = np.array([normalized_threshold(c) for c in cards])
        self.mos_beta = np.array([device_beta(c, m.w, m.l, m.m) for c, m in zip(cards, mos)])
        self.mos_lam = np.array([c.lam for c in cards])
        for m, c in zip(mos, cards):
            if c.cgs:
                caps.append((idx.node(m.g), idx.node(m.s), c.cgs * m.m, f"{m.name}:cgs"))
            if c.cgd:
                caps.append((idx.node(m.g), idx.node(m.d), c.cgd * m.m, f"{m.name}:cgd"))
        self.cap_a = np.array([c[0] for c in caps], dtype=np.int64)
        self.cap_b = np.array([c[1] for c in caps], dtype=np.int64)
        self.cap_c = np.array([c[2] for c in caps])
        self.cap_names = tuple(c[3] for c in caps)
        cmat = StampSet()
        for a, b, cval, _ in caps:
            cmat.conductance(int(a), int(b), cval)
        self.c_matrix, _ = _sum_stamps(cmat, n, np.float64)

        self._id = np.zeros(len(mos))
        self._gm = np.zeros(len(mos))
        self._gds = np.zeros(len(mos))
        self._region = np.zeros(len(mos), dtype=np.int64)
        self._rev = np.zeros(len(mos), dtype=np.bool_)

    @property
    def nonlinear(self) -> bool:
        return len(self.mos_names) > 0

    def source_vector(self, scale: float = 1.0, time: float | None = None) -> np.ndarray:
        key = (scale, time if self.has_pwl else None)
        vec = self._src_cache.get(key)
        if vec is None:
            st = StampSet()
            ctx = StampContext("dc", time=time, source_scale=scale)
            for s in self.sources:
                st.rhs.extend(stamp_linear(s, ctx, self.index).rhs)
            _, vec = _sum_stamps(st, self.n, np.float64)
            vec += self.ic_rhs
            if len(self._src_cache) < 4096:
                self._src_cache[key] = vec
        return vec.copy()

    def ac_source_vector(self) -> np.ndarray:
        st = StampSet()
        ctx = StampContext("ac")
        for s in self.sources:
            st.rhs.extend(stamp_linear(s, ctx, self.index).rhs)
        return _sum_stamps(st, self.n, np.complex128)[1]

    def system(self, x: np.ndarray, gmin: float, scale: float = 1.0, time: float | None = None,
               cap_g: np.ndarray | None = None, cap_rhs: np.ndarray | None = None,
               device_gmin: float = GMIN) -> tuple[np.ndarray, np.ndarray]:
        """Linearised DC/transient system at iterate ``x``."""
        a = self.g_static.copy()
        if gmin:
            diag = np.arange(self.n_nodes)
            a[diag, diag] += gmin
        b = self.source_vector(scale, time)
        if cap_g is not None:
            a += cap_g
            b += cap_rhs
        if self.nonlinear:
            _kernels.stamp_mosfets(a, b, x, self.mos_d, self.mos_g, self.mos_s, self.mos_pol,
                                   self.mos_vto, self.mos_beta, self.mos_lam, device_gmin,
                                   self._id, self._gm, self._gds, self._region, self._rev)
        return a, b

    def device_evals(self) -> dict[str, MosfetEval]:
        """MOSFET states from the most recent :meth:`system` call."""
        out = {}
        for k, name in enumerate(self.mos_names):
            pol = int(self.mos_pol[k])
            out[name] = MosfetEval(_REGIONS[int(self._region[k])], float(self._id[k]),
                                   float(self._gm[k]), float(self._gds[k]), float("nan"),
                                   float("nan"), float("nan"), bool(self._rev[k]), pol)
        return out

    def device_evals_at(self, x: np.ndarray) -> dict[str, MosfetEval]:
        self.system(x, 0.0)
        out = {}
        xg = np.append(x, 0.0)
        for k, name in enumerate(self.mos_names):
            pol = self.mos_pol[k]
            vgs = pol * (xg[self.mos_g[k]] - xg[self.mos_s[k]])
            vds = pol * (xg[self.mos_d[k]] - xg[self.mos_s[k]])
            if self._rev[k]:
                vgs, vds = vgs - vds, -vds
            ids, gm, gds = float(self._id[k]), float(self._gm[k]), float(self._gds[k])
            out[name] = MosfetEval(_REGIONS[int(self._region[k])], ids, gm, gds,
                                   ids - gm * vgs - gds * vds, float(vgs), float(vds),
                                   bool(self._rev[k]), int(pol))
        return out

    def solve_linear(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return lu_solve(SystemMatrix(a, b, self.index))

    def operating_point(self, x: np.ndarray, iterations: int, gmin: float = 0.0) -> OperatingPoint:
        idx = self.index
        nodes = {name: float(x[i]) for i, name in enumerate(idx.node_names)}
        branches = {name.lower(): float(x[idx.branch(name)]) for name in idx.branch_names}
        return OperatingPoint(nodes, branches, self.device_evals_at(x), iterations, x.copy(), idx,
                              gmin if self.nonlinear else 0.0)


def assemble(circuit: Circuit, x: np.ndarray | None = None, ctx: StampContext | None = None,
             gmin: float = 0.0) -> SystemMatrix:
    """Sum every element's stamps into a dense system.

    ``x`` is the MOSFET linearisation point (zeros by default).  ``gmin`` adds
    a conductance from each node to ground (DC only).  For ``ctx.kind == "ac"``
    the system is complex and MOSFETs contribute small-signal stamps only.
    """
    from .devices import mosfet_eval, mosfet_stamp

    ctx = ctx or StampContext("dc")
    idx = SystemIndex(circuit)
    n = idx.size
    x = np.zeros(n) if x is None else np.asarray(x, dtype=float)
    st = StampSet()
    for e in circuit.elements:
        if isinstance(e, Mosfet):
            card = circuit.models[e.model]
            d, g, s = idx.node(e.d), idx.node(e.g), idx.node(e.s)
            vd, vg, vs = (x[i] if i >= 0 else 0.0 for i in (d, g, s))
            ev = mosfet_eval(card, vg - vs, vd - vs, e.w, e.l, e.m)
            st.extend(mosfet_stamp(ev, (d, g, s), ac=ctx.kind == "ac", frequency=ctx.frequency,
                                   cgs=card.cgs * e.m, cgd=card.cgd * e.m))
        else:
            st.extend(stamp_linear(e, ctx, idx))
    if gmin and ctx.kind != "ac":
        for i in range(idx.n_nodes):
            st.add(i, i, gmin)
    a, b = _sum_stamps(st, n, np.complex128 if ctx.kind == "ac" else np.float64)
    return SystemMatrix(a, b, idx)


# --- Newton-Raphson ----------------------------------------------------------

def _newton(cc: CompiledCircuit, cfg: NewtonConfig, x0: np.ndarray, gmin: float,
            scale: float = 1.0, time: float | None = None, cap_g=None, cap_rhs=None):
    """Damped Newton iteration; returns (x, iterations) or raises NonConvergence."""
    x = x0.copy()
    nn = cc.n_nodes
    worst = (None, np.inf)
    if not cc.nonlinear and gmin:
        # linear networks are solved exactly; gmin only rescues a singular matrix
        try:
            a, b = cc.system(x, 0.0, scale, time, cap_g, cap_rhs)
            return cc.solve_linear(a, b), 1
        except SingularMatrix:
            pass
    for it in range(1, cfg.max_iterations + 1):
        a, b = cc.system(x, gmin, scale, time, cap_g, cap_rhs)
        try:
            x_new = cc.solve_linear(a, b)
        except SingularMatrix as exc:
            raise NonConvergence(f"singular system at {exc.label}", node=exc.label,
                                 last_iterate=x) from exc
        if not cc.nonlinear:
            return x_new, it
        if not np.all(np.isfinite(x_new)):
            raise NonConvergence("non-finite iterate", last_iterate=x)
        dx = x_new[:nn] - x[:nn]
        resid = (a @ x - b)[:nn]
        terms = np.maximum(np.max(np.abs(a[:nn] * x), axis=1), np.abs(b[:nn]))
        kcl_ok = np.all(np.abs(resid) <= cfg.abstol + cfg.reltol * terms)
        dv_ok = np.all(np.abs(dx) <= cfg.vntol + cfg.reltol * np.maximum(np.abs(x_new[:nn]), np.abs(x[:nn])))
        if dv_ok and kcl_ok:
            # one undamped polishing step: the accepted iterate is then
            # quadratically close to the root, not just inside the tolerances
            a, b = cc.system(x_new, gmin, scale, time, cap_g, cap_rhs)
            try:
                x_pol = cc.solve_linear(a, b)
            except SingularMatrix:
                return x_new, it
            if np.all(np.isfinite(x_pol)) and np.all(np.abs(x_pol[:nn] - x_new[:nn]) <= cfg.damping):
                return x_pol, it + 1
            return x_new, it
        if nn:
            k = int(np.argmax(np.abs(resid)))
            worst = (cc.index.label(k), float(abs(resid[k])))
        x[:nn] += np.clip(dx, -cfg.damping, cfg.damping)
        x[nn:] = x_new[nn:]
    raise NonConvergence(f"no convergence in {cfg.max_iterations} iterations; "
                         f"largest residual at {worst[0]} ({worst[1]:.3g} A)",
                         node=worst[0], residual=worst[1], last_iterate=x)


def _initial(cc: CompiledCircuit, initial) -> np.ndarray:
    if initial is None:
        return np.zeros(cc.n)
    x0 = np.asarray(initial, dtype=float)
    if x0.shape != (cc.n,):
        raise ValueError(f"initial guess must have {cc.n} entries")
    return x0.copy()


def newton_solve(circuit: Circuit | CompiledCircuit, config: NewtonConfig | None = None,
                 initial: np.ndarray | None = None, *, scale: float = 1.0) -> OperatingPoint:
    """DC operating point.  Falls back to :func:`continuation_solve` on failure."""
    cfg = config or NewtonConfig()
    cc = circuit if isinstance(circuit, CompiledCircuit) else CompiledCircuit(circuit)
    x0 = _initial(cc, initial)
    try:
        x, its = _newton(cc, cfg, x0, cfg.gmin, scale)
    except NonConvergence as first:
        log.debug("plain Newton failed (%s); trying continuation", first)
        return continuation_solve(cc, cfg, scale=scale)
    return cc.operating_point(x, its, cfg.gmin)


def continuation_solve(circuit: Circuit | CompiledCircuit, config: NewtonConfig | None = None,
                       *, scale: float = 1.0) -> OperatingPoint:
    """gmin stepping from 1e-2 down to ``config.gmin``, then source stepping."""
    cfg = config or NewtonConfig()
    cc = circuit if isinstance(circuit, CompiledCircuit) else CompiledCircuit(circuit)
    total = 0
    errors = []
    try:
        x = np.zeros(cc.n)
        ladder = [10.0 ** (-2 - k) for k in range(cfg.gmin_steps + 1)]
        ladder = [g for g in ladder if g > cfg.gmin] + [cfg.gmin]
        for g in ladder:
            x, its = _newton(cc, cfg, x, g, scale)
            total += its
        return cc.operating_point(x, total, cfg.gmin)
    except NonConvergence as exc:
        errors.append(exc)
        log.debug("gmin stepping failed: %s", exc)
    try:
        x = np.zeros(cc.n)
        total = 0
        for k in range(1, cfg.source_steps + 1):
            x, its = _newton(cc, cfg, x, cfg.gmin, scale * k / cfg.source_steps)
            total += its
        return cc.operating_point(x, total, cfg.gmin)
    except NonConvergence as exc:
        errors.append(exc)
    last = errors[-1]
    node = last.node or errors[0].node
    raise NonConvergence(f"gmin and source stepping both failed ({errors[0]}; {last})",
                         node=node, residual=last.residual, last_iterate=last.last_iterate)
