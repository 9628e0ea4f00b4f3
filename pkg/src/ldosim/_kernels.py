"""Hot numeric kernels: square-law MOSFET evaluation/stamping and dense LU.

Every kernel exists twice: a loop form compiled with ``numba.njit`` and a
vectorised pure-numpy form.  The loop form is used when numba imports and the
environment variable ``LDOSIM_DISABLE_NUMBA`` is unset (or ``0``); otherwise
the numpy form is used.  Both are always importable so the benchmark and the
tests can compare them directly.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("LDOSIM_DISABLE_NUMBA", "").strip().lower() in ("", "0", "false", "no")

CUTOFF, TRIODE, SATURATION = 0, 1, 2


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# --- square law --------------------------------------------------------------

def _square_law_py(vgs, vds, vto, beta, lam, gmin):
    """Normalised forward-mode (vds >= 0) Level-1 equations.

    Returns (region, id, gm, gds) with gds floored at gmin.
    """
    vov = vgs - vto
    if vov <= 0.0:
        return CUTOFF, 0.0, 0.0, gmin
    clm = 1.0 + lam * vds
    if vds < vov:
        core = vov * vds - 0.5 * vds * vds
        ids = beta * core * clm
        gm = beta * vds * clm
        gds = beta * (vov - vds) * clm + beta * core * lam
        region = TRIODE
    else:
        core = 0.5 * vov * vov
        ids = beta * core * clm
        gm = beta * vov * clm
        gds = beta * core * lam
        region = SATURATION
    if gds < gmin:
        gds = gmin
    return region, ids, gm, gds


square_law = _njit(_square_law_py)


def _stamp_mosfets_loop(a, b, x, d, g, s, pol, vto, beta, lam, gmin,
                        out_id, out_gm, out_gds, out_region, out_rev):
    """Evaluate every MOSFET at iterate ``x`` and add its Newton stamps to (a, b)."""
    for k in range(d.shape[0]):
        p = pol[k]
        vd = x[d[k]] if d[k] >= 0 else 0.0
        vg = x[g[k]] if g[k] >= 0 else 0.0
        vs = x[s[k]] if s[k] >= 0 else 0.0
        vgs = p * (vg - vs)
        vds = p * (vd - vs)
        nd = d[k]
        ns = s[k]
        rev = vds < 0.0
        if rev:
            vgs = vgs - vds
            vds = -vds
            nd = s[k]
            ns = d[k]
        region, ids, gm, gds = square_law(vgs, vds, vto[k], beta[k], lam[k], gmin)
        out_id[k] = ids
        out_gm[k] = gm
        out_gds[k] = gds
        out_region[k] = region
        out_rev[k] = rev
        ieq = p * (ids - gm * vgs - gds * vds)
        ng = g[k]
        # channel current nd -> ns = ieq + gm*(Vg - Vns) + gds*(Vnd - Vns)
        if nd >= 0:
            a[nd, nd] += gds
            if ng >= 0:
                a[nd, ng] += gm
            if ns >= 0:
                a[nd, ns] -= gds + gm
            b[nd] -= ieq
        if ns >= 0:
            a[ns, ns] += gds + gm
            if ng >= 0:
                a[ns, ng] -= gm
            if nd >= 0:
                a[ns, nd] -= gds
            b[ns] += ieq


stamp_mosfets_jit = _njit(_stamp_mosfets_loop) if HAVE_NUMBA else None


def _square_law_vec(vgs, vds, vto, beta, lam, gmin):
    vov = vgs - vto
    clm = 1.0 + lam * vds
    on = vov > 0.0
    tri = on & (vds < vov)
    sat = on & ~tri
    core = np.where(tri, vov * vds - 0.5 * vds * vds, 0.5 * vov * vov)
    ids = np.where(on, beta * core * clm, 0.0)
    gm = np.where(tri, beta * vds * clm, np.where(sat, beta * vov * clm, 0.0))
    gds = np.where(tri, beta * (vov - vds) * clm + beta * core * lam,
                   np.where(sat, beta * core * lam, 0.0))
    gds = np.maximum(gds, gmin)
    region = np.where(tri, TRIODE, np.where(sat, SATURATION, CUTOFF))
    return region, ids, gm, gds


def stamp_mosfets_numpy(a, b, x, d, g, s, pol, vto, beta, lam, gmin,
                        out_id, out_gm, out_gds, out_region, out_rev):
    """Vectorised twin of the compiled loop kernel."""
    if d.shape[0] == 0:
        return
    xg = np.append(x, 0.0)  # index -1 reads the trailing ground entry
    vgs = pol * (xg[g] - xg[s])
    vds = pol * (xg[d] - xg[s])
    rev = vds < 0.0
    vgs = np.where(rev, vgs - vds, vgs)
    vds = np.abs(vds)
    nd = np.where(rev, s, d)
    ns = np.where(rev, d, s)
    region, ids, gm, gds = _square_law_vec(vgs, vds, vto, beta, lam, gmin)
    out_id[:] = ids
    out_gm[:] = gm
    out_gds[:] = gds
    out_region[:] = region
    out_rev[:] = rev
    ieq = pol * (ids - gm * vgs - gds * vds)
    n = a.shape[0]
    # scatter into a padded matrix so ground rows/cols land in a discarded slot
    pad = np.zeros((n + 1, n + 1), dtype=a.dtype)
    rhs = np.zeros(n + 1, dtype=b.dtype)
    rows = np.concatenate([nd, nd, nd, ns, ns, ns])
    cols = np.concatenate([nd, g, ns, ns, g, nd])
    vals = np.concatenate([gds, gm, -(gds + gm), gds + gm, -gm, -gds])
    np.add.at(pad, (rows, cols), vals)
    np.add.at(rhs, np.concatenate([nd, ns]), np.concatenate([-ieq, ieq]))
    a += pad[:n, :n]
    b += rhs[:n]


# --- dense LU with partial pivoting -----------------------------------------

def _lu_factor_loop(a, tol):
    """In-place Doolittle LU of ``a`` with row pivoting.

    Returns (perm, status); status is -1 on success or the column whose best
    pivot magnitude was <= tol.
    """
    n = a.shape[0]
    perm = np.arange(n)
    for k in range(n):
        p = k
        amax = abs(a[k, k])
        for i in range(k + 1, n):
            v = abs(a[i, k])
            if v > amax:
                amax = v
                p = i
        if amax <= tol:
            return perm, k
        if p != k:
            for j in range(n):
                tmp = a[k, j]
                a[k, j] = a[p, j]
                a[p, j] = tmp
            t = perm[k]
            perm[k] = perm[p]
            perm[p] = t
        piv = a[k, k]
        for i in range(k + 1, n):
            f = a[i, k] / piv
            a[i, k] = f
            if f != 0:
                for j in range(k + 1, n):
                    a[i, j] -= f * a[k, j]
    return perm, -1


def _lu_substitute_loop(lu, perm, b):
    n = lu.shape[0]
    y = np.empty(n, dtype=lu.dtype)
    for i in range(n):
        acc = b[perm[i]]
        for j in range(i):
            acc -= lu[i, j] * y[j]
        y[i] = acc
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for j in range(i + 1, n):
            acc -= lu[i, j] * y[j]
        y[i] = acc / lu[i, i]
    return y


lu_factor_jit = _njit(_lu_factor_loop) if HAVE_NUMBA else None
lu_substitute_jit = _njit(_lu_substitute_loop) if HAVE_NUMBA else None


def lu_factor_numpy(a, tol):
    n = a.shape[0]
    perm = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) <= tol:
            return perm, k
        if p != k:
            a[[k, p]] = a[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        a[k + 1:, k] /= a[k, k]
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    return perm, -1


def lu_substitute_numpy(lu, perm, b):
    n = lu.shape[0]
    y = np.array(b, dtype=lu.dtype)[perm]
    for i in range(1, n):
        y[i] -= lu[i, :i] @ y[:i]
    for i in range(n - 1, -1, -1):
        y[i] = (y[i] - lu[i, i + 1:] @ y[i + 1:]) / lu[i, i]
    return y


if USE_NUMBA:
    stamp_mosfets = stamp_mosfets_jit
    lu_factor = lu_factor_jit
    lu_substitute = lu_substitute_jit
else:
    stamp_mosfets = stamp_mosfets_numpy
    lu_factor = lu_factor_numpy
    lu_substitute = lu_substitute_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
