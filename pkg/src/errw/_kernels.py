"""Compiled inner loops.

Everything here is plain Python over numpy arrays, compiled with numba when
it is importable. With ``NUMBA_DISABLE_JIT=1`` the same functions run
interpreted, which the test suite uses to check that both paths agree.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit as _njit

    def jit(fn):
        return _njit(cache=True, nogil=True)(fn)

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    def jit(fn):
        return fn

    HAVE_NUMBA = False


@jit
def pick_neighbor(lw, u):
    """Index chosen by one uniform ``u`` among log-weights ``lw``.

    Mirrors ``walk._pick`` operation for operation so the interpreted and
    compiled engines consume randomness identically.
    """
    n = lw.shape[0]
    mx = lw[0]
    for j in range(1, n):
        if lw[j] > mx:
            mx = lw[j]
    total = 0.0
    for j in range(n):
        total += math.exp(lw[j] - mx)
    target = u * total
    acc = 0.0
    for j in range(n):
        acc += math.exp(lw[j] - mx)
        if target < acc:
            return j
    return n - 1


@jit
def walk_kernel(indptr, nbr, edge_of, counts, logw, uniforms, row, n_steps, stop_row,
                visits, last_edge, last_switch, step0, rec):
    """Advance the walk up to ``n_steps`` steps in place.

    Returns ``(row, steps_done, prev_row, last_edge, last_switch, status)``;
    ``status`` is 0 on completion, 1 when ``stop_row`` was reached and -1 on an
    isolated vertex. ``counts`` and ``visits`` are updated in place. When
    ``rec`` has rows, step ``i`` is written to ``rec[i]`` as
    ``(from_row, to_row, edge, count_before)``.
    """
    record = rec.shape[0] > 0
    maxdeg = 0
    for r in range(indptr.shape[0] - 1):
        d = indptr[r + 1] - indptr[r]
        if d > maxdeg:
            maxdeg = d
    buf = np.empty(max(maxdeg, 1), dtype=np.float64)
    prev = -1
    for i in range(n_steps):
        a = indptr[row]
        b = indptr[row + 1]
        if b == a:
            return row, i, prev, last_edge, last_switch, -1
        deg = b - a
        for j in range(deg):
            buf[j] = logw[counts[edge_of[a + j]]]
        k = pick_neighbor(buf[:deg], uniforms[i])
        e = edge_of[a + k]
        prev = row
        row = nbr[a + k]
        if record:
            rec[i, 0] = prev
            rec[i, 1] = row
            rec[i, 2] = e
            rec[i, 3] = counts[e]
        counts[e] += 1
        visits[row] += 1
        if e != last_edge:
            last_edge = e
            last_switch = step0 + i + 1
        if row == stop_row:
            return row, i + 1, prev, last_edge, last_switch, 1
    return row, n_steps, prev, last_edge, last_switch, 0


@jit
def compensated_cumsum(terms):
    """Running sums with Neumaier compensation."""
    n = terms.shape[0]
    out = np.empty(n, dtype=np.float64)
    s = 0.0
    c = 0.0
    for i in range(n):
        x = terms[i]
        t = s + x
        if abs(s) >= abs(x):
            c += (s - t) + x
        else:
            c += (x - t) + s
        s = t
        out[i] = s + c
    return out


@jit
def compensated_reverse_cumsum(terms):
    """``out[i] = sum(terms[i:])`` accumulated from the small end."""
    n = terms.shape[0]
    out = np.empty(n, dtype=np.float64)
    s = 0.0
    c = 0.0
    for i in range(n - 1, -1, -1):
        x = terms[i]
        t = s + x
        if abs(s) >= abs(x):
            c += (s - t) + x
        else:
            c += (x - t) + s
        s = t
        out[i] = s + c
    return out


@jit
def _nadd(s, c, i, x):
    t = s[i] + x
    if abs(s[i]) >= abs(x):
        c[i] += (s[i] - t) + x
    else:
        c[i] += (x - t) + s[i]
    s[i] = t


@jit
def eps_drift(lp, lm, rp, rm):
    """``p+ / W+ - p- / W-`` from log-weights and reciprocals of the two edges."""
    mx = lp if lp > lm else lm
    ep = math.exp(lp - mx)
    em = math.exp(lm - mx)
    tot = ep + em
    return ep / tot * rp - em / tot * rm


@jit
def cycle_diag_batch(ell, frm, to, cb, recip, wstar, logw, zs, zc, es, ec, ks, kc, plus,
                     dmin, dmax, res, check_every, step0):
    """Cycle accumulators over a batch of steps on Z/ell.

    ``plus[x]`` is the count of edge {x, x+1}. ``res`` holds running maxima
    ``(eq9, eq10, |kappa - closed form|, |eps drift|)``; ``dmin``/``dmax``
    track the per-vertex range of ``kappa - closed form``. The drift is
    evaluated at the state before each step.
    """
    for i in range(frm.shape[0]):
        x = frm[i]
        y = to[i]
        xm = (x + ell - 1) % ell
        dr = abs(eps_drift(logw[plus[x]], logw[plus[xm]], recip[plus[x]], recip[plus[xm]]))
        if dr > res[3]:
            res[3] = dr
        om = recip[cb[i]]
        if y == (x + 1) % ell:
            _nadd(zs, zc, x, om)
            _nadd(es, ec, x, om)
            _nadd(ks, kc, x, om)
            _nadd(ks, kc, y, -om)
            plus[x] += 1
        else:
            _nadd(zs, zc, y, -om)
            _nadd(es, ec, x, -om)
            _nadd(ks, kc, x, -om)
            _nadd(ks, kc, y, om)
            plus[y] += 1
        for v in (x, y):
            vm = (v + ell - 1) % ell
            kv = ks[v] + kc[v]
            r9 = abs(kv - 2.0 * (es[v] + ec[v]) + (zs[v] + zc[v]) + (zs[vm] + zc[vm]))
            if r9 > res[0]:
                res[0] = r9
            diff = kv - (wstar[plus[v] - 1] - wstar[plus[vm] - 1])
            if diff < dmin[v]:
                dmin[v] = diff
            if diff > dmax[v]:
                dmax[v] = diff
            if abs(diff) > res[2]:
                res[2] = abs(diff)
        if (step0 + i + 1) % check_every == 0:
            s = 0.0
            c = 0.0
            for v in range(ell):
                for term in (zs[v], zc[v], -es[v], -ec[v]):
                    t = s + term
                    if abs(s) >= abs(term):
                        c += (s - t) + term
                    else:
                        c += (term - t) + s
                    s = t
            r10 = abs(s + c)
            if r10 > res[1]:
                res[1] = r10
