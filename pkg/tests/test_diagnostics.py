from __future__ import annotations

import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errw.diagnostics import (BACKTRACK, CYCLE_LEFT, CYCLE_RIGHT, INCOMPLETE, ODD_CYCLE, SINGLE_EDGE, UNDECIDED,
                              CycleDiag, ExcursionLedger, classify_attraction, empirical_cycle_probs,
                              eps_zero_drift, summarize_path, wilson_interval)
from errw.errors import NotACycle, WindowTooShort
from errw.graphs import CycleZmodL, canonical_edge, parse_graph
from errw.walk import StepRecord, init_state, run
from errw.weights import Power, SellkeOscillating, delta_n, parse_weight


def feed(observers, state, path):
    """Drive observers along an explicit vertex path, as the engine would."""
    assert path[0] == state.current_vertex
    for a, b in zip(path, path[1:]):
        e = canonical_edge(a, b)
        c = state.count(e)
        state.step += 1
        rec = StepRecord(state.step, a, b, e, c)
        state.edge_counts[e] = c + 1
        state.current_vertex = b
        for ob in observers:
            ob.on_step(state, rec)


def exact_excursion_law(g, w, counts, cap):
    """Probabilities of (right, left, backtrack, incomplete) from vertex 0 by enumerating every path."""
    ell = g.length
    out = {CYCLE_RIGHT: Fraction(0), CYCLE_LEFT: Fraction(0), BACKTRACK: Fraction(0), INCOMPLETE: Fraction(0)}

    def W(k):
        return Fraction(w(k)).limit_denominator(10**12) if not float(w(k)).is_integer() else Fraction(int(w(k)))

    def go(v, cnt, depth, depart, p):
        if depth == cap:
            out[INCOMPLETE] += p
            return
        nb = g.neighbors(v)
        ws = [W(cnt[canonical_edge(v, u)]) for u in nb]
        tot = sum(ws)
        for u, wu in zip(nb, ws):
            q = p * wu / tot
            c2 = dict(cnt)
            c2[canonical_edge(v, u)] += 1
            d = u if depart is None else depart
            if u == 0:
                if d == 1 and v == ell - 1:
                    out[CYCLE_RIGHT] += q
                elif d == ell - 1 and v == 1:
                    out[CYCLE_LEFT] += q
                else:
                    out[BACKTRACK] += q
            else:
                go(u, c2, depth + 1, d, q)

    go(0, dict(counts), 0, None, Fraction(1))
    return {k: float(v) for k, v in out.items()}


# cycle identities ----------------------------------------------------------

def test_hand_example_triangle():
    g, w = parse_graph("cycle:3"), Power(2)
    s = init_state(g, w, 0)
    d = CycleDiag(s, g, w)
    feed([d], s, [0, 1, 0])
    assert d.zeta.tolist() == [0.75, 0.0, 0.0]
    assert d.eps.tolist() == [1.0, -0.25, 0.0]
    assert d.kappa.tolist() == [1.25, -1.25, 0.0]
    assert 2 * d.eps[0] - d.zeta[0] - d.zeta[2] == 1.25
    assert d.kappa_closed_form().tolist() == [1.25, -1.25, 0.0]
    assert d.residuals().ok()


def test_step_zero_residuals_are_zero():
    g, w = parse_graph("cycle:5"), Power(1.5)
    d = CycleDiag(init_state(g, w, 0), g, w)
    r = d.residuals()
    assert (r.eq9_max_abs, r.eq10_abs, r.kappa_closed_form_max_abs, r.eps_drift_max_abs) == (0, 0, 0, 0)


@pytest.mark.parametrize("gspec,wspec,n", [("cycle:3", "power:1.5", 100_000), ("cycle:5", "exp:2", 10_000),
                                           ("cycle:7", "sellke:1", 20_000), ("cycle:4", "power:1", 20_000)])
def test_identities_along_runs(gspec, wspec, n):
    g, w = parse_graph(gspec), parse_weight(wspec)
    s = init_state(g, w, 0, seed=31)
    d = CycleDiag(s, g, w)
    run(s, g, w, n, [d])
    assert d.residuals().ok()
    assert np.allclose(d.kappa, d.kappa_closed_form(), atol=1e-9)


def test_constant_offset_mode():
    g, w = parse_graph("cycle:5"), Power(1.5)
    s = init_state(g, w, 0, overrides={(0, 1): 4, (2, 3): 2}, seed=8)
    d = CycleDiag(s, g, w)
    assert not d.exact_mode
    run(s, g, w, 20_000, [d])
    res = d.residuals()
    assert res.ok()
    offset = d.kappa - d.kappa_closed_form()
    # the offset is the closed form at time 0, negated
    s0 = init_state(g, w, 0, overrides={(0, 1): 4, (2, 3): 2})
    assert np.allclose(offset, -CycleDiag(s0, g, w).kappa_closed_form(), atol=1e-9)


def test_step_and_batch_paths_agree():
    g, w = parse_graph("cycle:5"), Power(1.5)
    out = []
    for backend in ("reference", "compiled"):
        s = init_state(g, w, 0, seed=19)
        d = CycleDiag(s, g, w)
        run(s, g, w, 30_000, [d], backend=backend)
        out.append((d.zeta.tolist(), d.eps.tolist(), d.kappa.tolist(), d.res.tolist()))
    assert out[0] == out[1]


def test_cycle_diag_rejects_other_graphs():
    with pytest.raises(NotACycle):
        CycleDiag(init_state(parse_graph("k4"), Power(2), 0), parse_graph("k4"), Power(2))


@settings(max_examples=30)
@given(st.integers(3, 8), st.lists(st.integers(0, 1), min_size=1, max_size=200), st.integers(1, 4))
def test_identities_hold_on_arbitrary_paths(ell, moves, x0):
    g, w = CycleZmodL(ell), SellkeOscillating(0.5)
    s = init_state(g, w, 0, initial_default=x0)
    d = CycleDiag(s, g, w)
    path = [0]
    for m in moves:
        path.append((path[-1] + (1 if m else -1)) % ell)
    feed([d], s, path)
    assert d.residuals().ok()


def test_snapshots(tmp_path):
    g, w = parse_graph("cycle:3"), Power(2)
    s = init_state(g, w, 0, seed=2)
    d = CycleDiag(s, g, w, snapshot_every=100)
    run(s, g, w, 1000, [d])
    assert [snap["step"] for snap in d.snapshots] == list(range(100, 1001, 100))
    for snap in d.snapshots:
        assert abs(math.fsum(snap["lambda"]) - 1) < 1e-12
        assert all(0 < x < 1 for x in snap["lambda"])
    p = tmp_path / "snaps.json"
    d.write_snapshots(p)
    assert json.loads(p.read_text())[0]["step"] == 100


# eps drift -------------------------------------------------------------------

def test_eps_drift_rational():
    p_up, p_dn = Fraction(49, 58), Fraction(9, 58)
    assert p_up * Fraction(1, 49) - p_dn * Fraction(1, 9) == 0
    g, w = parse_graph("cycle:5"), Power(2)
    s = init_state(g, w, 0, overrides={(0, 1): 7, (0, 4): 3})
    assert abs(eps_zero_drift(s, g, w, 0)) < 1e-12


@given(st.integers(1, 600), st.integers(1, 600), st.sampled_from(["power:1", "power:2.5", "exp:2", "sellke:1"]))
def test_eps_drift_vanishes(a, b, wspec):
    g, w = parse_graph("cycle:5"), parse_weight(wspec)
    s = init_state(g, w, 0, overrides={(0, 1): a, (0, 4): b})
    assert abs(eps_zero_drift(s, g, w)) < 1e-12


def test_eps_drift_guards():
    g, w = parse_graph("cycle:5"), Power(2)
    with pytest.raises(ValueError):
        eps_zero_drift(init_state(g, w, 0), g, w, x=2)
    with pytest.raises(NotACycle):
        eps_zero_drift(init_state(parse_graph("path:3"), w, 0), parse_graph("path:3"), w)


# excursions ----------------------------------------------------------------

def test_cycle_right_excursion():
    g, w = parse_graph("cycle:5"), Power(2)
    s = init_state(g, w, 0)
    led = ExcursionLedger(s, g, w)
    feed([led], s, [0, 1, 2, 3, 4, 0])
    (ex,) = led.closed
    assert ex.kind == CYCLE_RIGHT and ex.span == (0, 5)
    # each zeta(x) gained exactly 1/W(1); u removes that
    assert ex.u == [0.0] * 5
    assert ex.u_ok and ex.v_ok


def test_cycle_left_excursion():
    g, w = parse_graph("cycle:3"), Power(2)
    s = init_state(g, w, 0, overrides={(0, 2): 2})
    led = ExcursionLedger(s, g, w)
    feed([led], s, [0, 2, 1, 0])
    assert led.closed[0].kind == CYCLE_LEFT
    assert led.closed[0].u == [0.0, 0.0, 0.0]


def test_backtrack_excursion():
    g, w = parse_graph("cycle:5"), Power(2)
    s = init_state(g, w, 0, overrides={(0, 1): 3})
    led = ExcursionLedger(s, g, w)
    feed([led], s, [0, 1, 0])
    (ex,) = led.closed
    assert ex.kind == BACKTRACK
    assert ex.u[0] == pytest.approx(1 / 9 - 1 / 16, rel=1e-15)
    assert ex.delta_span[0] == pytest.approx(delta_n(w, 3).value - delta_n(w, 5).value, rel=1e-15)
    assert abs(ex.u[0]) <= ex.delta_span[0]


def test_incomplete_and_visit_times():
    g, w = parse_graph("cycle:5"), Power(2)
    s = init_state(g, w, 0)
    led = ExcursionLedger(s, g, w)
    feed([led], s, [0, 4, 0, 1, 2])
    led.finish()
    assert [e.kind for e in led.excursions] == [BACKTRACK, INCOMPLETE]
    assert led.visit_times == [0, 2]
    assert led.closed == led.excursions[:1]


def test_ledger_waits_for_m():
    g, w = parse_graph("cycle:3"), Power(2)
    s = init_state(g, w, 0, seed=1)
    run(s, g, w, 10)
    led = ExcursionLedger(s, g, w, m=50)
    feed([led], s, [s.current_vertex] + [(s.current_vertex + i) % 3 for i in range(1, 100)])
    assert led.visit_times and led.visit_times[0] >= 50


@settings(max_examples=30)
@given(st.integers(3, 7), st.lists(st.integers(0, 1), min_size=1, max_size=300),
       st.sampled_from(["power:1.5", "power:1", "sellke:1", "exp:1.5"]))
def test_excursion_bounds_on_arbitrary_paths(ell, moves, wspec):
    g, w = CycleZmodL(ell), parse_weight(wspec)
    s = init_state(g, w, 0)
    led = ExcursionLedger(s, g, w)
    path = [0]
    for m in moves:
        path.append((path[-1] + (1 if m else -1)) % ell)
    feed([led], s, path)
    assert led.violations() == 0
    for ex in led.closed:
        assert abs(math.fsum(ex.lam) - 1) < 1e-12
        assert all(0 < x < 1 for x in ex.lam)


def test_excursion_bounds_along_run():
    g, w = parse_graph("cycle:3"), Power(1.5)
    s = init_state(g, w, 0, seed=101)
    led = ExcursionLedger(s, g, w)
    run(s, g, w, 20_000, [led])
    assert len(led.closed) > 50
    assert led.violations() == 0


# empirical cycle probabilities ---------------------------------------------

@pytest.mark.parametrize("counts", [{(0, 1): 1, (1, 2): 1, (0, 2): 1}, {(0, 1): 3, (1, 2): 1, (0, 2): 2}])
def test_cycle_probs_match_enumeration(counts):
    g, w = parse_graph("cycle:3"), Power(1.5)
    cap = 6
    law = exact_excursion_law(g, w, counts, cap)
    s = init_state(g, w, 0, overrides=counts)
    n = 3000
    est = empirical_cycle_probs(s, g, w, n, seed=4, cap=cap)
    got = {CYCLE_RIGHT: est.right, CYCLE_LEFT: est.left, BACKTRACK: est.backtrack, INCOMPLETE: est.incomplete}
    for k, p in law.items():
        sd = math.sqrt(n * p * (1 - p)) if 0 < p < 1 else 0
        assert abs(got[k] - n * p) <= 4 * sd + 1e-9, (k, got[k], n * p)


def test_cycle_probs_symmetric_state():
    g, w = parse_graph("cycle:5"), Power(2)
    est = empirical_cycle_probs(init_state(g, w, 0), g, w, 2000, seed=9, cap=10_000)
    d = est.to_dict()
    assert d["q_left"]["ci"][0] <= est.q_right <= d["q_left"]["ci"][1] or \
        d["q_right"]["ci"][0] <= est.q_left <= d["q_right"]["ci"][1]


def test_cycle_probs_guards():
    g, w = parse_graph("cycle:3"), Power(2)
    with pytest.raises(ValueError):
        empirical_cycle_probs(init_state(g, w, 0), g, w, 0)
    with pytest.raises(ValueError):
        empirical_cycle_probs(init_state(g, w, 1), g, w, 200)


def test_wilson_interval():
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    assert wilson_interval(0, 10)[0] == 0.0
    assert wilson_interval(10, 10)[1] == 1.0
    assert wilson_interval(0, 0) == (0.0, 1.0)


# classification ------------------------------------------------------------

def test_classify_single_edge():
    path = [0, 1, 2, 0] * 50 + [0, 1] * 200
    path = [v for i, v in enumerate(path) if i == 0 or v != path[i - 1]]
    r = classify_attraction(summarize_path(path, 0.5), 0.5)
    assert r.outcome == SINGLE_EDGE and r.edge == (0, 1)


def test_classify_odd_cycle():
    path = [0, 1, 2] * 200 + [0]
    r = classify_attraction(summarize_path(path), min_count=50)
    assert r.outcome == ODD_CYCLE and r.cycle == (0, 1, 2)


def test_classify_undecided():
    path = ([0, 1] * 100 + [0, 2] * 100) * 3 + [0]
    assert classify_attraction(summarize_path(path)).outcome == UNDECIDED
    # an even cycle in the window is never an OddCycle
    square = [0, 1, 2, 3] * 200 + [0]
    assert classify_attraction(summarize_path(square), min_count=50).outcome == UNDECIDED


def test_classify_guards():
    with pytest.raises(WindowTooShort):
        classify_attraction(summarize_path([0, 1] * 20))
    s = summarize_path([0, 1] * 400, 0.5)
    with pytest.raises(ValueError):
        classify_attraction(s, 0.25)


def test_classify_real_run():
    g, w = parse_graph("triangle"), Power(2)
    s = init_state(g, w, 0, seed=13)
    r = classify_attraction(run(s, g, w, 50_000, window_fraction=0.5))
    assert r.outcome == SINGLE_EDGE
    assert r.last_switch <= 25_000
