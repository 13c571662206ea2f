"""Runtime instrumentation on cycles and attraction classification.

On ``Z/ell`` write ``e_x = {x, x+1}`` and ``w = 1/W(count before the step)``.
A step ``x -> x+1`` adds ``w`` to ``zeta(x)`` and ``eps(x)``; a step
``x+1 -> x`` subtracts ``w`` from ``zeta(x)`` and from ``eps(x+1)``. So
``zeta(x)`` is the signed reciprocal-weight flow across ``e_x`` and
``eps(x)`` the signed flow out of ``x``. ``kappa(x)`` gains ``w`` whenever
``e_x`` is crossed and loses ``w`` whenever ``e_{x-1}`` is crossed, which
makes it ``W*(X^{e_x} - 1) - W*(X^{e_{x-1}} - 1)`` when every count starts
at 1. Two identities hold along every trajectory:

* ``kappa(x) = 2 eps(x) - zeta(x) - zeta(x-1)``
* ``sum_x (zeta(x) - eps(x)) = 0``

``CycleDiag`` keeps all three with compensated sums and tracks the worst
residual. With other initial counts the closed form holds up to a
per-vertex constant, so the drift of the difference is reported instead.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import NotACycle, WindowTooShort
from .graphs import CycleZmodL, EdgeId, GraphProvider, canonical_edge
from .walk import RunSummary, StepBatch, StepRecord, UniformStream, WalkState, run, step, transition_distribution
from .weights import DEFAULT_POLICY, DeltaLookup, TruncationPolicy, WeightFunction

IDENTITY_TOL = 1e-9
DRIFT_TOL = 1e-12


def _require_cycle(g: GraphProvider) -> int:
    if not isinstance(g, CycleZmodL):
        raise NotACycle(f"cycle instrumentation needs a CycleZmodL provider, got {g.name}")
    return g.length


def _nadd(s: np.ndarray, c: np.ndarray, i: int, x: float) -> None:
    # same operations as _kernels._nadd
    si = float(s[i])
    t = si + x
    if abs(si) >= abs(x):
        c[i] += (si - t) + x
    else:
        c[i] += (x - t) + si
    s[i] = t


@dataclass
class Residuals:
    eq9_max_abs: float
    eq10_abs: float
    kappa_closed_form_max_abs: float
    eps_drift_max_abs: float = 0.0

    def to_dict(self) -> dict:
        return {"eq9_max_abs": self.eq9_max_abs, "eq10_abs": self.eq10_abs,
                "kappa_closed_form_max_abs": self.kappa_closed_form_max_abs,
                "eps_drift_max_abs": self.eps_drift_max_abs}

    def ok(self, tol: float = IDENTITY_TOL, drift_tol: float = DRIFT_TOL) -> bool:
        return (max(self.eq9_max_abs, self.eq10_abs, self.kappa_closed_form_max_abs) < tol
                and self.eps_drift_max_abs < drift_tol)


class CycleDiag:
    """Observer maintaining ``zeta``, ``eps`` and ``kappa`` on ``Z/ell``.

    Works as a per-step observer (``on_step``) and as a batch observer for
    the compiled engine (``on_batch``); both perform the same floating point
    operations in the same order. ``check_every`` sets how often the
    ``O(ell)`` sum identity is evaluated; the local identity and the closed
    form are checked at both endpoints of every step.
    """

    def __init__(self, state: WalkState, g: GraphProvider, w: WeightFunction, check_every: int = 1,
                 snapshot_every: int | None = None):
        self.ell = ell = _require_cycle(g)
        self.w = w
        self.check_every = check_every
        self.snapshot_every = snapshot_every
        self.snapshots: list[dict] = []
        self.step = state.step
        self.start_step = state.step
        self.plus = np.array([state.count(canonical_edge(x, (x + 1) % ell)) for x in range(ell)], dtype=np.int64)
        self.exact_mode = all(state.initial(canonical_edge(x, (x + 1) % ell)) == 1 for x in range(ell)) \
            and state.step == 0
        self.zs, self.zc = np.zeros(ell), np.zeros(ell)
        self.es, self.ec = np.zeros(ell), np.zeros(ell)
        self.ks, self.kc = np.zeros(ell), np.zeros(ell)
        self._tables(int(self.plus.max()) + 1)
        init = np.array([-self._closed(x) for x in range(ell)])
        self.dmin, self.dmax = init.copy(), init.copy()
        # res: eq9 max, eq10 max, max |kappa - closed|, max |eps drift|
        self.res = np.zeros(4)

    # -- helpers ------------------------------------------------------------
    def _tables(self, n: int) -> None:
        self._recip = self.w.recip_table(n)
        self._wstar = self.w.w_star_table(n)
        self._logw = self.w.log_table(n)

    def _closed(self, x: int) -> float:
        xm = (x - 1) % self.ell
        return float(self._wstar[self.plus[x] - 1] - self._wstar[self.plus[xm] - 1])

    @property
    def zeta(self) -> np.ndarray:
        return self.zs + self.zc

    @property
    def eps(self) -> np.ndarray:
        return self.es + self.ec

    @property
    def kappa(self) -> np.ndarray:
        return self.ks + self.kc

    def kappa_closed_form(self) -> np.ndarray:
        return np.array([self._closed(x) for x in range(self.ell)])

    # -- updates ------------------------------------------------------------
    def on_step(self, state: WalkState, rec: StepRecord) -> None:
        ell = self.ell
        x, y = rec.from_, rec.to
        if max(rec.count_before, int(self.plus.max()) + 1) >= min(len(self._recip), len(self._wstar),
                                                                  len(self._logw)):
            self._tables(2 * max(rec.count_before, int(self.plus.max())) + 2)
        xm = (x + ell - 1) % ell
        cp, cm = self.plus[x], self.plus[xm]
        dr = abs(_kernels.eps_drift(self._logw[cp], self._logw[cm], self._recip[cp], self._recip[cm]))
        self.res[3] = max(self.res[3], dr)
        om = float(self._recip[rec.count_before])
        zs, zc, es, ec, ks, kc = self.zs, self.zc, self.es, self.ec, self.ks, self.kc
        if y == (x + 1) % ell:
            _nadd(zs, zc, x, om)
            _nadd(es, ec, x, om)
            _nadd(ks, kc, x, om)
            _nadd(ks, kc, y, -om)
            self.plus[x] += 1
        else:
            _nadd(zs, zc, y, -om)
            _nadd(es, ec, x, -om)
            _nadd(ks, kc, x, -om)
            _nadd(ks, kc, y, om)
            self.plus[y] += 1
        res = self.res
        for v in (x, y):
            vm = (v + ell - 1) % ell
            kv = ks[v] + kc[v]
            r9 = abs(kv - 2.0 * (es[v] + ec[v]) + (zs[v] + zc[v]) + (zs[vm] + zc[vm]))
            res[0] = max(res[0], r9)
            diff = kv - (self._wstar[self.plus[v] - 1] - self._wstar[self.plus[vm] - 1])
            self.dmin[v] = min(self.dmin[v], diff)
            self.dmax[v] = max(self.dmax[v], diff)
            res[2] = max(res[2], abs(diff))
        self.step = rec.step
        if self.step % self.check_every == 0:
            res[1] = max(res[1], self._eq10())
        self._maybe_snapshot()

    def on_batch(self, batch: StepBatch) -> None:
        if self.snapshot_every:
            # snapshots need per-step granularity
            for rec in batch.records():
                self.on_step(None, rec)
            return
        need = max(int(batch.count_before.max()), int(self.plus.max()) + len(batch)) + 2
        if need >= min(len(self._recip), len(self._wstar), len(self._logw)):
            self._tables(need)
        _kernels.cycle_diag_batch(self.ell, batch.from_, batch.to, batch.count_before, self._recip, self._wstar,
                                  self._logw,
                                  self.zs, self.zc, self.es, self.ec, self.ks, self.kc, self.plus,
                                  self.dmin, self.dmax, self.res, self.check_every, batch.step0)
        self.step = batch.step0 + len(batch)

    def _eq10(self) -> float:
        # same summation order as the compiled batch path
        s = c = 0.0
        for v in range(self.ell):
            for term in (self.zs[v], self.zc[v], -self.es[v], -self.ec[v]):
                t = s + term
                c += (s - t) + term if abs(s) >= abs(term) else (term - t) + s
                s = t
        return abs(s + c)

    # -- reporting ------------------------------------------------------------
    def residuals(self) -> Residuals:
        eq10 = max(float(self.res[1]), self._eq10())
        if self.exact_mode:
            closed = float(self.res[2])
        else:
            closed = float(np.max(self.dmax - self.dmin))
        return Residuals(float(self.res[0]), eq10, closed, float(self.res[3]))

    def lambdas(self) -> tuple[float, np.ndarray]:
        inv = np.array([self.w.recip(int(c)) for c in self.plus])
        big = math.fsum(inv)
        return big, inv / big

    def snapshot(self) -> dict:
        big, lam = self.lambdas()
        return {"step": self.step, "zeta": self.zeta.tolist(), "eps": self.eps.tolist(),
                "kappa": self.kappa.tolist(), "lambda": lam.tolist(), "Lambda": big,
                "residuals": self.residuals().to_dict()}

    def _maybe_snapshot(self) -> None:
        if self.snapshot_every and self.step % self.snapshot_every == 0:
            self.snapshots.append(self.snapshot())

    def write_snapshots(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.snapshots, indent=1) + "\n")


def attach_cycle_diag(state: WalkState, g: GraphProvider, w: WeightFunction, **kw) -> CycleDiag:
    return CycleDiag(state, g, w, **kw)


def identity_residuals(d: CycleDiag) -> Residuals:
    return d.residuals()


def eps_zero_drift(state: WalkState, g: GraphProvider, w: WeightFunction, x: int | None = None) -> float:
    """Expected one-step change of ``eps(x)`` from ``x``: ``p+/W+ - p-/W-``."""
    ell = _require_cycle(g)
    v = state.current_vertex
    if x is not None and x != v:
        raise ValueError(f"walk is at {v}, not at {x}")
    dist = transition_distribution(state, g, w)
    up, down = (v + 1) % ell, (v - 1) % ell
    w_up = w.recip(state.count(canonical_edge(v, up)))
    w_down = w.recip(state.count(canonical_edge(v, down)))
    return dist.probability(up) * w_up - dist.probability(down) * w_down


# ---------------------------------------------------------------------------
# excursions from vertex 0

CYCLE_RIGHT = "CycleRight"
CYCLE_LEFT = "CycleLeft"
BACKTRACK = "Backtrack"
INCOMPLETE = "Incomplete"

BOUND_ABS_SLACK = 1e-12
BOUND_REL_SLACK = 1e-9


@dataclass
class Excursion:
    kind: str
    span: tuple[int, int | None]
    u: list[float] = field(default_factory=list)
    v: float = 0.0
    delta_span: list[float] = field(default_factory=list)
    Delta_span: float = 0.0
    Lambda: float = 0.0
    lam: list[float] = field(default_factory=list)
    u_ok: bool = True
    v_ok: bool = True

    def to_dict(self) -> dict:
        return {"kind": self.kind, "span": list(self.span), "u": self.u, "v": self.v,
                "delta_span": self.delta_span, "Delta_span": self.Delta_span,
                "Lambda": self.Lambda, "lambda": self.lam, "u_ok": self.u_ok, "v_ok": self.v_ok}


class ExcursionLedger:
    """Excursions of the walk from vertex 0 on ``Z/ell``, from time ``m`` on.

    At each visit time ``t_n`` the ledger snapshots the counts ``X^{e_x}``,
    ``Lambda = sum_x 1/W(X^{e_x})`` and ``lambda(x) = (1/W(X^{e_x})) / Lambda``.
    When the walk is next back at 0 the excursion is classified and

    * ``u(x) = change of zeta(x) - (1[right] - 1[left]) / W(X_{t_n}^{e_x})``,
    * ``v = sum_x (lambda(0) + lambda(-1) - 1[x in {0, -1}]) u(x)``,
    * ``delta_span(x) = delta_{X_{t_n}^{e_x}} - delta_{X_{t_{n+1}}^{e_x}}``

    are recorded; each excursion is checked against ``|u(x)| <= delta_span(x)``
    and ``|v| <= sum_x delta_span(x)``.
    """

    def __init__(self, state: WalkState, g: GraphProvider, w: WeightFunction, m: int | None = None,
                 policy: TruncationPolicy = DEFAULT_POLICY):
        self.ell = _require_cycle(g)
        self.w = w
        self.m = state.step if m is None else m
        if self.m < 0:
            raise ValueError("window start m must be >= 0")
        self.delta = DeltaLookup(w, policy)
        self.counts = np.array([state.count(canonical_edge(x, (x + 1) % self.ell)) for x in range(self.ell)],
                               dtype=np.int64)
        self.visit_times: list[int] = []
        self.excursions: list[Excursion] = []
        self._open = None
        if state.current_vertex == 0 and state.step >= self.m:
            self._begin(state.step)

    def _begin(self, t: int) -> None:
        self.visit_times.append(t)
        inv = np.array([self.w.recip(int(c)) for c in self.counts])
        big = math.fsum(inv)
        self._open = {"t": t, "counts": self.counts.copy(), "inv": inv, "Lambda": big, "lam": inv / big,
                      "dzeta": np.zeros(self.ell), "depart": None}

    def on_step(self, state, rec: StepRecord) -> None:
        ell = self.ell
        x, y = rec.from_, rec.to
        up = y == (x + 1) % ell
        e = x if up else y
        self.counts[e] += 1
        op = self._open
        if op is None:
            if y == 0 and rec.step >= self.m:
                self._begin(rec.step)
            return
        om = self.w.recip(rec.count_before)
        op["dzeta"][e] += om if up else -om
        if op["depart"] is None:
            op["depart"] = y
        if y == 0:
            self._close(rec.step, arrive=x)
            self._begin(rec.step)

    def on_batch(self, batch: StepBatch) -> None:
        for rec in batch.records():
            self.on_step(None, rec)

    def _close(self, t: int, arrive: int) -> None:
        op = self._open
        ell = self.ell
        depart = op["depart"]
        if depart == 1 and arrive == ell - 1:
            kind, sign = CYCLE_RIGHT, 1.0
        elif depart == ell - 1 and arrive == 1:
            kind, sign = CYCLE_LEFT, -1.0
        else:
            kind, sign = BACKTRACK, 0.0
        u = op["dzeta"] - sign * op["inv"]
        lam = op["lam"]
        coef = np.full(ell, lam[0] + lam[ell - 1])
        coef[0] -= 1.0
        coef[ell - 1] -= 1.0
        v = math.fsum(coef * u)
        before, after = op["counts"], self.counts
        dspan = np.array([self.delta(int(a)) - self.delta(int(b)) for a, b in zip(before, after)])
        Dspan = math.fsum(dspan)
        u_ok = bool(np.all(np.abs(u) <= dspan * (1 + BOUND_REL_SLACK) + BOUND_ABS_SLACK))
        v_ok = abs(v) <= Dspan * (1 + BOUND_REL_SLACK) + BOUND_ABS_SLACK
        self.excursions.append(Excursion(kind, (op["t"], t), u.tolist(), v, dspan.tolist(), Dspan,
                                         op["Lambda"], lam.tolist(), u_ok, v_ok))

    def finish(self) -> None:
        """Record the still-open excursion (if it has left 0) as Incomplete."""
        op = self._open
        if op is not None and op["depart"] is not None:
            self.excursions.append(Excursion(INCOMPLETE, (op["t"], None), Lambda=op["Lambda"],
                                             lam=op["lam"].tolist()))
            self._open = None

    @property
    def closed(self) -> list[Excursion]:
        return [e for e in self.excursions if e.kind != INCOMPLETE]

    def violations(self) -> int:
        return sum(1 for e in self.closed if not (e.u_ok and e.v_ok))


def track_excursions(state: WalkState, g: GraphProvider, w: WeightFunction, m: int | None = None,
                     policy: TruncationPolicy = DEFAULT_POLICY) -> ExcursionLedger:
    return ExcursionLedger(state, g, w, m, policy)


# ---------------------------------------------------------------------------
# Monte Carlo excursion probabilities


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # the interval always contains p; pin the ends exactly at k = 0 and k = n
    lo = 0.0 if k == 0 else max(0.0, mid - half)
    hi = 1.0 if k == n else min(1.0, mid + half)
    return lo, hi


@dataclass
class CycleProbs:
    replicas: int
    right: int
    left: int
    backtrack: int
    incomplete: int

    def _est(self, k: int) -> dict:
        lo, hi = wilson_interval(k, self.replicas)
        return {"p": k / self.replicas, "ci": [lo, hi]}

    @property
    def q_right(self) -> float:
        return self.right / self.replicas

    @property
    def q_left(self) -> float:
        return self.left / self.replicas

    @property
    def q_backtrack(self) -> float:
        return self.backtrack / self.replicas

    def to_dict(self) -> dict:
        return {"replicas": self.replicas, "q_right": self._est(self.right), "q_left": self._est(self.left),
                "q_backtrack": self._est(self.backtrack), "incomplete": self.incomplete}


EXCURSION_CAP = 1_000_000


def empirical_cycle_probs(frozen: WalkState, g: GraphProvider, w: WeightFunction, replicas: int,
                          seed: int = 0, cap: int = EXCURSION_CAP) -> CycleProbs:
    """Run ``replicas`` independent copies of ``frozen`` until they return to 0.

    Each copy gets stream ``(seed, r)``. Copies still away after ``cap``
    steps count as incomplete.
    """
    ell = _require_cycle(g)
    if replicas < 100:
        raise ValueError("need at least 100 replicas for a meaningful frequency")
    if frozen.current_vertex != 0:
        raise ValueError("the frozen state must sit at vertex 0")
    tally = {CYCLE_RIGHT: 0, CYCLE_LEFT: 0, BACKTRACK: 0, INCOMPLETE: 0}
    for r in range(replicas):
        s = frozen.copy()
        s.rng = UniformStream(seed, r)
        s, first = step(s, g, w)
        depart = first.to
        summary = run(s, g, w, cap - 1, stop_at=0) if cap > 1 else None
        if summary is None or not summary.stopped:
            tally[INCOMPLETE] += 1
            continue
        prev = _arrival_neighbour(s)
        if depart == 1 and prev == ell - 1:
            tally[CYCLE_RIGHT] += 1
        elif depart == ell - 1 and prev == 1:
            tally[CYCLE_LEFT] += 1
        else:
            tally[BACKTRACK] += 1
    return CycleProbs(replicas, tally[CYCLE_RIGHT], tally[CYCLE_LEFT], tally[BACKTRACK], tally[INCOMPLETE])


def _arrival_neighbour(s: WalkState) -> int:
    # the last traversed edge ends at 0, so its other endpoint is the arrival neighbour
    e = s.last_edge
    return e[1] if e[0] == 0 else e[0]


# ---------------------------------------------------------------------------
# attraction classification

SINGLE_EDGE = "SingleEdge"
ODD_CYCLE = "OddCycle"
UNDECIDED = "Undecided"


@dataclass
class AttractionReport:
    outcome: str
    window: tuple[int, int]
    evidence: dict[EdgeId, int]
    last_switch: int
    edge: EdgeId | None = None
    cycle: tuple[int, ...] | None = None

    def to_dict(self) -> dict:
        return {"outcome": self.outcome, "edge": list(self.edge) if self.edge else None,
                "cycle": list(self.cycle) if self.cycle else None, "window": list(self.window),
                "evidence": {f"{a}-{b}": c for (a, b), c in sorted(self.evidence.items())},
                "last_switch": self.last_switch}


def _as_cycle(edges: list[EdgeId]) -> tuple[int, ...] | None:
    """Vertex order if ``edges`` form exactly one simple cycle."""
    adj: dict[int, list[int]] = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    if len(edges) < 3 or len(adj) != len(edges) or any(len(n) != 2 for n in adj.values()):
        return None
    start = min(adj)
    order = [start]
    prev, cur = None, start
    while True:
        a, b = adj[cur]
        nxt = a if a != prev else b
        if nxt == start:
            break
        order.append(nxt)
        prev, cur = cur, nxt
    if len(order) != len(adj):
        return None
    if order[1] > order[-1]:
        order = [order[0]] + order[1:][::-1]
    return tuple(order)


DEFAULT_WINDOW_FRACTION = 0.5
DEFAULT_MIN_COUNT = 100


def classify_attraction(summary: RunSummary, window_fraction: float = DEFAULT_WINDOW_FRACTION,
                        min_count: int = DEFAULT_MIN_COUNT) -> AttractionReport:
    """SingleEdge / OddCycle / Undecided from the traversals in the final window.

    ``summary`` must come from a run made with the same ``window_fraction``.
    """
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must be in (0, 1]")
    if summary.window is None:
        raise ValueError("summary has no window; run with window_fraction set")
    start, end = summary.window
    expected = int(round(summary.n_steps * window_fraction))
    if end - start != expected and not summary.stopped:
        raise ValueError(f"summary window has {end - start} steps, expected {expected} for this fraction")
    if end - start < min_count:
        raise WindowTooShort(f"window has {end - start} steps, need at least {min_count}")
    counts = {e: c for e, c in summary.window_counts.items() if c > 0}
    report = AttractionReport(UNDECIDED, (start, end), dict(counts), summary.last_switch)
    if len(counts) == 1:
        report.outcome = SINGLE_EDGE
        report.edge = next(iter(counts))
        return report
    cyc = _as_cycle(sorted(counts))
    if cyc is not None and len(cyc) % 2 == 1 and min(counts.values()) >= min_count:
        report.outcome = ODD_CYCLE
        report.cycle = cyc
    return report


def summarize_path(path: list[int], window_fraction: float = DEFAULT_WINDOW_FRACTION) -> RunSummary:
    """A ``RunSummary`` for an explicit vertex sequence (all counts starting at 1)."""
    n = len(path) - 1
    pre = n - int(round(n * window_fraction))
    counts: dict[EdgeId, int] = {}
    window: dict[EdgeId, int] = {}
    visits: dict[int, int] = {path[0]: 1}
    last_edge, last_switch = None, 0
    for i, (a, b) in enumerate(zip(path, path[1:]), 1):
        e = canonical_edge(a, b)
        counts[e] = counts.get(e, 1) + 1
        if i > pre:
            window[e] = window.get(e, 0) + 1
        visits[b] = visits.get(b, 0) + 1
        if e != last_edge:
            last_edge, last_switch = e, i
    return RunSummary(n_steps=n, final_vertex=path[-1], final_step=n, edge_counts=counts, visits=visits,
                      last_edge=last_edge, last_switch=last_switch, window=(pre, n), window_counts=window)
