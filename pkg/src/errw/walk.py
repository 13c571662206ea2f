"""Edge-reinforced random walk dynamics.

From vertex ``v`` the walk moves to neighbour ``v'`` with probability
``W(X^{v,v'}) / sum_u W(X^{v,u})`` and the traversed edge's count goes up
by one. Counts are stored sparsely: untouched edges read as their initial
value, so infinite lattices are fine.

Two engines share one arithmetic path. The reference engine steps in Python
and supports any observer and trajectory logs; ``run`` hands runs on finite
graphs and on Z to the compiled kernel in ``_kernels`` whenever every
observer can consume whole step batches (``on_batch``). Both pick
the successor from the same cached log-weight table with the same
operations, and both consume exactly one uniform per step, so for a fixed
seed they produce the same trajectory.

Randomness: replica ``r`` of master seed ``s`` draws from
``Philox(SeedSequence(s, spawn_key=(r,)))``, a counter-based generator.
"""

from __future__ import annotations

import copy
import csv
import gzip
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol

import numpy as np

from . import _kernels
from .errors import BadInitialWeight, IsolatedVertex, UnknownVertex, UnsupportedProvider
from .graphs import CompactGraph, EdgeId, GraphProvider, LatticeZ, VertexId, canonical_edge, compact
from .weights import WeightFunction

KERNEL_CHUNK = 1 << 20
RECORD_CHUNK = 1 << 16
_NO_RECORD = np.empty((0, 4), dtype=np.int64)


class UniformStream:
    """Buffered uniforms in [0, 1) from a Philox stream.

    Consecutive ``Generator.random`` calls concatenate to the same sequence
    as one large call, so buffering does not change the values drawn.
    """

    def __init__(self, seed: int, replica: int = 0, block: int = 4096):
        if seed < 0 or replica < 0:
            raise ValueError("seed and replica must be non-negative")
        self.seed = int(seed)
        self.replica = int(replica)
        self.block = block
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.replica,))
        self._gen = np.random.Generator(np.random.Philox(ss))
        self._buf = np.empty(0)
        self._pos = 0
        self.drawn = 0

    def peek(self, n: int) -> np.ndarray:
        """The next ``n`` uniforms without consuming them."""
        avail = len(self._buf) - self._pos
        if avail < n:
            fresh = self._gen.random(max(self.block, n - avail))
            self._buf = np.concatenate([self._buf[self._pos:], fresh])
            self._pos = 0
        return self._buf[self._pos: self._pos + n]

    def advance(self, n: int) -> None:
        self._pos += n
        self.drawn += n

    def next(self) -> float:
        u = float(self.peek(1)[0])
        self.advance(1)
        return u


def replica_entropy(seed: int, replica: int) -> int:
    """A 128-bit integer identifying replica ``replica``'s stream (for reports)."""
    words = np.random.SeedSequence(seed, spawn_key=(replica,)).generate_state(2, np.uint64)
    return (int(words[0]) << 64) | int(words[1])


@dataclass
class WalkState:
    current_vertex: VertexId
    step: int
    edge_counts: dict[EdgeId, int]
    initial_default: int
    overrides: dict[EdgeId, int]
    rng: UniformStream
    visits: dict[VertexId, int]
    last_edge: EdgeId | None = None
    last_switch: int = 0

    def count(self, e: EdgeId) -> int:
        c = self.edge_counts.get(e)
        if c is not None:
            return c
        return self.overrides.get(e, self.initial_default)

    def initial(self, e: EdgeId) -> int:
        return self.overrides.get(e, self.initial_default)

    def total_increments(self) -> int:
        return sum(c - self.initial(e) for e, c in self.edge_counts.items())

    def copy(self) -> "WalkState":
        return copy.deepcopy(self)


def init_state(g: GraphProvider, w: WeightFunction, start: VertexId, initial_default: int = 1,
               overrides: dict | None = None, seed: int = 0, replica: int = 0) -> WalkState:
    if not g.has_vertex(start):
        raise UnknownVertex(start)
    if not isinstance(initial_default, (int, np.integer)) or initial_default < 1:
        raise BadInitialWeight(f"initial weight must be an integer >= 1, got {initial_default!r}")
    ov: dict[EdgeId, int] = {}
    for e, c in (overrides or {}).items():
        if not isinstance(c, (int, np.integer)) or c < 1:
            raise BadInitialWeight(f"initial weight of {e} must be an integer >= 1, got {c!r}")
        ov[canonical_edge(*e, g)] = int(c)
    return WalkState(current_vertex=start, step=0, edge_counts={}, initial_default=int(initial_default),
                     overrides=ov, rng=UniformStream(seed, replica), visits={start: 1})


@dataclass(frozen=True)
class StepRecord:
    step: int
    from_: VertexId
    to: VertexId
    edge: EdgeId
    count_before: int


@dataclass(frozen=True)
class TransitionDistribution:
    entries: list[tuple[VertexId, float]]

    def probability(self, v: VertexId) -> float:
        for u, p in self.entries:
            if u == v:
                return p
        return 0.0


def _pick(lw: list[float], u: float) -> int:
    # keep in lockstep with _kernels.pick_neighbor
    mx = lw[0]
    for x in lw[1:]:
        if x > mx:
            mx = x
    total = 0.0
    for x in lw:
        total += math.exp(x - mx)
    target = u * total
    acc = 0.0
    for j, x in enumerate(lw):
        acc += math.exp(x - mx)
        if target < acc:
            return j
    return len(lw) - 1


def _local(s: WalkState, g: GraphProvider, w: WeightFunction):
    v = s.current_vertex
    nbrs = g.neighbors(v)
    if not nbrs:
        raise IsolatedVertex(f"vertex {v} has no neighbours")
    edges = [canonical_edge(v, u) for u in nbrs]
    counts = [s.count(e) for e in edges]
    table = w.log_table(max(counts))
    return nbrs, edges, counts, [float(table[c]) for c in counts]


def transition_distribution(s: WalkState, g: GraphProvider, w: WeightFunction) -> TransitionDistribution:
    """Successor law at the current vertex, normalised in log space."""
    nbrs, _, _, lw = _local(s, g, w)
    mx = max(lw)
    ex = [math.exp(x - mx) for x in lw]
    total = math.fsum(ex)
    return TransitionDistribution([(u, x / total) for u, x in zip(nbrs, ex)])


def step(s: WalkState, g: GraphProvider, w: WeightFunction) -> tuple[WalkState, StepRecord]:
    """One transition using exactly one uniform; mutates and returns ``s``."""
    nbrs, edges, counts, lw = _local(s, g, w)
    j = _pick(lw, s.rng.next())
    e, to = edges[j], nbrs[j]
    rec = StepRecord(s.step + 1, s.current_vertex, to, e, counts[j])
    s.edge_counts[e] = counts[j] + 1
    s.step += 1
    s.current_vertex = to
    s.visits[to] = s.visits.get(to, 0) + 1
    if e != s.last_edge:
        s.last_edge = e
        s.last_switch = s.step
    return s, rec


class Observer(Protocol):
    def on_step(self, state: WalkState, record: StepRecord) -> None: ...


@dataclass
class StepBatch:
    """Consecutive steps as parallel arrays; step ``i`` arrives at time ``step0 + i + 1``."""

    step0: int
    from_: np.ndarray
    to: np.ndarray
    edge_lo: np.ndarray
    edge_hi: np.ndarray
    count_before: np.ndarray

    def __len__(self) -> int:
        return len(self.from_)

    def records(self):
        for i in range(len(self)):
            yield StepRecord(self.step0 + i + 1, int(self.from_[i]), int(self.to[i]),
                             (int(self.edge_lo[i]), int(self.edge_hi[i])), int(self.count_before[i]))


@dataclass
class RunSummary:
    """What one ``run`` call did.

    ``edge_counts`` and ``visits`` are cumulative over the state's life;
    ``window_counts`` holds traversals per edge during the final
    ``window_fraction`` of this run's steps.
    """

    n_steps: int
    final_vertex: VertexId
    final_step: int
    edge_counts: dict[EdgeId, int]
    visits: dict[VertexId, int]
    last_edge: EdgeId | None
    last_switch: int
    window: tuple[int, int] | None = None
    window_counts: dict[EdgeId, int] = field(default_factory=dict)
    stopped: bool = False
    backend: str = "reference"

    def to_dict(self) -> dict:
        key = lambda e: f"{e[0]}-{e[1]}"  # noqa: E731
        return {
            "n_steps": self.n_steps, "final_vertex": self.final_vertex, "final_step": self.final_step,
            "edge_counts": {key(e): c for e, c in sorted(self.edge_counts.items())},
            "visits": {str(v): c for v, c in sorted(self.visits.items())},
            "last_edge": list(self.last_edge) if self.last_edge else None,
            "last_switch": self.last_switch,
            "window": list(self.window) if self.window else None,
            "window_counts": {key(e): c for e, c in sorted(self.window_counts.items())},
            "stopped": self.stopped,
        }


class TrajectoryLog:
    """CSV trajectory writer; gzip when the path ends in ``.gz``."""

    HEADER = ["step", "from", "to", "edge_lo", "edge_hi", "count_before"]

    def __init__(self, path: str | Path):
        path = Path(path)
        raw = gzip.open(path, "wb") if path.suffix == ".gz" else open(path, "wb")
        self._fh = io.TextIOWrapper(raw, encoding="utf-8", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.HEADER)

    def on_step(self, state: WalkState, rec: StepRecord) -> None:
        self._w.writerow([rec.step, rec.from_, rec.to, rec.edge[0], rec.edge[1], rec.count_before])

    def close(self) -> None:
        self._fh.close()


def _notify(observers, state, rec):
    for ob in observers:
        if hasattr(ob, "on_step"):
            ob.on_step(state, rec)
        else:
            ob(state, rec)


def _kernel_ok(g: GraphProvider) -> bool:
    return isinstance(g, LatticeZ) or (g.is_finite and g.kind != "lazy")


def _compact_for(g: GraphProvider, s: WalkState, n_steps: int) -> CompactGraph:
    if isinstance(g, LatticeZ):
        return compact(g, center=s.current_vertex, radius=n_steps + 1)
    cg = getattr(g, "_compact_cache", None)
    if cg is None:
        cg = compact(g)
        g._compact_cache = cg
    return cg


def _run_reference(s, g, w, n_steps, observers, stop_at):
    stopped = False
    for _ in range(n_steps):
        s, rec = step(s, g, w)
        _notify(observers, s, rec)
        if stop_at is not None and s.current_vertex == stop_at:
            stopped = True
            break
    return stopped


def _edge_arrays(cg: CompactGraph) -> tuple[np.ndarray, np.ndarray]:
    if cg.offset is not None:
        lo = np.arange(len(cg.edges), dtype=np.int64) - cg.offset
        return lo, lo + 1
    arr = getattr(cg, "_edge_arr", None)
    if arr is None:
        arr = np.array(cg.edges, dtype=np.int64).reshape(-1, 2)
        cg._edge_arr = arr
    return arr[:, 0], arr[:, 1]


def _run_kernel(s: WalkState, g: GraphProvider, w: WeightFunction, n_steps: int, stop_at,
                batch_observers=()) -> bool:
    cg = _compact_for(g, s, n_steps)
    n_edges = len(cg.edges)
    counts = np.full(n_edges, s.initial_default, dtype=np.int64)
    touched = {**s.overrides, **s.edge_counts}
    if isinstance(g, LatticeZ):
        lo = int(cg.labels[0])
        hi = int(cg.labels[-1])
        for e, c in touched.items():
            if lo <= e[0] and e[1] <= hi:
                counts[cg.edge_index(e)] = c
    else:
        for e, c in touched.items():
            counts[cg.edge_index(e)] = c
    start_counts = counts.copy()
    visits = np.zeros(len(cg.labels), dtype=np.int64)
    max_count = int(counts.max()) + n_steps + 1 if n_edges else 1
    logw = w.log_table(max_count)
    row = cg.row(s.current_vertex)
    stop_row = cg.row(stop_at) if stop_at is not None and g.has_vertex(stop_at) else -1
    if isinstance(g, LatticeZ) and stop_at is not None and not 0 <= stop_row < len(cg.labels):
        stop_row = -1
    last_edge = cg.edge_index(s.last_edge) if s.last_edge is not None else -1
    if isinstance(g, LatticeZ) and not 0 <= last_edge < n_edges:
        last_edge = -1
    last_switch = s.last_switch
    done = 0
    status = 0
    chunk = RECORD_CHUNK if batch_observers else KERNEL_CHUNK
    if batch_observers:
        e_lo, e_hi = _edge_arrays(cg)
    while done < n_steps:
        todo = min(chunk, n_steps - done)
        us = s.rng.peek(todo)
        rec = np.empty((todo, 4), dtype=np.int64) if batch_observers else _NO_RECORD
        row, did, _prev, last_edge, last_switch, status = _kernels.walk_kernel(
            cg.indptr, cg.nbr, cg.edge_of, counts, logw, us, row, todo, stop_row,
            visits, last_edge, last_switch, s.step + done, rec)
        s.rng.advance(did)
        if batch_observers and did:
            r = rec[:did]
            batch = StepBatch(s.step + done, cg.labels[r[:, 0]], cg.labels[r[:, 1]],
                              e_lo[r[:, 2]], e_hi[r[:, 2]], r[:, 3].copy())
            for ob in batch_observers:
                ob.on_batch(batch)
        done += did
        if status != 0:
            break
    if status == -1:
        raise IsolatedVertex(f"vertex {int(cg.labels[row])} has no neighbours")
    # fold the dense arrays back into the sparse state
    for i in np.nonzero(counts != start_counts)[0]:
        s.edge_counts[cg.edges[int(i)]] = int(counts[i])
    for i in np.nonzero(visits)[0]:
        v = int(cg.labels[i])
        s.visits[v] = s.visits.get(v, 0) + int(visits[i])
    s.current_vertex = int(cg.labels[row])
    if s.last_switch != last_switch:
        s.last_edge = cg.edges[int(last_edge)]
        s.last_switch = int(last_switch)
    s.step += done
    return status == 1


def run(s: WalkState, g: GraphProvider, w: WeightFunction, n_steps: int,
        observers: Iterable[Observer | Callable] = (), window_fraction: float | None = None,
        backend: str = "auto", log_path: str | Path | None = None,
        stop_at: VertexId | None = None) -> RunSummary:
    """Advance ``s`` by ``n_steps`` steps (fewer if ``stop_at`` is reached).

    ``backend`` is ``"auto"``, ``"reference"`` or ``"compiled"``; ``auto``
    compiles whenever the graph can be materialised and every observer has
    an ``on_batch`` method (trajectory logs are per-step only). Batch
    observers see the steps after the fact, in order, with the state already
    advanced past the batch.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    observers = list(observers)
    log = TrajectoryLog(log_path) if log_path is not None else None
    if log is not None:
        observers.append(log)
    if backend not in ("auto", "reference", "compiled"):
        raise ValueError(f"unknown backend {backend!r}")
    batchable = all(hasattr(ob, "on_batch") for ob in observers)
    compiled = backend == "compiled" or (backend == "auto" and batchable and _kernel_ok(g))
    if compiled and (not batchable or not _kernel_ok(g)):
        raise UnsupportedProvider("the compiled engine needs a finite graph or Z and batch-capable observers")

    engine = (lambda k: _run_kernel(s, g, w, k, stop_at, observers)) if compiled else (
        lambda k: _run_reference(s, g, w, k, observers, stop_at))
    step0 = s.step
    window = None
    window_counts: dict[EdgeId, int] = {}
    try:
        stopped = False
        if window_fraction is not None:
            if not 0 < window_fraction <= 1:
                raise ValueError("window_fraction must be in (0, 1]")
            pre = n_steps - int(round(n_steps * window_fraction))
            stopped = engine(pre) if pre else False
            if not stopped:
                before = dict(s.edge_counts)
                wstart = s.step
                stopped = engine(n_steps - pre)
                window_counts = {e: c - before.get(e, s.initial(e)) for e, c in s.edge_counts.items()
                                 if c != before.get(e, s.initial(e))}
                window = (wstart, s.step)
        else:
            stopped = engine(n_steps)
    finally:
        if log is not None:
            log.close()
    return RunSummary(n_steps=s.step - step0, final_vertex=s.current_vertex, final_step=s.step,
                      edge_counts=dict(s.edge_counts), visits=dict(s.visits), last_edge=s.last_edge,
                      last_switch=s.last_switch, window=window, window_counts=window_counts,
                      stopped=stopped, backend="compiled" if compiled else "reference")
