"""Bounded-degree graph providers, canonical edges and odd-cycle analysis.

Vertices are integer labels. Providers never mutate after construction and
always return neighbours in ascending label order, which is what makes a
seeded walk reproducible.
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass, field
from math import isqrt
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegreeBoundViolation,
    NotAdjacent,
    SelfLoop,
    UnknownVertex,
    UnsupportedProvider,
)

VertexId = int
EdgeId = tuple  # (lo, hi) with lo < hi

SQRT2 = math.sqrt(2.0)
DEFAULT_EXHAUSTIVE_LIMIT = 16


def canonical_edge(u: VertexId, v: VertexId, g: "GraphProvider | None" = None) -> EdgeId:
    """Return the ``(min, max)`` ordered pair for the undirected edge ``{u, v}``.

    When a provider is given, adjacency is checked as well.
    """
    if u == v:
        raise SelfLoop(f"self loop at vertex {u}")
    if g is not None and v not in g.neighbors(u):
        raise NotAdjacent(f"{u} and {v} are not adjacent in {g.name}")
    return (u, v) if u < v else (v, u)


class GraphProvider:
    """Neighbour oracle for a bounded-degree graph."""

    kind = "abstract"
    degree_bound: int
    name: str
    is_finite = False

    def neighbors(self, v: VertexId) -> list[VertexId]:
        raise NotImplementedError

    def has_vertex(self, v: VertexId) -> bool:
        raise NotImplementedError

    def vertices(self) -> list[VertexId]:
        raise UnsupportedProvider(f"{self.name} has no finite vertex set")

    def edges(self) -> list[EdgeId]:
        out = []
        for v in self.vertices():
            out.extend((v, u) for u in self.neighbors(v) if u > v)
        return out

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"


class ExplicitFinite(GraphProvider):
    """Finite simple graph given by adjacency lists."""

    kind = "explicit"
    is_finite = True

    def __init__(self, adjacency: dict[int, Iterable[int]], name: str = "explicit"):
        adj: dict[int, list[int]] = {int(v): sorted({int(u) for u in nbrs}) for v, nbrs in adjacency.items()}
        for v, nbrs in adj.items():
            for u in nbrs:
                if u == v:
                    raise SelfLoop(f"self loop at vertex {v}")
                if v not in adj.get(u, ()):
                    raise ValueError(f"adjacency is not symmetric: {v}->{u}")
        self._adj = adj
        self.degree_bound = max((len(n) for n in adj.values()), default=0)
        self.name = name

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[int, int]], name: str = "explicit") -> "ExplicitFinite":
        adj: dict[int, set[int]] = {}
        seen = set()
        for u, v in edges:
            e = canonical_edge(int(u), int(v))
            if e in seen:
                raise ValueError(f"duplicate edge {e}; multigraphs are not supported")
            seen.add(e)
            adj.setdefault(e[0], set()).add(e[1])
            adj.setdefault(e[1], set()).add(e[0])
        return cls(adj, name=name)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExplicitFinite":
        """Read a ``u v`` edge list; ``#`` starts a comment."""
        edges = []
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 'u v', got {raw!r}")
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: vertex labels must be integers") from None
        if not edges:
            raise ConfigError(f"{path}: no edges")
        return cls.from_edges(edges, name=f"file:{path}")

    def neighbors(self, v: VertexId) -> list[VertexId]:
        try:
            return self._adj[v]
        except KeyError:
            raise UnknownVertex(f"vertex {v} not in {self.name}") from None

    def has_vertex(self, v: VertexId) -> bool:
        return v in self._adj

    def vertices(self) -> list[VertexId]:
        return sorted(self._adj)


class CycleZmodL(GraphProvider):
    """The cycle Z/lZ on labels ``0..l-1``."""

    kind = "cycle"
    is_finite = True
    degree_bound = 2

    def __init__(self, length: int):
        if length < 3:
            raise ValueError(f"cycle length must be >= 3, got {length}")
        self.length = int(length)
        self.name = f"cycle:{self.length}"

    def neighbors(self, v: VertexId) -> list[VertexId]:
        if not self.has_vertex(v):
            raise UnknownVertex(f"vertex {v} not in {self.name}")
        a, b = (v - 1) % self.length, (v + 1) % self.length
        return [a, b] if a < b else [b, a]

    def has_vertex(self, v: VertexId) -> bool:
        return isinstance(v, (int, np.integer)) and 0 <= v < self.length

    def vertices(self) -> list[VertexId]:
        return list(range(self.length))


class LatticeZ(GraphProvider):
    kind = "z"
    degree_bound = 2
    name = "z"

    def neighbors(self, v: VertexId) -> list[VertexId]:
        return [v - 1, v + 1]

    def has_vertex(self, v: VertexId) -> bool:
        return isinstance(v, (int, np.integer))


def _zigzag(z: int) -> int:
    return 2 * z if z >= 0 else -2 * z - 1


def _unzigzag(n: int) -> int:
    return n // 2 if n % 2 == 0 else -(n + 1) // 2


def _pair(a: int, b: int) -> int:
    return (a + b) * (a + b + 1) // 2 + b


def _unpair(z: int) -> tuple[int, int]:
    w = (isqrt(8 * z + 1) - 1) // 2
    b = z - w * (w + 1) // 2
    return w - b, b


class LatticeZd(GraphProvider):
    """Z^d with coordinates packed into one non-negative integer label.

    Each coordinate is zigzag-mapped to N and the tuple is folded with the
    Cantor pairing function, so labels are a bijection with Z^d.
    """

    kind = "zd"

    def __init__(self, d: int):
        if d < 1:
            raise ValueError("dimension must be >= 1")
        self.d = int(d)
        self.degree_bound = 2 * self.d
        self.name = f"z{self.d}" if self.d > 1 else "z1"

    def encode(self, coords: Sequence[int]) -> VertexId:
        if len(coords) != self.d:
            raise ValueError(f"expected {self.d} coordinates")
        label = _zigzag(int(coords[-1]))
        for c in reversed(coords[:-1]):
            label = _pair(_zigzag(int(c)), label)
        return label

    def decode(self, label: VertexId) -> tuple[int, ...]:
        if label < 0:
            raise UnknownVertex(f"negative label {label} in {self.name}")
        coords = []
        for _ in range(self.d - 1):
            a, label = _unpair(label)
            coords.append(_unzigzag(a))
        coords.append(_unzigzag(label))
        return tuple(coords)

    def neighbors(self, v: VertexId) -> list[VertexId]:
        x = list(self.decode(v))
        out = []
        for i in range(self.d):
            for s in (-1, 1):
                y = list(x)
                y[i] += s
                out.append(self.encode(y))
        return sorted(out)

    def has_vertex(self, v: VertexId) -> bool:
        return isinstance(v, (int, np.integer)) and v >= 0


class Lazy(GraphProvider):
    """User neighbour rule with a declared degree bound.

    The bound and symmetry are checked on every query; symmetric pairs are
    remembered so each is verified once.
    """

    kind = "lazy"

    def __init__(self, rule: Callable[[int], Iterable[int]], degree_bound: int, name: str = "lazy",
                 finite_vertices: Iterable[int] | None = None):
        self._rule = rule
        self.degree_bound = int(degree_bound)
        self.name = name
        self._checked: set[tuple[int, int]] = set()
        self._finite = sorted(finite_vertices) if finite_vertices is not None else None
        self.is_finite = self._finite is not None

    def _raw(self, v: VertexId) -> list[VertexId]:
        nbrs = sorted(set(int(u) for u in self._rule(v)))
        if len(nbrs) > self.degree_bound:
            raise DegreeBoundViolation(
                f"vertex {v} has {len(nbrs)} neighbours, declared bound is {self.degree_bound}")
        if v in nbrs:
            raise SelfLoop(f"self loop at vertex {v}")
        return nbrs

    def neighbors(self, v: VertexId) -> list[VertexId]:
        nbrs = self._raw(v)
        for u in nbrs:
            key = (v, u) if v < u else (u, v)
            if key in self._checked:
                continue
            if v not in self._raw(u):
                raise DegreeBoundViolation(f"neighbour rule is not symmetric: {v}->{u}")
            self._checked.add(key)
        return nbrs

    def has_vertex(self, v: VertexId) -> bool:
        if self._finite is not None:
            return v in self._finite
        return True

    def vertices(self) -> list[VertexId]:
        if self._finite is None:
            return super().vertices()
        return list(self._finite)


def complete_graph(n: int) -> ExplicitFinite:
    return ExplicitFinite.from_edges(((i, j) for i in range(n) for j in range(i + 1, n)), name=f"complete:{n}")


def path_graph(n: int) -> ExplicitFinite:
    return ExplicitFinite.from_edges(((i, i + 1) for i in range(n - 1)), name=f"path:{n}")


def star_graph(d: int) -> ExplicitFinite:
    """Hub 0 with leaves ``1..d``."""
    return ExplicitFinite.from_edges(((0, i) for i in range(1, d + 1)), name=f"star:{d}")


_INT = r"(\d+)"


def parse_graph(spec: str) -> GraphProvider:
    """Build a provider from a name string such as ``"cycle:5"`` or ``"z2"``."""
    s = spec.strip()
    try:
        if s == "triangle":
            return CycleZmodL(3)
        if s == "square":
            return CycleZmodL(4)
        if s == "z" or s == "z1":
            return LatticeZ()
        if m := re.fullmatch(r"z" + _INT, s):
            return LatticeZd(int(m.group(1)))
        if m := re.fullmatch(r"k" + _INT, s):
            n = int(m.group(1))
            if n < 2:
                raise ValueError("complete graph needs at least 2 vertices")
            g = complete_graph(n)
            g.name = s
            return g
        if m := re.fullmatch(r"cycle:" + _INT, s):
            return CycleZmodL(int(m.group(1)))
        if m := re.fullmatch(r"complete:" + _INT, s):
            if int(m.group(1)) < 2:
                raise ValueError("complete graph needs at least 2 vertices")
            return complete_graph(int(m.group(1)))
        if m := re.fullmatch(r"path:" + _INT, s):
            if int(m.group(1)) < 2:
                raise ValueError("path needs at least 2 vertices")
            return path_graph(int(m.group(1)))
        if m := re.fullmatch(r"star:" + _INT, s):
            if int(m.group(1)) < 1:
                raise ValueError("star needs at least one leaf")
            return star_graph(int(m.group(1)))
        if s.startswith("file:"):
            return ExplicitFinite.from_file(s[5:])
    except (ValueError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad graph spec {spec!r}: {exc}") from None
    raise ConfigError(f"unknown graph spec {spec!r}")


# ---------------------------------------------------------------------------
# odd cycles


@dataclass(frozen=True)
class CycleSet:
    cycles: list[tuple[int, ...]]
    search_bound: int

    def __len__(self) -> int:
        return len(self.cycles)

    def __iter__(self) -> Iterator[tuple[int, ...]]:
        return iter(self.cycles)

    @property
    def longest(self) -> int:
        return max((len(c) for c in self.cycles), default=0)


def _require_finite(g: GraphProvider, what: str) -> list[int]:
    if not g.is_finite:
        raise UnsupportedProvider(f"{what} needs a finite explicit graph, got {g.name}")
    return g.vertices()


def iter_simple_cycles(g: GraphProvider, max_len: int, parity: int | None = None) -> Iterator[tuple[int, ...]]:
    """Yield simple cycles of length ``3..max_len`` once each.

    A cycle is reported starting at its smallest vertex and oriented so that
    the second vertex is smaller than the last.
    """
    verts = _require_finite(g, "cycle enumeration")
    for s in verts:
        path = [s]
        on_path = {s}
        stack = [iter([u for u in g.neighbors(s) if u > s])]
        while stack:
            nxt = next(stack[-1], None)
            if nxt is None:
                stack.pop()
                on_path.discard(path.pop())
                continue
            path.append(nxt)
            on_path.add(nxt)
            L = len(path)
            if L >= 3 and s in g.neighbors(nxt) and path[1] < nxt:
                if parity is None or L % 2 == parity:
                    yield tuple(path)
            if L < max_len:
                stack.append(iter([u for u in g.neighbors(nxt) if u > s and u not in on_path]))
            else:
                on_path.discard(path.pop())


def odd_cycles(g: GraphProvider, max_len: int) -> CycleSet:
    """All simple odd cycles of length at most ``max_len``."""
    if max_len < 3:
        raise ValueError("max_len must be >= 3")
    return CycleSet(sorted(iter_simple_cycles(g, max_len, parity=1), key=lambda c: (len(c), c)), max_len)


def is_bipartite(g: GraphProvider) -> bool:
    colour: dict[int, int] = {}
    for root in _require_finite(g, "bipartiteness check"):
        if root in colour:
            continue
        colour[root] = 0
        queue = deque([root])
        while queue:
            v = queue.popleft()
            for u in g.neighbors(v):
                if u not in colour:
                    colour[u] = 1 - colour[v]
                    queue.append(u)
                elif colour[u] == colour[v]:
                    return False
    return True


@dataclass(frozen=True)
class NuValue:
    """sqrt(2) times the longest odd cycle; ``lower_bound`` when the search was cut short."""

    kind: str  # "zero" | "finite" | "lower_bound"
    value: float = 0.0
    search_bound: int | None = None

    @classmethod
    def zero(cls) -> "NuValue":
        return cls("zero", 0.0)

    @classmethod
    def finite(cls, value: float) -> "NuValue":
        return cls("finite", float(value))

    @classmethod
    def lower_bound(cls, value: float, search_bound: int | None = None) -> "NuValue":
        return cls("lower_bound", float(value), search_bound)

    @classmethod
    def from_number(cls, x: float) -> "NuValue":
        if x < 0 or math.isnan(x):
            raise ValueError("nu must be a non-negative number")
        return cls.zero() if x == 0 else cls.finite(x)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "value": self.value}
        if self.search_bound is not None:
            d["search_bound"] = self.search_bound
        return d


def nu(g: GraphProvider, max_len: int | None = None, exhaustive_limit: int = DEFAULT_EXHAUSTIVE_LIMIT) -> NuValue:
    """sqrt(2) * length of the longest odd cycle of ``g``."""
    if isinstance(g, (LatticeZ, LatticeZd)):
        return NuValue.zero()
    if isinstance(g, CycleZmodL):
        return NuValue.finite(SQRT2 * g.length) if g.length % 2 else NuValue.zero()
    verts = _require_finite(g, "nu")
    if is_bipartite(g):
        return NuValue.zero()
    n = len(verts)
    longest_possible = n if n % 2 else n - 1
    if max_len is None:
        max_len = longest_possible if n <= exhaustive_limit else exhaustive_limit
    if max_len < 3:
        raise ValueError("max_len must be >= 3")
    ceiling = min(longest_possible, max_len if max_len % 2 else max_len - 1)
    best = 0
    for c in iter_simple_cycles(g, max_len, parity=1):
        best = max(best, len(c))
        if best == ceiling:
            break
    exhaustive = n <= exhaustive_limit and (max_len >= longest_possible or best == longest_possible)
    if exhaustive:
        return NuValue.finite(SQRT2 * best)
    # not bipartite, so some odd cycle (length >= 3) exists even if the cap hid it
    return NuValue.lower_bound(SQRT2 * max(best, 3), search_bound=max_len)


# ---------------------------------------------------------------------------
# compact form for the compiled walk loop


@dataclass
class CompactGraph:
    """CSR adjacency over a finite (possibly windowed) vertex set.

    ``labels[i]`` is the vertex label of row ``i``; ``edge_of[j]`` is the index
    into ``edges`` of the edge behind adjacency slot ``j``.
    """

    labels: np.ndarray
    indptr: np.ndarray
    nbr: np.ndarray
    edge_of: np.ndarray
    edges: list[EdgeId]
    index: dict[int, int] | None = field(default=None, repr=False)
    offset: int | None = None  # label -> row is ``label + offset`` for windowed Z

    def row(self, v: int) -> int:
        if self.offset is not None:
            return v + self.offset
        return self.index[v]

    def edge_index(self, e: EdgeId) -> int:
        if self.offset is not None:
            return e[0] + self.offset
        return self._edge_lookup[e]

    def __post_init__(self):
        if self.offset is None:
            self._edge_lookup = {e: i for i, e in enumerate(self.edges)}


def compact(g: GraphProvider, center: int = 0, radius: int | None = None) -> CompactGraph:
    """Materialise ``g`` for the compiled loop.

    Finite graphs are taken whole. ``LatticeZ`` is cut to ``[center-radius,
    center+radius]``; a walk of fewer than ``radius`` steps from ``center``
    cannot tell the difference.
    """
    if isinstance(g, LatticeZ):
        if radius is None:
            raise UnsupportedProvider("LatticeZ needs a radius to be materialised")
        lo = center - radius
        n = 2 * radius + 1
        labels = np.arange(lo, lo + n, dtype=np.int64)
        deg = np.full(n, 2, dtype=np.int64)
        deg[0] = deg[-1] = 1
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(deg, out=indptr[1:])
        nbr = np.empty(indptr[-1], dtype=np.int64)
        edge_of = np.empty(indptr[-1], dtype=np.int64)
        rows = np.arange(n)
        # left neighbour slot first (ascending labels)
        has_left = rows > 0
        left_slot = indptr[:-1][has_left]
        nbr[left_slot] = rows[has_left] - 1
        edge_of[left_slot] = rows[has_left] - 1
        has_right = rows < n - 1
        right_slot = indptr[1:][has_right] - 1
        nbr[right_slot] = rows[has_right] + 1
        edge_of[right_slot] = rows[has_right]
        edges = _LazyZEdges(lo, n - 1)
        return CompactGraph(labels, indptr, nbr, edge_of, edges, offset=-lo)
    if not g.is_finite:
        raise UnsupportedProvider(f"cannot materialise {g.name}")
    verts = g.vertices()
    index = {v: i for i, v in enumerate(verts)}
    edges = g.edges()
    eidx = {e: i for i, e in enumerate(edges)}
    indptr = [0]
    nbr: list[int] = []
    edge_of: list[int] = []
    for v in verts:
        for u in g.neighbors(v):
            nbr.append(index[u])
            edge_of.append(eidx[canonical_edge(u, v)])
        indptr.append(len(nbr))
    return CompactGraph(np.array(verts, dtype=np.int64), np.array(indptr, dtype=np.int64),
                        np.array(nbr, dtype=np.int64), np.array(edge_of, dtype=np.int64), edges, index=index)


class _LazyZEdges(Sequence):
    """Edge list of a windowed Z path without building two million tuples."""

    def __init__(self, lo: int, n: int):
        self._lo, self._n = lo, n

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(self._n))]
        if i < 0:
            i += self._n
        if not 0 <= i < self._n:
            raise IndexError(i)
        a = self._lo + i
        return (a, a + 1)
