"""Reinforcement weight functions and the series built from them.

A weight function is a positive sequence ``W(k)``, ``k >= 1``. Besides
evaluation this module computes

* ``W*(n)``: partial sums of ``1/W``,
* ``alpha_n``: tail sums of ``1/W**2``,
* ``delta_n``: tail total variation of ``1/W``,
* ``W'(n) = W(n) - W(n-1)``,

and classifies a weight against the four hypotheses H0..H3 used by the
attracting-edge results.

Series are evaluated as a compensated partial sum plus a tail interval.
Every family with a closed-form envelope supplies ``_tail(kind, N)``, a
rigorous ``(lo, hi)`` enclosure of the sum of the remaining terms from
index ``N`` on; the estimate is the partial sum plus the midpoint and the
reported ``tail_bound`` is the half width plus a floating point budget.
Black-box weights have no tail rule and fall back to a stabilisation
heuristic, which can never produce an analytic verdict.
"""

from __future__ import annotations

import enum
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from ._kernels import compensated_cumsum, compensated_reverse_cumsum
from .errors import ConfigError, DomainError, NonPositiveWeight, TailUnbounded
from .graphs import NuValue

EPS = sys.float_info.epsilon
LOG_OVERFLOW = 700.0
LOG3 = math.log(3.0)

# term kinds understood by ``_tail`` and the series engine
RECIP = "recip"        # 1/W(k)
RECIP_SQ = "recip_sq"  # 1/W(k)^2
DELTA = "delta"        # |1/W(k) - 1/W(k-1)|, k >= 2
H3 = "h3"              # (W'(k)/W(k))^2, k >= 2

_MIN_INDEX = {RECIP: 1, RECIP_SQ: 1, DELTA: 2, H3: 2}


@dataclass(frozen=True)
class TruncationPolicy:
    max_terms: int = 1_000_000
    target_rel_tail: float = 1e-10
    first_chunk: int = 1024
    # black-box stabilisation: the last ``stab_fraction`` of the terms must
    # contribute less than ``stab_tol`` of the total
    stab_fraction: float = 0.1
    stab_tol: float = 1e-8


DEFAULT_POLICY = TruncationPolicy()


@dataclass(frozen=True)
class SeriesEstimate:
    value: float
    tail_bound: float
    terms_used: int
    exact: bool

    def __post_init__(self):
        if not self.tail_bound >= 0:
            raise ValueError("tail_bound must be >= 0")
        if self.exact and self.tail_bound != 0:
            raise ValueError("exact estimates carry no tail")

    def to_dict(self) -> dict:
        return {"value": self.value, "tail_bound": self.tail_bound,
                "terms_used": self.terms_used, "exact": self.exact}


def _power_sum_interval(coef: float, p: float, start: float, step: float) -> tuple[float, float]:
    """Enclosure of ``sum_{j>=0} coef * (start + step*j)**-p`` for ``start > 0``.

    Integral test for a decreasing summand: the sum lies between the integral
    from 0 and the integral plus the first term.
    """
    if coef == 0:
        return 0.0, 0.0
    if p <= 1:
        return math.inf, math.inf
    integral = coef * start ** (1.0 - p) / (step * (p - 1.0))
    return integral, integral + coef * start ** -p


def _geometric(first: float, ratio: float) -> float:
    return first / (1.0 - ratio)


def _first_with_parity(N: int, parity: int) -> int:
    return N if N % 2 == parity else N + 1


class WeightFunction:
    """Positive weight sequence ``W(k)``, ``k >= 1``.

    Subclasses implement ``_value`` and ``_log`` (scalar) and ``_log_vec``
    (vectorised). ``monotone`` is ``"yes"`` for nondecreasing sequences,
    ``"no"`` when known not to be, ``"unknown"`` otherwise.
    """

    monotone = "unknown"
    analytic_tails = False
    spec = "custom"
    #: smallest N for which ``_tail`` may be asked
    min_tail_start = 2

    def __init__(self):
        self._logs = np.zeros(1)
        self._recips = np.full(1, np.nan)
        self._wstar = np.zeros(1)

    # -- scalar evaluation -------------------------------------------------
    def _value(self, k: int) -> float:
        raise NotImplementedError

    def _log(self, k: int) -> float:
        return math.log(self._value(k))

    def eval(self, k: int) -> float:
        """``W(k)``; ``inf`` if it overflows a double (use ``log_eval`` then)."""
        k = self._check_index(k)
        return self._value(k)

    __call__ = eval

    def log_eval(self, k: int) -> float:
        return self._log(self._check_index(k))

    @staticmethod
    def _check_index(k) -> int:
        if isinstance(k, float) and not k.is_integer():
            raise DomainError(f"W is defined on integers, got {k}")
        k = int(k)
        if k < 1:
            raise DomainError(f"W(k) needs k >= 1, got {k}")
        return k

    def _recip_scalar(self, k: int) -> float:
        lw = self._log(k)
        if lw > LOG_OVERFLOW:
            return math.exp(-lw)
        return 1.0 / self._value(k)

    def recip(self, k: int) -> float:
        """``1/W(k)``, evaluated without overflow."""
        k = self._check_index(k)
        if k < len(self._recips):
            return float(self._recips[k])
        return self._recip_scalar(k)

    # -- cached tables shared by the walk engines ----------------------------
    def _grow(self, n: int) -> None:
        old = len(self._logs)
        if n < old:
            return
        new = max(n + 1, 2 * old, 1024)
        ks = range(old, new)
        logs = np.fromiter((self._log(k) if k else 0.0 for k in ks), dtype=np.float64, count=new - old)
        recips = np.fromiter((self._recip_scalar(k) if k else np.nan for k in ks), dtype=np.float64,
                             count=new - old)
        self._logs = np.concatenate([self._logs, logs])
        self._recips = np.concatenate([self._recips, recips])

    def log_table(self, n: int) -> np.ndarray:
        """Array ``t`` with ``t[k] = log W(k)`` for ``1 <= k <= n`` (``t[0]`` unused)."""
        self._grow(n)
        return self._logs

    def recip_table(self, n: int) -> np.ndarray:
        self._grow(n)
        return self._recips

    def w_star_table(self, n: int) -> np.ndarray:
        """``t[k] = W*(k)`` for ``0 <= k <= n``, compensated cumulative sums."""
        if len(self._wstar) <= n:
            r = self.recip_table(n).copy()
            r[0] = 0.0
            self._wstar = compensated_cumsum(r)
        return self._wstar

    # -- vectorised terms for series -----------------------------------------
    def _log_vec(self, ks: np.ndarray) -> np.ndarray:
        return np.fromiter((self._log(int(k)) for k in ks), dtype=np.float64, count=len(ks))

    def _recip_vec(self, ks: np.ndarray) -> np.ndarray:
        return np.exp(-self._log_vec(ks))

    def _terms(self, kind: str, ks: np.ndarray) -> np.ndarray:
        if kind == RECIP:
            return self._recip_vec(ks)
        if kind == RECIP_SQ:
            r = self._recip_vec(ks)
            return r * r
        if kind == DELTA:
            return np.abs(self._recip_vec(ks) - self._recip_vec(ks - 1))
        if kind == H3:
            with np.errstate(over="ignore"):
                return np.expm1(self._log_vec(ks - 1) - self._log_vec(ks)) ** 2
        raise ValueError(kind)

    def _term_error_scale(self, ks: np.ndarray) -> np.ndarray:
        """Per-term relative rounding scale (terms built from exp(-log W))."""
        return 1.0 + np.abs(self._log_vec(ks))

    # -- analytic information ----------------------------------------------
    def _tail(self, kind: str, N: int) -> tuple[float, float] | None:
        """Enclosure of ``sum_{k>=N} term_k`` or ``None`` when unknown."""
        if kind == DELTA and self.monotone == "yes":
            # telescoping: sum_{k>=N} (1/W(k-1) - 1/W(k)) = 1/W(N-1) - lim 1/W
            top = self.recip(N - 1)
            if self.limit_recip is not None:
                v = top - self.limit_recip
                return v, v
            return 0.0, top
        return None

    #: lim 1/W(k) when known
    limit_recip: float | None = None

    def describe(self) -> dict:
        return {"spec": self.spec, "monotone": self.monotone, "analytic_tails": self.analytic_tails}

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.spec}>"


class Power(WeightFunction):
    """``W(k) = k**rho``."""

    monotone = "yes"
    analytic_tails = True

    def __init__(self, rho: float):
        super().__init__()
        rho = float(rho)
        if not rho >= 0 or math.isinf(rho):
            raise DomainError(f"power exponent must be finite and >= 0, got {rho}")
        self.rho = rho
        self._int_rho = int(rho) if rho.is_integer() and rho <= 64 else None
        self.spec = f"power:{_fmt(rho)}"
        self.limit_recip = 0.0 if rho > 0 else 1.0

    def _value(self, k: int) -> float:
        if self._int_rho is not None:
            return float(k ** self._int_rho)
        return float(k) ** self.rho

    def _log(self, k: int) -> float:
        return self.rho * math.log(k)

    def _log_vec(self, ks):
        return self.rho * np.log(ks.astype(np.float64))

    def _recip_vec(self, ks):
        return np.power(ks.astype(np.float64), -self.rho)

    def _terms(self, kind, ks):
        if kind == RECIP_SQ:
            return np.power(ks.astype(np.float64), -2.0 * self.rho)
        if kind == H3:
            k = ks.astype(np.float64)
            return np.expm1(self.rho * np.log1p(-1.0 / k)) ** 2
        return super()._terms(kind, ks)

    def _term_error_scale(self, ks):
        return np.full(len(ks), 4.0)

    def _tail(self, kind, N):
        if kind == RECIP:
            return _power_sum_interval(1.0, self.rho, N, 1.0)
        if kind == RECIP_SQ:
            return _power_sum_interval(1.0, 2.0 * self.rho, N, 1.0)
        if kind == H3:
            # mean value theorem: 1 - (1-1/k)**rho = rho * xi**(rho-1) / k with
            # 1-1/k < xi < 1, so each term sits between rho^2/k^2 and
            # rho^2 c/k^2 where c = (1-1/N)**(2 rho - 2) for every k >= N
            c = (1.0 - 1.0 / N) ** (2.0 * self.rho - 2.0)
            r2 = self.rho ** 2
            return r2 * min(1.0, c) / N, r2 * max(1.0, c) / (N - 1)
        return super()._tail(kind, N)


class Exponential(WeightFunction):
    """``W(k) = base**k`` with ``base > 1``."""

    monotone = "yes"
    analytic_tails = True
    limit_recip = 0.0

    def __init__(self, base: float):
        super().__init__()
        base = float(base)
        if not base > 1 or math.isinf(base):
            raise DomainError(f"exponential base must be > 1, got {base}")
        self.base = base
        self.log_base = math.log(base)
        self.spec = f"exp:{_fmt(base)}"

    def _value(self, k):
        try:
            return self.base ** k
        except OverflowError:
            return math.inf

    def _log(self, k):
        return k * self.log_base

    def _log_vec(self, ks):
        return ks.astype(np.float64) * self.log_base

    def _tail(self, kind, N):
        if kind == RECIP:
            v = _geometric(math.exp(-N * self.log_base), 1.0 / self.base)
            return v, v
        if kind == RECIP_SQ:
            v = _geometric(math.exp(-2 * N * self.log_base), self.base ** -2)
            return v, v
        if kind == H3:
            return math.inf, math.inf  # constant terms (1 - 1/b)^2
        return super()._tail(kind, N)

    def log_recip_tail(self, n: int) -> float:
        return -n * self.log_base - math.log1p(-1.0 / self.base)


class SellkeOscillating(WeightFunction):
    """``W(k) = k**(1+rho) / (2 + (-1)**k)``: even k divides by 3, odd k by 1."""

    monotone = "no"
    analytic_tails = True
    limit_recip = 0.0

    def __init__(self, rho: float):
        super().__init__()
        rho = float(rho)
        if not rho >= 0 or math.isinf(rho):
            raise DomainError(f"rho must be finite and >= 0, got {rho}")
        self.rho = rho
        self.a = 1.0 + rho
        self.spec = f"sellke:{_fmt(rho)}"
        # even-k delta terms are positive once (k/(k-1))**a < 3
        k = 2
        while (k / (k - 1)) ** self.a >= 3.0:
            k += 2
        self.min_tail_start = k

    def _value(self, k):
        return float(k) ** self.a / (3.0 if k % 2 == 0 else 1.0)

    def _log(self, k):
        return self.a * math.log(k) - (LOG3 if k % 2 == 0 else 0.0)

    def _log_vec(self, ks):
        return self.a * np.log(ks.astype(np.float64)) - np.where(ks % 2 == 0, LOG3, 0.0)

    def _recip_vec(self, ks):
        return np.power(ks.astype(np.float64), -self.a) * np.where(ks % 2 == 0, 3.0, 1.0)

    def _term_error_scale(self, ks):
        return np.full(len(ks), 8.0)

    def _tail(self, kind, N):
        a = self.a
        e0, o0 = _first_with_parity(N, 0), _first_with_parity(N, 1)
        if kind in (RECIP, RECIP_SQ):
            p, ce = (a, 3.0) if kind == RECIP else (2 * a, 9.0)
            lo_e, hi_e = _power_sum_interval(ce, p, e0, 2.0)
            lo_o, hi_o = _power_sum_interval(1.0, p, o0, 2.0)
            return lo_e + lo_o, hi_e + hi_o
        if kind == DELTA:
            if N < self.min_tail_start:
                return None
            # even k: 3 k^-a - (k-1)^-a ; odd k: 3 (k-1)^-a - k^-a
            pos = [_power_sum_interval(3.0, a, e0, 2.0), _power_sum_interval(3.0, a, o0 - 1, 2.0)]
            neg = [_power_sum_interval(1.0, a, e0 - 1, 2.0), _power_sum_interval(1.0, a, o0, 2.0)]
            if math.isinf(pos[0][0]):
                return math.inf, math.inf
            lo = sum(x[0] for x in pos) - sum(x[1] for x in neg)
            hi = sum(x[1] for x in pos) - sum(x[0] for x in neg)
            return max(lo, 0.0), hi
        if kind == H3:
            return math.inf, math.inf  # terms tend to 4 and 4/9
        return None


class ExpOscillating(WeightFunction):
    """``W(k) = exp(k * (2 + (-1)**k))``: ``e**(3k)`` for even k, ``e**k`` for odd k."""

    monotone = "no"
    analytic_tails = True
    limit_recip = 0.0
    spec = "exposc"
    min_tail_start = 2

    def _log(self, k):
        return float(k * (3 if k % 2 == 0 else 1))

    def _value(self, k):
        lw = self._log(k)
        return math.exp(lw) if lw < 709 else math.inf

    def _log_vec(self, ks):
        return ks.astype(np.float64) * np.where(ks % 2 == 0, 3.0, 1.0)

    def _tail(self, kind, N):
        e0, o0 = _first_with_parity(N, 0), _first_with_parity(N, 1)
        e = math.exp
        if kind == RECIP:
            v = _geometric(e(-3 * e0), e(-6)) + _geometric(e(-o0), e(-2))
        elif kind == RECIP_SQ:
            v = _geometric(e(-6 * e0), e(-12)) + _geometric(e(-2 * o0), e(-4))
        elif kind == DELTA:
            if N < 2:
                return None
            # even k: e^-(k-1) - e^-3k ; odd k >= 3: e^-k - e^-3(k-1)
            v = (_geometric(e(-(e0 - 1)), e(-2)) - _geometric(e(-3 * e0), e(-6))
                 + _geometric(e(-o0), e(-2)) - _geometric(e(-3 * (o0 - 1)), e(-6)))
        elif kind == H3:
            return math.inf, math.inf
        else:
            return None
        return v, v

    def log_recip_tail(self, n: int) -> float:
        e0, o0 = _first_with_parity(n, 0), _first_with_parity(n, 1)
        return float(np.logaddexp(-3.0 * e0 - math.log1p(-math.exp(-6)), -float(o0) - math.log1p(-math.exp(-2))))


class Table(WeightFunction):
    """Finite prefix ``W(1..n)`` followed by a declared tail rule.

    ``tail`` is ``"constant"`` (repeat the last value) or another weight
    function evaluated at the same index.
    """

    analytic_tails = True

    def __init__(self, values: Iterable[float], tail: "str | WeightFunction" = "constant", source: str = ""):
        super().__init__()
        vals = [float(v) for v in values]
        if not vals:
            raise DomainError("table needs at least one value")
        for i, v in enumerate(vals, 1):
            if not (v > 0 and math.isfinite(v)):
                raise NonPositiveWeight(f"table entry W({i}) = {v} is not positive and finite")
        self.values = np.array(vals)
        self.n = len(vals)
        if isinstance(tail, str) and tail != "constant":
            raise DomainError(f"unknown tail rule {tail!r}")
        self.tail = tail
        self.spec = f"table:{source}" if source else f"table[{self.n}]"
        nondecr = bool(np.all(np.diff(self.values) >= 0))
        if tail == "constant":
            self.limit_recip = 1.0 / vals[-1]
            self.monotone = "yes" if nondecr else "no"
        else:
            self.analytic_tails = tail.analytic_tails
            self.limit_recip = tail.limit_recip
            if not nondecr:
                self.monotone = "no"
            elif tail.monotone == "yes" and tail.eval(self.n + 1) >= vals[-1]:
                self.monotone = "yes"
            else:
                self.monotone = "unknown"
        self.min_tail_start = self.n + 2 if tail == "constant" else max(self.n + 2, tail.min_tail_start)

    @classmethod
    def from_file(cls, path: str | Path, tail="constant") -> "Table":
        vals = []
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                vals.append(float(line))
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: not a number: {raw!r}") from None
        return cls(vals, tail=tail, source=str(path))

    def _value(self, k):
        if k <= self.n:
            return float(self.values[k - 1])
        return float(self.values[-1]) if self.tail == "constant" else self.tail._value(k)

    def _log(self, k):
        if k <= self.n or self.tail == "constant":
            return math.log(self._value(k))
        return self.tail._log(k)

    def _log_vec(self, ks):
        out = np.empty(len(ks))
        inside = ks <= self.n
        out[inside] = np.log(self.values[ks[inside] - 1])
        if self.tail == "constant":
            out[~inside] = math.log(self.values[-1])
        else:
            out[~inside] = self.tail._log_vec(ks[~inside])
        return out

    def _tail(self, kind, N):
        if N < self.n + 2:
            return None
        if self.tail != "constant":
            return self.tail._tail(kind, N)
        if kind in (RECIP, RECIP_SQ):
            return math.inf, math.inf
        return 0.0, 0.0


class Custom(WeightFunction):
    """Black-box evaluation rule. Only heuristic verdicts are possible."""

    def __init__(self, rule: Callable[[int], float], monotone: str = "unknown", name: str = "custom"):
        super().__init__()
        if monotone not in ("yes", "no", "unknown"):
            raise ValueError("monotone must be 'yes', 'no' or 'unknown'")
        self.rule = rule
        self.monotone = monotone
        self.spec = name

    def _value(self, k):
        v = float(self.rule(k))
        if not v > 0:
            raise NonPositiveWeight(f"W({k}) = {v} is not positive")
        if math.isnan(v) or math.isinf(v):
            raise NonPositiveWeight(f"W({k}) = {v} is not finite")
        return v


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def parse_weight(spec: str) -> WeightFunction:
    """``"power:1.5"``, ``"exp:2"``, ``"sellke:1"``, ``"exposc"``, ``"table:<path>"``."""
    s = spec.strip()
    name, _, arg = s.partition(":")
    try:
        if name == "power":
            return Power(float(arg))
        if name == "exp":
            return Exponential(float(arg))
        if name == "sellke":
            return SellkeOscillating(float(arg))
        if name == "exposc" and not arg:
            return ExpOscillating()
        if name == "table" and arg:
            return Table.from_file(arg)
    except (ValueError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad weight spec {spec!r}: {exc}") from None
    raise ConfigError(f"unknown weight spec {spec!r}")


# ---------------------------------------------------------------------------
# series


def w_star(w: WeightFunction, n: int) -> float:
    """``W*(n) = sum_{k=1}^n 1/W(k)``; ``W*(0) = 0``."""
    if n < 0:
        raise DomainError(f"W*(n) needs n >= 0, got {n}")
    return float(w.w_star_table(n)[n])


def w_prime(w: WeightFunction, n: int) -> float:
    """``W'(n) = W(n) - W(n-1)`` for ``n >= 2``."""
    if n < 2:
        raise DomainError(f"W'(n) needs n >= 2, got {n}")
    return w.eval(n) - w.eval(n - 1)


@dataclass
class _Partial:
    total: float = 0.0
    abs_err: float = 0.0
    used: int = 0
    chunks: list = field(default_factory=list)


def _series(w: WeightFunction, kind: str, start: int, policy: TruncationPolicy) -> SeriesEstimate:
    """``sum_{k >= start} term_k`` with a rigorous or heuristic tail."""
    start = max(start, _MIN_INDEX[kind])
    closed = w._tail(kind, start) if start >= w.min_tail_start else None
    if closed is not None and closed[0] == closed[1]:
        v = closed[0]
        return SeriesEstimate(v, 0.0, 0, True)
    if closed is not None and math.isinf(closed[0]):
        return SeriesEstimate(math.inf, 0.0, 0, True)

    acc = _Partial()
    N = start
    chunk = policy.first_chunk
    tail = None
    while acc.used < policy.max_terms:
        size = min(chunk, policy.max_terms - acc.used)
        ks = np.arange(N, N + size, dtype=np.int64)
        terms = w._terms(kind, ks)
        acc.chunks.append(math.fsum(terms))
        acc.abs_err += 8 * EPS * float(np.sum(np.abs(terms) * w._term_error_scale(ks)))
        acc.used += size
        N += size
        chunk *= 4
        if N >= w.min_tail_start:
            tail = w._tail(kind, N)
        if tail is not None:
            if math.isinf(tail[0]):
                return SeriesEstimate(math.inf, 0.0, acc.used, True)
            partial = math.fsum(acc.chunks)
            half = (tail[1] - tail[0]) / 2
            if half <= policy.target_rel_tail * abs(partial + tail[0]):
                break
        elif kind != DELTA and _stabilised(acc, policy):
            break
    partial = math.fsum(acc.chunks)
    rounding = acc.abs_err + 2 * EPS * abs(partial)
    if tail is not None:
        mid = (tail[0] + tail[1]) / 2
        return SeriesEstimate(partial + mid, (tail[1] - tail[0]) / 2 + rounding, acc.used, False)
    if _stabilised(acc, policy):
        last = _last_fraction(acc, policy)
        return SeriesEstimate(partial, last + rounding, acc.used, False)
    raise TailUnbounded(f"{kind} series of {w.spec} from {start} did not stabilise in {acc.used} terms")


def _last_fraction(acc: _Partial, policy: TruncationPolicy) -> float:
    # chunks grow geometrically (x4) so the last chunk holds >= 3/4 of the
    # most recent terms; use it as the "last fraction" contribution
    return abs(acc.chunks[-1]) if len(acc.chunks) > 1 else abs(acc.chunks[0])


def _stabilised(acc: _Partial, policy: TruncationPolicy) -> bool:
    if len(acc.chunks) < 3:
        return False
    total = math.fsum(acc.chunks)
    if total == 0:
        return True
    return _last_fraction(acc, policy) < policy.stab_tol * abs(total)


def reciprocal_tail(w: WeightFunction, n: int, policy: TruncationPolicy = DEFAULT_POLICY) -> SeriesEstimate:
    """``sum_{k >= n} 1/W(k)``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    return _series(w, RECIP, n, policy)


def alpha_n(w: WeightFunction, n: int, policy: TruncationPolicy = DEFAULT_POLICY) -> SeriesEstimate:
    """``alpha_n = sum_{k >= n} 1/W(k)**2``."""
    if n < 1:
        raise DomainError(f"alpha_n needs n >= 1, got {n}")
    return _series(w, RECIP_SQ, n, policy)


def delta_n(w: WeightFunction, n: int, policy: TruncationPolicy = DEFAULT_POLICY) -> SeriesEstimate:
    """``delta_n = sum_{k > n} |1/W(k) - 1/W(k-1)|``.

    ``n >= 1``: the ``k = 1`` term would need ``W(0)``, which is undefined.
    For nondecreasing families the sum telescopes to ``1/W(n) - lim 1/W``.
    """
    if n < 1:
        raise DomainError(f"delta_n needs n >= 1 (W(0) is undefined), got {n}")
    if w.monotone == "yes" and w.limit_recip is not None:
        return SeriesEstimate(w.recip(n) - w.limit_recip, 0.0, 0, True)
    est = _series(w, DELTA, n + 1, policy)
    return est


def _tail_table(w: WeightFunction, kind: str, lo: int, hi: int,
                policy: TruncationPolicy) -> tuple[np.ndarray, float]:
    """``out[i] = sum_{k >= lo+i} term_k`` for ``lo <= lo+i <= hi`` and a shared error bound."""
    lo = max(lo, _MIN_INDEX[kind])
    extra = max(hi - lo + 1, policy.first_chunk)
    N = max(hi + 1 + extra, w.min_tail_start)
    tail = w._tail(kind, N)
    if tail is None or tail[0] != tail[1]:
        # no closed form, or only an enclosure: sum further so the enclosure is tight
        N = max(N, hi + 1 + policy.max_terms)
        tail = w._tail(kind, N)
    ks = np.arange(lo, N, dtype=np.int64)
    terms = w._terms(kind, ks)
    rev = compensated_reverse_cumsum(terms)
    err = 8 * EPS * float(np.sum(np.abs(terms) * w._term_error_scale(ks)))
    if tail is None:
        # heuristic: what the last tenth of the evaluated terms contributed
        cut = len(terms) - max(1, len(terms) // 10)
        contrib = float(rev[cut])
        if contrib >= policy.stab_tol * float(rev[0]) and rev[0] != 0:
            raise TailUnbounded(f"{kind} tail of {w.spec} did not stabilise")
        return rev[: hi - lo + 1], contrib + err
    if math.isinf(tail[0]):
        return np.full(hi - lo + 1, math.inf), 0.0
    mid = (tail[0] + tail[1]) / 2
    return rev[: hi - lo + 1] + mid, (tail[1] - tail[0]) / 2 + err


def alpha_values(w: WeightFunction, lo: int, hi: int, policy: TruncationPolicy = DEFAULT_POLICY) -> np.ndarray:
    """``alpha_n`` for every ``n`` in ``[lo, hi]``."""
    return _tail_table(w, RECIP_SQ, lo, hi, policy)[0]


def delta_values(w: WeightFunction, lo: int, hi: int, policy: TruncationPolicy = DEFAULT_POLICY) -> np.ndarray:
    """``delta_n`` for every ``n`` in ``[lo, hi]``, ``lo >= 1``."""
    if lo < 1:
        raise DomainError("delta_n needs n >= 1")
    if w.monotone == "yes" and w.limit_recip is not None:
        return w.recip_table(hi)[lo: hi + 1] - w.limit_recip
    return _tail_table(w, DELTA, lo + 1, hi + 1, policy)[0]


class DeltaLookup:
    """Cached ``delta_k`` for the excursion bookkeeping, grown on demand."""

    def __init__(self, w: WeightFunction, policy: TruncationPolicy = DEFAULT_POLICY):
        self.w = w
        self.policy = policy
        self._table = np.zeros(1)
        self._exact = w.monotone == "yes" and w.limit_recip is not None

    def __call__(self, k: int) -> float:
        if self._exact:
            return self.w.recip(k) - self.w.limit_recip
        if k >= len(self._table):
            hi = max(2 * k, 1024)
            self._table = np.concatenate([[np.nan], delta_values(self.w, 1, hi, self.policy)])
        return float(self._table[k])


# ---------------------------------------------------------------------------
# hypothesis checks


class Status(str, enum.Enum):
    HOLDS_ANALYTIC = "HoldsAnalytic"
    FAILS_ANALYTIC = "FailsAnalytic"
    LIKELY_HOLDS = "LikelyHolds"
    LIKELY_FAILS = "LikelyFails"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class HypothesisVerdict:
    hypothesis: str
    status: Status
    evidence: list[tuple[int, float]] = field(default_factory=list)
    caveat: str = ""
    estimate: float | None = None

    def to_dict(self) -> dict:
        return {"hypothesis": self.hypothesis, "status": self.status.value,
                "estimate": self.estimate,
                "evidence": [[int(n), float(v)] for n, v in self.evidence],
                "caveat": self.caveat}


_LIMINF_CAVEAT = "minimum over a finite window; a liminf cannot be certified numerically"


def _log_grid(lo: int, hi: int, count: int = 16) -> np.ndarray:
    pts = np.unique(np.round(np.geomspace(lo, hi, count)).astype(np.int64))
    return pts[(pts >= lo) & (pts <= hi)]


def _partial_sum_evidence(w: WeightFunction, kind: str, upto: int) -> list[tuple[int, float]]:
    first = _MIN_INDEX[kind]
    ks = np.arange(first, upto + 1, dtype=np.int64)
    sums = compensated_cumsum(w._terms(kind, ks))
    out = []
    n = 10
    while n <= upto:
        out.append((n, float(sums[n - first])))
        n *= 10
    return out


def _heuristic_divergence(w: WeightFunction, kind: str, policy: TruncationPolicy) -> tuple[Status, list, str]:
    """Black-box verdict from partial sums over three decades."""
    N = policy.max_terms
    first = _MIN_INDEX[kind]
    ks = np.arange(first, N + 1, dtype=np.int64)
    sums = compensated_cumsum(w._terms(kind, ks))
    S = lambda n: float(sums[n - first])  # noqa: E731
    total = S(N)
    evidence = []
    n = 10
    while n <= N:
        evidence.append((n, S(n)))
        n *= 10
    last = total - S(int(N * (1 - policy.stab_fraction)))
    recent = total - S(N // 10)
    before = S(N // 10) - S(max(N // 100, first))
    ratio = recent / before if before > 0 else math.inf
    if total == 0 or last < policy.stab_tol * total:
        return Status.LIKELY_HOLDS, evidence, "partial sums stabilised (heuristic; black-box weight)"
    if ratio >= 0.9:
        return Status.LIKELY_FAILS, evidence, (
            f"decade increments not shrinking (ratio {ratio:.3g}); heuristic divergence signal")
    return Status.INCONCLUSIVE, evidence, (
        f"partial sums still growing slowly (decade ratio {ratio:.3g}); convergence undecidable here")


def _analytic_convergence(w: WeightFunction, kind: str) -> bool | None:
    """True/False when the family's tail rule settles convergence."""
    if not w.analytic_tails:
        return None
    N = max(w.min_tail_start, 1024)
    t = w._tail(kind, N)
    if t is None:
        return None
    return not math.isinf(t[0])


def check_h0(w: WeightFunction, policy: TruncationPolicy = DEFAULT_POLICY) -> HypothesisVerdict:
    """H0: ``sum 1/W(k) < inf``."""
    conv = _analytic_convergence(w, RECIP)
    if conv is not None:
        ev = _partial_sum_evidence(w, RECIP, min(policy.max_terms, 100_000))
        status = Status.HOLDS_ANALYTIC if conv else Status.FAILS_ANALYTIC
        return HypothesisVerdict("H0", status, ev, "from the family's closed-form tail rule")
    status, ev, caveat = _heuristic_divergence(w, RECIP, policy)
    return HypothesisVerdict("H0", status, ev, caveat)


def check_h3(w: WeightFunction, policy: TruncationPolicy = DEFAULT_POLICY) -> HypothesisVerdict:
    """H3: ``sum_{n>=2} (W'(n)/W(n))**2 < inf``."""
    conv = _analytic_convergence(w, H3)
    if conv is not None:
        ev = _partial_sum_evidence(w, H3, min(policy.max_terms, 100_000))
        caveat = "from the family's closed-form tail rule"
        est = None
        if conv:
            est = _series(w, H3, 2, policy).value
        else:
            caveat += "; terms do not vanish"
        h0 = _analytic_convergence(w, RECIP)
        if conv and h0 is False:
            caveat += "; H0 fails, so H3 alone does not give an attracting edge"
        status = Status.HOLDS_ANALYTIC if conv else Status.FAILS_ANALYTIC
        return HypothesisVerdict("H3", status, ev, caveat, est)
    status, ev, caveat = _heuristic_divergence(w, H3, policy)
    return HypothesisVerdict("H3", status, ev, caveat)


def _check_window(window) -> tuple[int, int]:
    lo, hi = int(window[0]), int(window[1])
    if lo < 1 or hi < lo:
        raise DomainError(f"window must satisfy 1 <= lo <= hi, got {window}")
    return lo, hi


def h1_ratios(w: WeightFunction, window, policy: TruncationPolicy = DEFAULT_POLICY) -> np.ndarray:
    """``delta_n / sqrt(alpha_n)`` for every ``n`` in the window."""
    lo, hi = _check_window(window)
    d = delta_values(w, lo, hi, policy)
    a = alpha_values(w, lo, hi, policy)
    with np.errstate(divide="ignore", invalid="ignore"):
        return d / np.sqrt(a)


def check_h1(w: WeightFunction, nu_value: NuValue, window=(1000, 100_000),
             policy: TruncationPolicy = DEFAULT_POLICY) -> HypothesisVerdict:
    """H1: ``nu(G) * liminf delta_n / sqrt(alpha_n) < 1`` with ``0 * inf = 0``."""
    lo, hi = _check_window(window)
    if nu_value.kind == "zero":
        return HypothesisVerdict("H1", Status.HOLDS_ANALYTIC, [],
                                 "no odd cycle: H1 holds for any value of the liminf", None)
    ratios = h1_ratios(w, (lo, hi), policy)
    if np.any(np.isinf(alpha_values(w, lo, lo, policy))):
        return HypothesisVerdict("H1", Status.INCONCLUSIVE, [],
                                 "alpha_n diverges (sum 1/W^2 infinite); H1 is meaningless here", None)
    i_min = int(np.argmin(ratios))
    est = float(ratios[i_min])
    grid = _log_grid(lo, hi)
    evidence = [(int(n), float(ratios[n - lo])) for n in grid]
    if lo + i_min not in grid:
        evidence.append((lo + i_min, est))
        evidence.sort()
    product = nu_value.value * est
    caveat = f"{_LIMINF_CAVEAT}; nu * estimate = {product:.6g}"
    if nu_value.kind == "lower_bound":
        caveat += "; nu is only a lower bound"
        status = Status.LIKELY_FAILS if product >= 1 else Status.INCONCLUSIVE
    else:
        status = Status.LIKELY_HOLDS if product < 1 else Status.LIKELY_FAILS
    h3 = _analytic_convergence(w, H3)
    if h3:
        caveat += "; H3 holds for this family, which forces the liminf to 0"
    return HypothesisVerdict("H1", status, evidence, caveat, est)


def _log_recip_tails(w: WeightFunction, lo: int, hi: int, policy: TruncationPolicy) -> np.ndarray:
    if hasattr(w, "log_recip_tail"):
        return np.array([w.log_recip_tail(n) for n in range(lo, hi + 1)])
    vals, _ = _tail_table(w, RECIP, lo, hi, policy)
    with np.errstate(divide="ignore"):
        return np.log(vals)


def h2_products(w: WeightFunction, window, policy: TruncationPolicy = DEFAULT_POLICY) -> np.ndarray:
    """``(max_{1<=j<n} W(j)) * sum_{k>=n} 1/W(k)`` for ``n`` in the window, in log space."""
    lo, hi = _check_window(window)
    lo = max(lo, 2)
    logs = w.log_table(hi)[1: hi]  # log W(1..hi-1)
    run_max = np.maximum.accumulate(logs)  # run_max[i] = max log W(1..i+1)
    log_max_below = run_max[lo - 2: hi - 1]  # for n in [lo, hi]: max over j < n
    with np.errstate(over="ignore"):
        return np.exp(log_max_below + _log_recip_tails(w, lo, hi, policy))


def check_h2(w: WeightFunction, window=(10, 1000), policy: TruncationPolicy = DEFAULT_POLICY) -> HypothesisVerdict:
    """H2 (sticky weights): ``liminf (max_{j<n} W(j)) sum_{k>=n} 1/W(k) < inf``.

    ``j`` runs over ``1 <= j < n`` since ``W(0)`` is not defined.
    """
    lo, hi = _check_window(window)
    lo = max(lo, 2)
    hi = max(hi, lo)
    if _analytic_convergence(w, RECIP) is False:
        return HypothesisVerdict("H2", Status.FAILS_ANALYTIC, [], "sum 1/W diverges, every product is infinite",
                                 math.inf)
    prods = h2_products(w, (lo, hi), policy)
    grid = _log_grid(lo, hi)
    evidence = [(int(n), float(prods[n - lo])) for n in grid]
    est = float(np.min(prods))
    if isinstance(w, Power):
        # (n-1)^rho * sum_{k>=n} k^-rho ~ n/(rho-1) grows without bound
        return HypothesisVerdict("H2", Status.FAILS_ANALYTIC, evidence,
                                 "closed form: the product grows like n/(rho-1)", est)
    mid = int(round(math.sqrt(lo * hi)))
    lo_min = float(np.min(prods[: max(mid - lo, 1)]))
    hi_min = float(np.min(prods[max(mid - lo, 0):]))
    if not math.isfinite(est):
        return HypothesisVerdict("H2", Status.INCONCLUSIVE, evidence, "products not finite in window", est)
    if hi_min > 2 * lo_min:
        status, note = Status.LIKELY_FAILS, "products keep growing across the window"
    else:
        status, note = Status.LIKELY_HOLDS, "products stay bounded across the window"
    return HypothesisVerdict("H2", status, evidence, f"{_LIMINF_CAVEAT}; {note}", est)


def theta_membership(w: WeightFunction, n: int, a: float, ell: int,
                     policy: TruncationPolicy = DEFAULT_POLICY) -> bool:
    """Pointwise test ``delta_n <= a * sqrt(alpha_n) / sqrt(2) / ell``.

    Says nothing about whether infinitely many ``n`` pass.
    """
    return delta_n(w, n, policy).value <= a * math.sqrt(alpha_n(w, n, policy).value) / (math.sqrt(2) * ell)


def sticky_lower_bound(w: WeightFunction, m: int, d: int, policy: TruncationPolicy = DEFAULT_POLICY) -> float:
    """Certified lower bound on ``prod_{k>=0} W(m+k) / (W(m+k) + d * max_{j<m} W(j))``.

    This is the chance that a walk which has just pushed one edge to count
    ``m`` (all others below ``m``, at most ``d`` competitors per endpoint)
    never leaves that edge. The product is accumulated in log space until the
    next factor's deficit drops below ``policy.target_rel_tail``; the rest is
    bounded below by ``1 - d*M*sum_{j>=m+K} 1/W(j)``. Returns 0 when that
    companion sum cannot be bounded (the bound degenerates).
    """
    if m < 2:
        raise DomainError("m must be >= 2: with X_0 >= 1 no edge can sit below count 1")
    if d < 1:
        raise DomainError("d must be >= 1")
    if _analytic_convergence(w, RECIP) is False:
        return 0.0
    logs = w.log_table(m + 1)
    log_m = float(np.max(logs[1:m]))
    log_dm = math.log(d) + log_m
    log_prod = 0.0
    K = 0
    while K < policy.max_terms:
        ratio = math.exp(min(log_dm - w.log_eval(m + K), LOG_OVERFLOW))
        log_prod -= math.log1p(ratio)
        K += 1
        if ratio / (1 + ratio) < policy.target_rel_tail:
            break
    try:
        rest = reciprocal_tail(w, m + K, policy)
    except TailUnbounded:
        return 0.0
    if math.isinf(rest.value):
        return 0.0
    tail_upper = rest.value + rest.tail_bound
    log_rest = log_dm + math.log(tail_upper) if tail_upper > 0 else -math.inf
    factor = 1.0 - math.exp(log_rest) if log_rest < LOG_OVERFLOW else -1.0
    if factor <= 0:
        return 0.0
    # each log1p/exp carries a relative rounding error of a few ulps
    cushion = 1.0 - 8.0 * (K + 4) * EPS
    return min(math.exp(log_prod) * factor * cushion, math.nextafter(1.0, 0.0))


def sticky_companion_sum(w: WeightFunction, m: int, d: int, policy: TruncationPolicy = DEFAULT_POLICY) -> float:
    """``sum_{k>=0} M / (W(m+k) + d*M)`` with ``M = max_{1<=j<m} W(j)``; inf when it diverges."""
    if m < 2 or d < 1:
        raise DomainError("need m >= 2 and d >= 1")
    if _analytic_convergence(w, RECIP) is False:
        return math.inf
    logs = w.log_table(m + 1)
    log_m = float(np.max(logs[1:m]))
    K = min(policy.max_terms, 100_000)
    ks = np.arange(m, m + K, dtype=np.int64)
    # M / (W + dM) = 1 / (exp(logW - logM) + d)
    terms = 1.0 / (np.exp(np.minimum(w._log_vec(ks) - log_m, LOG_OVERFLOW)) + d)
    rest = reciprocal_tail(w, m + K, policy)
    return math.fsum(terms) + math.exp(log_m) * (rest.value + rest.tail_bound) if log_m < LOG_OVERFLOW else math.fsum(terms)
