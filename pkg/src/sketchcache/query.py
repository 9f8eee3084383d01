"""Range-query language: `func([arg,] metric{l="v"}[range] [offset dur])`.

Twelve `*_over_time` functions are supported, routed by statistic family:

    quantile, min, max            -> QUANTILE  (bucketed quantile sketch)
    entropy, distinct, l2, topk   -> GSUM      (bucketed universal sketch)
    count, sum, avg, stddev, stdvar -> SAMPLE  (uniform window sample)

`quantile_over_time` and `topk_over_time` take a leading numeric argument.
Durations are integers with unit ms/s/m/h/d. The evaluator answers from a
cache instance when the registry reports a hit, otherwise recomputes from
the raw sample log, and annotates every answer with its source and, for
cache answers, the configured error bound.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import (
    EmptyRange,
    EmptySketch,
    EmptyWindow,
    InsufficientSamples,
    ParseError,
    QueryOutsideWindow,
    UnsupportedFunction,
)
from .model import INTERN, Family, SeriesId, TimeWindow

FUNC_FAMILY = {
    "quantile": Family.QUANTILE,
    "min": Family.QUANTILE,
    "max": Family.QUANTILE,
    "entropy": Family.GSUM,
    "distinct": Family.GSUM,
    "l2": Family.GSUM,
    "topk": Family.GSUM,
    "count": Family.SAMPLE,
    "sum": Family.SAMPLE,
    "avg": Family.SAMPLE,
    "stddev": Family.SAMPLE,
    "stdvar": Family.SAMPLE,
}

_ARG_FUNCS = {"quantile", "topk"}

_UNIT_MS = {"ms": 1, "s": 1000, "m": 60_000, "h": 3_600_000, "d": 86_400_000}
# largest-first for canonical formatting
_UNITS_DESC = (("d", 86_400_000), ("h", 3_600_000), ("m", 60_000), ("s", 1000), ("ms", 1))


def format_duration(ms: int) -> str:
    for unit, scale in _UNITS_DESC:
        if ms % scale == 0:
            return f"{ms // scale}{unit}"
    return f"{ms}ms"


@dataclass(frozen=True)
class QueryExpr:
    func: str
    metric: str
    matchers: tuple[tuple[str, str], ...]
    range_ms: int
    offset_ms: int = 0
    arg: Optional[float] = None

    def __str__(self) -> str:
        sel = self.metric
        if self.matchers:
            body = ",".join(
                '{}="{}"'.format(k, v.replace("\\", "\\\\").replace('"', '\\"'))
                for k, v in self.matchers
            )
            sel += "{" + body + "}"
        inner = f"{sel}[{format_duration(self.range_ms)}]"
        if self.offset_ms:
            inner += f" offset {format_duration(self.offset_ms)}"
        if self.arg is not None:
            arg = int(self.arg) if float(self.arg).is_integer() and self.func == "topk" else self.arg
            return f"{self.func}_over_time({arg}, {inner})"
        return f"{self.func}_over_time({inner})"

    def window(self, at_ms: int) -> TimeWindow:
        end = at_ms - self.offset_ms
        return TimeWindow(end - self.range_ms, end)


def family_of(func: str) -> Family:
    return FUNC_FAMILY[func]


# -- lexer / parser --------------------------------------------------------

_IDENT_RE = re.compile(r"[A-Za-z_:][A-Za-z0-9_:]*")
_NUMBER_RE = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_STRING_RE = re.compile(r'"(?:[^"\\]|\\.)*"')


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def accept_char(self, ch: str) -> bool:
        if self.peek() == ch:
            self.pos += 1
            return True
        return False

    def expect_char(self, ch: str) -> None:
        if not self.accept_char(ch):
            raise ParseError(f"expected {ch!r}", self.pos)

    def ident(self) -> str:
        self._skip_ws()
        m = _IDENT_RE.match(self.text, self.pos)
        if not m:
            raise ParseError("expected identifier", self.pos)
        self.pos = m.end()
        return m.group()

    def number(self) -> float:
        self._skip_ws()
        m = _NUMBER_RE.match(self.text, self.pos)
        if not m:
            raise ParseError("expected number", self.pos)
        self.pos = m.end()
        return float(m.group())

    def string(self) -> str:
        self._skip_ws()
        m = _STRING_RE.match(self.text, self.pos)
        if not m:
            raise ParseError("expected quoted label value", self.pos)
        self.pos = m.end()
        raw = m.group()[1:-1]
        return raw.replace('\\"', '"').replace("\\\\", "\\")

    def duration_ms(self) -> int:
        self._skip_ws()
        start = self.pos
        m = re.compile(r"\d+").match(self.text, self.pos)
        if not m:
            raise ParseError("expected duration", self.pos)
        self.pos = m.end()
        u = re.compile(r"ms|s|m|h|d").match(self.text, self.pos)
        if not u:
            raise ParseError("expected duration unit (ms/s/m/h/d)", self.pos)
        self.pos = u.end()
        ms = int(m.group()) * _UNIT_MS[u.group()]
        if ms <= 0:
            raise ParseError("duration must be positive", start)
        return ms

    def at_end(self) -> bool:
        self._skip_ws()
        return self.pos >= len(self.text)


def parse(text: str) -> QueryExpr:
    sc = _Scanner(text)
    fn_pos = sc.pos
    name = sc.ident()
    if not name.endswith("_over_time"):
        raise ParseError(f"unknown function {name!r}", fn_pos)
    func = name[: -len("_over_time")]
    if func not in FUNC_FAMILY:
        raise UnsupportedFunction(f"unsupported function {name!r}")
    sc.expect_char("(")
    arg: Optional[float] = None
    if func in _ARG_FUNCS:
        arg_pos = sc.pos
        arg = sc.number()
        sc.expect_char(",")
        if func == "quantile" and not 0.0 <= arg <= 1.0:
            raise ParseError("quantile argument must be in [0, 1]", arg_pos)
        if func == "topk" and (arg < 1 or not float(arg).is_integer()):
            raise ParseError("topk argument must be a positive integer", arg_pos)
    metric = sc.ident()
    matchers: list[tuple[str, str]] = []
    if sc.accept_char("{"):
        while not sc.accept_char("}"):
            label = sc.ident()
            sc.expect_char("=")
            value = sc.string()
            matchers.append((label, value))
            if sc.peek() != "}":
                sc.expect_char(",")
    seen = [k for k, _ in matchers]
    if len(seen) != len(set(seen)):
        raise ParseError("duplicate label matcher", sc.pos)
    sc.expect_char("[")
    range_ms = sc.duration_ms()
    sc.expect_char("]")
    offset_ms = 0
    if sc.peek() and not sc.peek() == ")":
        kw_pos = sc.pos
        kw = sc.ident()
        if kw != "offset":
            raise ParseError("expected 'offset' or ')'", kw_pos)
        offset_ms = sc.duration_ms()
    sc.expect_char(")")
    if not sc.at_end():
        raise ParseError("trailing input after query", sc.pos)
    return QueryExpr(
        func=func,
        metric=metric,
        matchers=tuple(sorted(matchers)),
        range_ms=range_ms,
        offset_ms=offset_ms,
        arg=arg,
    )


# -- exact reference evaluation ---------------------------------------------


def exact_eval(func: str, values: list, arg: Optional[float] = None):
    """Single-pass exact answer over the raw sample values of a window.

    Numeric functions require float-convertible values; token functions
    (entropy/distinct/l2/topk) treat each value as an opaque key.
    """
    n = len(values)
    if n == 0:
        raise EmptyRange("no samples in window")
    if func in ("entropy", "distinct", "l2", "topk"):
        counts: dict = {}
        for v in values:
            counts[v] = counts.get(v, 0) + 1
        if func == "distinct":
            return float(len(counts))
        c = np.fromiter(counts.values(), dtype=np.float64, count=len(counts))
        if func == "l2":
            return float(math.sqrt(float((c * c).sum())))
        if func == "entropy":
            total = c.sum()
            return max(0.0, float(math.log2(total) - (c * np.log2(c)).sum() / total))
        k = int(arg if arg is not None else 10)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], str(kv[0])))
        return [(v, float(cnt)) for v, cnt in ranked[:k]]

    xs = np.asarray([float(v) for v in values], dtype=np.float64)
    if func == "count":
        return float(n)
    if func == "sum":
        return float(xs.sum())
    if func == "avg":
        return float(xs.mean())
    if func in ("stddev", "stdvar"):
        if n < 2:
            raise InsufficientSamples("need at least 2 samples for variance")
        var = float(xs.var(ddof=1))
        return var if func == "stdvar" else math.sqrt(var)
    if func == "min":
        return float(xs.min())
    if func == "max":
        return float(xs.max())
    if func == "quantile":
        phi = 0.5 if arg is None else float(arg)
        order = np.sort(xs)
        rank = max(1, math.ceil(phi * n))
        return float(order[rank - 1])
    raise UnsupportedFunction(f"unsupported function {func!r}")


# -- evaluation against the cache -------------------------------------------

SOURCE_CACHE = "cache"
SOURCE_EXACT = "exact"

_FALLBACK_ERRORS = (
    EmptyRange,
    EmptySketch,
    EmptyWindow,
    InsufficientSamples,
    QueryOutsideWindow,
)


@dataclass
class SeriesResult:
    series: SeriesId
    value: Union[float, list, None]
    source: str
    miss_reason: Optional[str] = None
    error: Optional[str] = None
    bound: Optional[dict] = None


@dataclass
class QueryResult:
    expr: QueryExpr
    at_ms: int
    window: TimeWindow
    series: list[SeriesResult] = field(default_factory=list)

    def scalar(self) -> float:
        """Value of a single-series result (raises if empty/ambiguous)."""
        hits = [r for r in self.series if r.value is not None]
        if len(hits) != 1:
            raise ValueError(f"expected exactly one series value, have {len(hits)}")
        v = hits[0].value
        if not isinstance(v, float):
            raise ValueError("result is not scalar")
        return v


def _error_bound(family: Family, cfg) -> dict:
    if family is Family.QUANTILE:
        return {
            "kind": "rank_error",
            "epsilon": 2.0 / cfg.k_eh + 1.0 / cfg.k_kll,
        }
    if family is Family.GSUM:
        return {"kind": "relative_error", "epsilon": math.sqrt(2.0 / cfg.k_eh)}
    return {"kind": "relative_stderr", "epsilon": math.sqrt(max(0.0, 1.0 - cfg.sample_prob))}


def _eval_cached(inst, expr: QueryExpr, q: TimeWindow):
    func, payload = expr.func, inst.payload
    family = family_of(func)
    with inst.lock.read():
        if family is Family.QUANTILE:
            if func == "quantile":
                return payload.quantile(q, float(expr.arg))
            if func == "min":
                return payload.min(q)
            return payload.max(q)
        if family is Family.GSUM:
            if func == "entropy":
                return payload.entropy(q)
            if func == "distinct":
                return payload.distinct(q)
            if func == "l2":
                return payload.l2(q)
            top = payload.topk(q, int(expr.arg))
            return [(INTERN.decode(tok), est) for tok, est in top]
        stat = {"count": "COUNT", "sum": "SUM", "avg": "AVG",
                "stddev": "STDDEV", "stdvar": "STDVAR"}[func]
        return payload.query(q, stat)


def evaluate(cache, expr: Union[str, QueryExpr], at_ms: Optional[int] = None) -> QueryResult:
    """Answer a range query from the cache, falling back to exact replay."""
    if isinstance(expr, str):
        expr = parse(expr)
    family = family_of(expr.func)
    matched = cache.series_matching(expr)
    if at_ms is None:
        last = [cache.exact.last_ts(s) for s in matched]
        known = [t for t in last if t is not None]
        if not known:
            return QueryResult(expr, 0, TimeWindow(-expr.range_ms, 0), [])
        at_ms = max(known)
    q = expr.window(at_ms)
    result = QueryResult(expr, at_ms, q, [])
    for series in matched:
        hit = cache.lookup(series, family, q)
        miss_reason = None
        if hasattr(hit, "reason"):
            miss_reason = hit.reason
        else:
            try:
                value = _eval_cached(hit, expr, q)
                result.series.append(
                    SeriesResult(
                        series,
                        value,
                        SOURCE_CACHE,
                        bound=_error_bound(family, cache.configs[family]),
                    )
                )
                continue
            except _FALLBACK_ERRORS as exc:
                miss_reason = type(exc).__name__
        values = cache.exact.window_slice(series, q)
        try:
            value = exact_eval(expr.func, values, expr.arg)
            result.series.append(SeriesResult(series, value, SOURCE_EXACT, miss_reason))
        except (EmptyRange, InsufficientSamples) as exc:
            result.series.append(
                SeriesResult(series, None, SOURCE_EXACT, miss_reason, error=str(exc))
            )
    return result
