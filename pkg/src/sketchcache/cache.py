"""Instance registry: rule-driven sketch lifecycle, ingestion fan-out,
lookup with miss reasons, and the reader-writer concurrency contract.

One CacheInstance exists per (series, statistic family). Rules register
interest; an instance's window is the widest any referencing rule needs.
Instances materialize lazily: at rule registration for series already seen,
or at first ingest for series that appear later. The exact store keeps raw
samples per series (the in-process stand-in for the backing TSDB) and is
the fallback path for misses and cold starts.
"""

from __future__ import annotations

import bisect
import json
import struct
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

from .ehkll import EhKll
from .ehuniv import EhUniv
from .errors import UnknownRule, UnsupportedFunction
from .kernels import hash64
from .model import (
    INTERN,
    DataSample,
    Family,
    SeriesId,
    SketchConfig,
    TimeWindow,
    default_gsum_config,
    default_quantile_config,
)
from .query import QueryExpr, family_of, parse
from .sampler import SampleWindow

ACCEPTED = "accepted"
DUPLICATE = "duplicate"
OUT_OF_ORDER = "out_of_order"

NO_INSTANCE = "NoInstance"
WINDOW_TOO_OLD = "WindowTooOld"
COLD_START = "ColdStart"


class RwLock:
    """Writer-preferring reader/writer lock."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._writers_waiting = 0

    @contextmanager
    def read(self) -> Iterator[None]:
        with self._cond:
            while self._writer or self._writers_waiting:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def write(self) -> Iterator[None]:
        with self._cond:
            self._writers_waiting += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._writers_waiting -= 1
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


@dataclass
class RuleSpec:
    rule_id: str
    kind: str  # "record" | "alert"
    eval_interval_ms: int
    expr: str
    alert_op: Optional[str] = None
    alert_threshold: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in ("record", "alert"):
            raise ValueError("rule kind must be 'record' or 'alert'")
        if self.eval_interval_ms <= 0:
            raise ValueError("eval_interval_ms must be positive")
        if self.alert_op is not None and self.alert_op not in ("<", "<=", ">", ">=", "==", "!="):
            raise ValueError(f"unsupported alert comparison {self.alert_op!r}")


@dataclass
class _Rule:
    spec: RuleSpec
    expr: Optional[QueryExpr]  # None => unsupported function, exact path only

    @property
    def window_ms(self) -> int:
        assert self.expr is not None
        return self.expr.range_ms + self.expr.offset_ms


class CacheMiss:
    __slots__ = ("reason",)

    def __init__(self, reason: str):
        self.reason = reason

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"CacheMiss({self.reason})"


class CacheInstance:
    __slots__ = (
        "series",
        "family",
        "max_window_ms",
        "payload",
        "lock",
        "ref_rules",
        "first_insert_ts",
        "last_insert_ts",
        "accepted",
        "rejected_out_of_order",
        "rejected_duplicate",
        "last_used",
    )

    def __init__(self, series: SeriesId, family: Family, window_ms: int, payload):
        self.series = series
        self.family = family
        self.max_window_ms = window_ms
        self.payload = payload
        self.lock = RwLock()
        self.ref_rules: set[str] = set()
        self.first_insert_ts: Optional[int] = None
        self.last_insert_ts: Optional[int] = None
        self.accepted = 0
        self.rejected_out_of_order = 0
        self.rejected_duplicate = 0
        self.last_used = 0

    def set_window(self, window_ms: int) -> None:
        """Applies to future expiry only; retained data is never clawed back."""
        self.max_window_ms = window_ms
        if isinstance(self.payload, (EhKll, EhUniv)):
            self.payload.eh.window_ms = window_ms
        else:
            self.payload.window_ms = window_ms

    def insert(self, ts: int, value) -> str:
        with self.lock.write():
            if self.last_insert_ts is not None:
                if ts == self.last_insert_ts:
                    self.rejected_duplicate += 1
                    return DUPLICATE
                if ts < self.last_insert_ts:
                    self.rejected_out_of_order += 1
                    return OUT_OF_ORDER
            if self.family is Family.GSUM:
                self.payload.insert(ts, INTERN.encode(value))
            else:
                self.payload.insert(ts, float(value))
            if self.first_insert_ts is None:
                self.first_insert_ts = ts
            self.last_insert_ts = ts
            self.accepted += 1
            return ACCEPTED

    def payload_bytes(self) -> int:
        if isinstance(self.payload, (EhKll, EhUniv)):
            return self.payload.byte_size()
        return self.payload.serialized_bytes()

    def describe(self) -> dict:
        info = {
            "series": self.series.canonical(),
            "family": self.family.value,
            "max_window_ms": self.max_window_ms,
            "bytes": self.payload_bytes(),
            "accepted": self.accepted,
            "rejected_out_of_order": self.rejected_out_of_order,
            "rejected_duplicate": self.rejected_duplicate,
            "rules": sorted(self.ref_rules),
        }
        if isinstance(self.payload, (EhKll, EhUniv)):
            info["buckets"] = self.payload.bucket_count()
        else:
            info["retained"] = self.payload.retained()
        return info


class ExactStore:
    """Per-series raw sample log (the in-process TSDB stand-in)."""

    __slots__ = ("slack", "retention_ms", "_ts", "_vals", "_last")

    def __init__(self, slack: float = 2.0):
        if slack < 1.0:
            raise ValueError("exact-store slack must be >= 1")
        self.slack = slack
        self.retention_ms: Optional[int] = None  # None => keep everything
        self._ts: dict[int, list[int]] = {}
        self._vals: dict[int, list] = {}
        self._last: dict[int, int] = {}

    def set_max_window(self, window_ms: Optional[int]) -> None:
        self.retention_ms = None if window_ms is None else int(window_ms * self.slack)

    def add(self, series: SeriesId, ts: int, value) -> str:
        cid = series.canonical_id
        last = self._last.get(cid)
        if last is not None:
            if ts == last:
                return DUPLICATE
            if ts < last:
                return OUT_OF_ORDER
        ts_list = self._ts.setdefault(cid, [])
        ts_list.append(ts)
        self._vals.setdefault(cid, []).append(value)
        self._last[cid] = ts
        if self.retention_ms is not None and ts_list[0] < ts - self.retention_ms:
            horizon = ts - self.retention_ms
            cut = bisect.bisect_right(ts_list, horizon)
            if cut > 1024:
                del ts_list[:cut]
                del self._vals[cid][:cut]
        return ACCEPTED

    def window_slice(self, series: SeriesId, q: TimeWindow) -> list:
        cid = series.canonical_id
        ts_list = self._ts.get(cid)
        if not ts_list:
            return []
        i0 = bisect.bisect_right(ts_list, q.start)
        i1 = bisect.bisect_right(ts_list, q.end)
        return self._vals[cid][i0:i1]

    def last_ts(self, series: SeriesId) -> Optional[int]:
        return self._last.get(series.canonical_id)

    def sample_count(self, series: SeriesId) -> int:
        return len(self._ts.get(series.canonical_id, ()))


class SketchCache:
    """The registry: rules, instances, ingestion fan-out, lookup, stats."""

    def __init__(
        self,
        quantile_config: Optional[SketchConfig] = None,
        gsum_config: Optional[SketchConfig] = None,
        sample_config: Optional[SketchConfig] = None,
        exact_slack: float = 2.0,
        seed: int = 0,
        max_instances: Optional[int] = None,
    ):
        self.configs = {
            Family.QUANTILE: quantile_config or default_quantile_config(),
            Family.GSUM: gsum_config or default_gsum_config(),
            Family.SAMPLE: sample_config or SketchConfig(),
        }
        self.seed = seed
        self.max_instances = max_instances
        self.exact = ExactStore(exact_slack)
        self._lock = threading.RLock()
        self._rules: dict[str, _Rule] = {}
        self._instances: dict[tuple[int, Family], CacheInstance] = {}
        self._series: dict[int, SeriesId] = {}
        self._series_plan: dict[int, tuple[int, list[CacheInstance]]] = {}
        self._epoch = 0
        self._use_clock = 0
        self.hits = 0
        self.misses = {NO_INSTANCE: 0, WINDOW_TOO_OLD: 0, COLD_START: 0}

    # -- rules -----------------------------------------------------------

    def _matches(self, expr: QueryExpr, series: SeriesId) -> bool:
        if expr.metric != series.metric:
            return False
        have = dict(series.labels)
        return all(have.get(k) == v for k, v in expr.matchers)

    def _build_payload(self, series: SeriesId, family: Family, window_ms: int):
        cfg = self.configs[family]
        seed = hash64(series.canonical_id ^ len(family.value), self.seed)
        if family is Family.QUANTILE:
            return EhKll(cfg, window_ms, seed=seed)
        if family is Family.GSUM:
            return EhUniv(cfg, window_ms, seed=seed)
        return SampleWindow(cfg.sample_prob, window_ms, seed=seed)

    def _ensure_instance(self, series: SeriesId, family: Family, window_ms: int) -> CacheInstance:
        key = (series.canonical_id, family)
        inst = self._instances.get(key)
        if inst is None:
            inst = CacheInstance(
                series, family, window_ms, self._build_payload(series, family, window_ms)
            )
            self._instances[key] = inst
            self._evict_lru()
        elif window_ms > inst.max_window_ms:
            inst.set_window(window_ms)
        return inst

    def _evict_lru(self) -> None:
        if self.max_instances is None:
            return
        while len(self._instances) > self.max_instances:
            victim_key = min(self._instances, key=lambda k: self._instances[k].last_used)
            del self._instances[victim_key]
        self._epoch += 1

    def _refresh_exact_retention(self) -> None:
        windows = [r.window_ms for r in self._rules.values() if r.expr is not None]
        self.exact.set_max_window(max(windows) if windows else None)

    def register_rule(self, spec: RuleSpec) -> list[CacheInstance]:
        """Returns the instances this rule references (empty if unsupported)."""
        with self._lock:
            existing = self._rules.get(spec.rule_id)
            if existing is not None:
                if existing.spec == spec:
                    return [
                        i for i in self._instances.values() if spec.rule_id in i.ref_rules
                    ]
                self.unregister_rule(spec.rule_id)
            try:
                expr = parse(spec.expr)
            except UnsupportedFunction:
                self._rules[spec.rule_id] = _Rule(spec, None)
                return []
            rule = _Rule(spec, expr)
            self._rules[spec.rule_id] = rule
            self._epoch += 1
            self._refresh_exact_retention()
            family = family_of(expr.func)
            touched = []
            for series in self._series.values():
                if self._matches(expr, series):
                    inst = self._ensure_instance(series, family, rule.window_ms)
                    inst.ref_rules.add(spec.rule_id)
                    touched.append(inst)
            return touched

    def unregister_rule(self, rule_id: str) -> int:
        with self._lock:
            rule = self._rules.pop(rule_id, None)
            if rule is None:
                raise UnknownRule(f"no rule with id {rule_id!r}")
            self._epoch += 1
            self._refresh_exact_retention()
            removed = 0
            for key, inst in list(self._instances.items()):
                if rule_id not in inst.ref_rules:
                    continue
                inst.ref_rules.discard(rule_id)
                if not inst.ref_rules:
                    del self._instances[key]
                    removed += 1
                else:
                    remaining = [
                        self._rules[r].window_ms
                        for r in inst.ref_rules
                        if r in self._rules and self._rules[r].expr is not None
                    ]
                    if remaining:
                        inst.set_window(max(remaining))
            return removed

    def rules(self) -> dict[str, RuleSpec]:
        with self._lock:
            return {rid: r.spec for rid, r in self._rules.items()}

    def rule_exprs(self) -> dict[str, Optional[QueryExpr]]:
        with self._lock:
            return {rid: r.expr for rid, r in self._rules.items()}

    # -- ingestion -------------------------------------------------------

    def _plan_for(self, series: SeriesId) -> list[CacheInstance]:
        """Instances a sample of this series must reach (cached per epoch)."""
        cached = self._series_plan.get(series.canonical_id)
        if cached is not None and cached[0] == self._epoch:
            return cached[1]
        with self._lock:
            wanted: dict[Family, int] = {}
            refs: dict[Family, list[str]] = {}
            for rid, rule in self._rules.items():
                if rule.expr is None or not self._matches(rule.expr, series):
                    continue
                family = family_of(rule.expr.func)
                wanted[family] = max(wanted.get(family, 0), rule.window_ms)
                refs.setdefault(family, []).append(rid)
            plan = []
            for family, window_ms in wanted.items():
                inst = self._ensure_instance(series, family, window_ms)
                inst.ref_rules.update(refs[family])
                plan.append(inst)
            self._series_plan[series.canonical_id] = (self._epoch, plan)
            return plan

    def ingest(self, samples: Iterable[DataSample]) -> list[str]:
        statuses = []
        for sample in samples:
            series = sample.series
            if series.canonical_id not in self._series:
                with self._lock:
                    self._series[series.canonical_id] = series
            status = self.exact.add(series, sample.ts_ms, sample.value)
            for inst in self._plan_for(series):
                inst.insert(sample.ts_ms, sample.value)
            statuses.append(status)
        return statuses

    # -- lookup ----------------------------------------------------------

    def lookup(self, series: SeriesId, family: Family, q: TimeWindow):
        """Returns a CacheInstance on hit, else a CacheMiss with a reason."""
        inst = self._instances.get((series.canonical_id, family))
        if inst is None:
            self.misses[NO_INSTANCE] += 1
            return CacheMiss(NO_INSTANCE)
        now = inst.last_insert_ts
        if now is None or inst.first_insert_ts is None or q.start < inst.first_insert_ts:
            self.misses[COLD_START] += 1
            return CacheMiss(COLD_START)
        if q.start < now - inst.max_window_ms:
            self.misses[WINDOW_TOO_OLD] += 1
            return CacheMiss(WINDOW_TOO_OLD)
        self.hits += 1
        self._use_clock += 1
        inst.last_used = self._use_clock
        return inst

    def series_matching(self, expr: QueryExpr) -> list[SeriesId]:
        with self._lock:
            return [s for s in self._series.values() if self._matches(expr, s)]

    def instance(self, series: SeriesId, family: Family) -> Optional[CacheInstance]:
        return self._instances.get((series.canonical_id, family))

    def instances(self) -> list[CacheInstance]:
        return list(self._instances.values())

    # -- stats / snapshot --------------------------------------------------

    def stats(self) -> dict:
        with self._lock:
            per_instance = [inst.describe() for inst in self._instances.values()]
            return {
                "instances": len(per_instance),
                "rules": len(self._rules),
                "series": len(self._series),
                "cache_bytes": sum(i["bytes"] for i in per_instance),
                "hits": self.hits,
                "misses": dict(self.misses),
                "per_instance": per_instance,
            }

    _SNAP_MAGIC = b"SKC1"

    def snapshot_bytes(self) -> bytes:
        with self._lock:
            parts = [self._SNAP_MAGIC, struct.pack("<HI", 1, len(self._instances))]
            for inst in self._instances.values():
                with inst.lock.read():
                    blob = inst.payload.to_bytes()
                    head = json.dumps(
                        {
                            "metric": inst.series.metric,
                            "labels": list(inst.series.labels),
                            "family": inst.family.value,
                            "max_window_ms": inst.max_window_ms,
                            "first_insert_ts": inst.first_insert_ts,
                            "last_insert_ts": inst.last_insert_ts,
                            "rules": sorted(inst.ref_rules),
                        }
                    ).encode("utf-8")
                parts.append(struct.pack("<IQ", len(head), len(blob)))
                parts.append(head)
                parts.append(blob)
            return b"".join(parts)

    def save_snapshot(self, path: str) -> int:
        data = self.snapshot_bytes()
        with open(path, "wb") as fh:
            fh.write(data)
        return len(data)

    def load_snapshot(self, path: str) -> int:
        from .model import canonicalize

        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != self._SNAP_MAGIC:
            raise ValueError("not a cache snapshot file")
        version, count = struct.unpack_from("<HI", data, 4)
        if version != 1:
            raise ValueError(f"unsupported snapshot version {version}")
        off = 10
        loaded = 0
        with self._lock:
            for _ in range(count):
                head_len, blob_len = struct.unpack_from("<IQ", data, off)
                off += 12
                head = json.loads(data[off : off + head_len])
                off += head_len
                blob = data[off : off + blob_len]
                off += blob_len
                series = canonicalize(head["metric"], [tuple(kv) for kv in head["labels"]])
                family = Family(head["family"])
                cfg = self.configs[family]
                window_ms = head["max_window_ms"]
                if family is Family.QUANTILE:
                    payload = EhKll.from_bytes(blob, cfg, window_ms)
                elif family is Family.GSUM:
                    payload = EhUniv.from_bytes(blob, cfg, window_ms)
                else:
                    payload = SampleWindow.from_bytes(blob)
                inst = CacheInstance(series, family, window_ms, payload)
                inst.first_insert_ts = head["first_insert_ts"]
                inst.last_insert_ts = head["last_insert_ts"]
                inst.ref_rules = set(head["rules"])
                self._series[series.canonical_id] = series
                self._instances[(series.canonical_id, family)] = inst
                loaded += 1
            self._epoch += 1
        return loaded
