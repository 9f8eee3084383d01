"""HTTP service: ingest, ad-hoc queries, rule management, stats, alerts.

A background scheduler thread walks registered rules on their evaluation
intervals. Alert rules compare the (single-series) result against their
threshold and append firings to a bounded in-memory log; record rules
append their latest values to a recording log. Rule evaluation uses data
time (the newest ingested timestamp), so replayed traffic behaves the same
as live traffic.
"""

from __future__ import annotations

import logging
import operator
import os
import threading
import time
from collections import deque
from contextlib import asynccontextmanager
from typing import Any, Optional

import yaml
from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse

from .cache import SketchCache, RuleSpec
from .errors import ParseError, SketchCacheError, UnknownRule, UnsupportedFunction
from .model import DataSample, SketchConfig, canonicalize
from .query import QueryResult, evaluate, parse

log = logging.getLogger("sketchcache.service")

_OPS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}


class RuleScheduler:
    """Fires each rule every eval_interval_ms until stopped."""

    def __init__(self, cache: SketchCache, tick_s: float = 0.05, alert_log_size: int = 1024):
        self.cache = cache
        self.tick_s = tick_s
        self.alerts: deque[dict] = deque(maxlen=alert_log_size)
        self.recordings: deque[dict] = deque(maxlen=alert_log_size)
        self._due: dict[str, float] = {}
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        if self._thread is not None:
            return
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, name="rule-scheduler", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    def _run(self) -> None:
        while not self._stop.wait(self.tick_s):
            self.run_pending()

    def run_pending(self, now: Optional[float] = None) -> int:
        """Evaluates every rule whose interval has elapsed; returns count."""
        now = time.monotonic() if now is None else now
        fired = 0
        for rule_id, spec in self.cache.rules().items():
            due = self._due.get(rule_id, 0.0)
            if now < due:
                continue
            self._due[rule_id] = now + spec.eval_interval_ms / 1000.0
            try:
                self.evaluate_rule(spec)
                fired += 1
            except SketchCacheError as exc:
                log.warning("rule %s evaluation failed: %s", rule_id, exc)
        return fired

    def evaluate_rule(self, spec: RuleSpec) -> Optional[QueryResult]:
        if self.cache.rule_exprs().get(spec.rule_id) is None:
            return None  # unsupported expression: nothing to evaluate
        result = evaluate(self.cache, spec.expr, at_ms=None)
        stamp = int(time.time() * 1000)
        for sr in result.series:
            if sr.value is None or not isinstance(sr.value, float):
                continue
            entry = {
                "rule_id": spec.rule_id,
                "series": sr.series.canonical(),
                "value": sr.value,
                "at_ms": result.at_ms,
                "wall_ms": stamp,
                "source": sr.source,
            }
            if spec.kind == "alert":
                if spec.alert_op is None or spec.alert_threshold is None:
                    continue
                if _OPS[spec.alert_op](sr.value, spec.alert_threshold):
                    entry["threshold"] = spec.alert_threshold
                    entry["op"] = spec.alert_op
                    self.alerts.append(entry)
                    log.info(
                        "ALERT %s: %s = %.6g %s %.6g",
                        spec.rule_id,
                        sr.series.canonical(),
                        sr.value,
                        spec.alert_op,
                        spec.alert_threshold,
                    )
            else:
                self.recordings.append(entry)
        return result


def _parse_samples(body: Any) -> list[DataSample]:
    if not isinstance(body, list):
        raise ValueError("ingest body must be a JSON array of samples")
    samples = []
    for i, rec in enumerate(body):
        if not isinstance(rec, dict):
            raise ValueError(f"sample {i} is not an object")
        try:
            metric = rec["metric"]
            ts = int(rec["timestamp_ms"])
            value = rec["value"]
        except KeyError as exc:
            raise ValueError(f"sample {i} is missing field {exc.args[0]!r}") from exc
        labels = rec.get("labels") or {}
        if not isinstance(labels, dict):
            raise ValueError(f"sample {i} labels must be an object")
        if not isinstance(value, (int, float, str)) or isinstance(value, bool):
            raise ValueError(f"sample {i} value must be a number or string")
        series = canonicalize(metric, list(labels.items()))
        samples.append(DataSample(series, ts, value))
    return samples


def _series_payload(result: QueryResult) -> list[dict]:
    out = []
    for sr in result.series:
        value = sr.value
        if isinstance(value, list):  # topk pairs
            value = [[v, c] for v, c in value]
        out.append(
            {
                "series": sr.series.canonical(),
                "value": value,
                "source": sr.source,
                "miss_reason": sr.miss_reason,
                "error": sr.error,
                "bound": sr.bound,
            }
        )
    return out


def create_app(
    cache: Optional[SketchCache] = None,
    rules: Optional[list[RuleSpec]] = None,
    run_scheduler: bool = True,
    scheduler_tick_s: float = 0.05,
) -> FastAPI:
    cache = cache if cache is not None else SketchCache()
    scheduler = RuleScheduler(cache, tick_s=scheduler_tick_s)
    for spec in rules or []:
        cache.register_rule(spec)

    @asynccontextmanager
    async def _lifespan(_: FastAPI):
        if run_scheduler:
            scheduler.start()
        yield
        scheduler.stop()

    app = FastAPI(title="sketchcache", version="1.0", lifespan=_lifespan)
    app.state.cache = cache
    app.state.scheduler = scheduler

    @app.post("/api/v1/ingest")
    async def ingest(request: Request) -> JSONResponse:
        try:
            body = await request.json()
            samples = _parse_samples(body)
        except (ValueError, SketchCacheError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        statuses = cache.ingest(samples)
        accepted = sum(1 for s in statuses if s == "accepted")
        return JSONResponse({"statuses": statuses, "accepted": accepted})

    @app.get("/api/v1/query")
    def query(
        query: str = Query(..., description="range query expression"),
        time_ms: Optional[int] = Query(None, alias="time"),
    ) -> JSONResponse:
        try:
            expr = parse(query)
        except UnsupportedFunction as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except ParseError as exc:
            raise HTTPException(
                status_code=400, detail={"message": str(exc), "position": exc.position}
            )
        result = evaluate(cache, expr, at_ms=time_ms)
        return JSONResponse(
            {
                "query": str(expr),
                "at_ms": result.at_ms,
                "window": {"start": result.window.start, "end": result.window.end},
                "series": _series_payload(result),
            }
        )

    @app.post("/api/v1/rules")
    async def add_rule(request: Request) -> JSONResponse:
        try:
            body = await request.json()
            spec = RuleSpec(
                rule_id=body["rule_id"],
                kind=body.get("kind", "record"),
                eval_interval_ms=int(body.get("eval_interval_ms", 5000)),
                expr=body["expr"],
                alert_op=body.get("alert_op"),
                alert_threshold=(
                    float(body["alert_threshold"]) if "alert_threshold" in body else None
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=f"malformed rule: {exc}")
        try:
            touched = cache.register_rule(spec)
        except ParseError as exc:
            raise HTTPException(
                status_code=400, detail={"message": str(exc), "position": exc.position}
            )
        supported = cache.rule_exprs().get(spec.rule_id) is not None
        return JSONResponse(
            {"rule_id": spec.rule_id, "supported": supported, "instances": len(touched)}
        )

    @app.delete("/api/v1/rules/{rule_id}")
    def delete_rule(rule_id: str) -> JSONResponse:
        try:
            removed = cache.unregister_rule(rule_id)
        except UnknownRule as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return JSONResponse({"rule_id": rule_id, "instances_removed": removed})

    @app.get("/api/v1/rules")
    def list_rules() -> JSONResponse:
        specs = cache.rules()
        exprs = cache.rule_exprs()
        return JSONResponse(
            {
                rid: {
                    "kind": s.kind,
                    "eval_interval_ms": s.eval_interval_ms,
                    "expr": s.expr,
                    "supported": exprs.get(rid) is not None,
                    "alert_op": s.alert_op,
                    "alert_threshold": s.alert_threshold,
                }
                for rid, s in specs.items()
            }
        )

    @app.get("/api/v1/stats")
    def stats() -> JSONResponse:
        payload = cache.stats()
        payload["alerts_pending"] = len(scheduler.alerts)
        return JSONResponse(payload)

    @app.get("/api/v1/alerts")
    def alerts(limit: int = 100) -> JSONResponse:
        return JSONResponse({"alerts": list(scheduler.alerts)[-limit:]})

    return app


# -- configuration -----------------------------------------------------------


def load_config(path: Optional[str]) -> dict:
    """Service config: listen address, seed, sketch parameters, rules."""
    cfg: dict = {}
    if path:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
    listen = os.environ.get("SKETCHCACHE_LISTEN")
    if listen:
        cfg["listen"] = listen
    seed = os.environ.get("SKETCHCACHE_SEED")
    if seed:
        cfg["seed"] = int(seed)
    cfg.setdefault("listen", "127.0.0.1:8080")
    cfg.setdefault("seed", 0)
    return cfg


def build_from_config(cfg: dict) -> tuple[SketchCache, list[RuleSpec]]:
    def sketch_cfg(section: Optional[dict]) -> Optional[SketchConfig]:
        if not section:
            return None
        return SketchConfig(**section)

    cache = SketchCache(
        quantile_config=sketch_cfg(cfg.get("quantile")),
        gsum_config=sketch_cfg(cfg.get("gsum")),
        sample_config=sketch_cfg(cfg.get("sample")),
        exact_slack=float(cfg.get("exact_slack", 2.0)),
        seed=int(cfg.get("seed", 0)),
        max_instances=cfg.get("max_instances"),
    )
    rules = [
        RuleSpec(
            rule_id=r["rule_id"],
            kind=r.get("kind", "record"),
            eval_interval_ms=int(r.get("eval_interval_ms", 5000)),
            expr=r["expr"],
            alert_op=r.get("alert_op"),
            alert_threshold=(float(r["alert_threshold"]) if "alert_threshold" in r else None),
        )
        for r in cfg.get("rules", [])
    ]
    return cache, rules
