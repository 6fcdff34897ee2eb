"""HTTP gateway serving routing decisions over an atomically swapped index snapshot."""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field, replace

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse, PlainTextResponse

from .core import RoutingConfig, RoutingDecision, TagSet
from .errors import (
    AlphaMismatch,
    Conflict,
    InvalidConfig,
    InvalidLabel,
    InvalidQuery,
    KCRouteError,
    ParseError,
    TaggerParseError,
    TaggerUnavailable,
)
from .index import IndexCorpus, ScoreIndex, add_model, ingest_records, normalize_tags_input
from .scoring import route
from .tagger import TaggerClient

log = logging.getLogger(__name__)
access_log = logging.getLogger("kcroute.gateway.access")


@dataclass(frozen=True)
class ModelEntry:
    id: str
    display_name: str = ""
    cost: dict = field(default_factory=dict)
    enabled: bool = True
    endpoint: str | None = None

    def to_dict(self):
        return {"id": self.id, "display_name": self.display_name or self.id,
                "cost": self.cost, "enabled": self.enabled}


class ServiceState:
    """Holds the live index snapshot; one writer swaps it, any number of readers hold it.

    Readers take ``state.snapshot`` once per request and use only that
    object, so a response never mixes two index versions.
    """

    def __init__(self, index: ScoreIndex, config: RoutingConfig | None = None,
                 corpus: IndexCorpus | None = None, registry: dict[str, ModelEntry] | None = None,
                 tagger: TaggerClient | None = None, admin_token: str | None = None,
                 tagger_concurrency: int = 4, forward_client=None):
        self.snapshot = index
        self.config = config or RoutingConfig(alpha=index.alpha_used)
        self.corpus = corpus
        self.registry = dict(registry or {})
        self.tagger = tagger
        self.admin_token = admin_token if admin_token is not None else os.environ.get("ROUTER_ADMIN_TOKEN")
        self.pending: dict[str, IndexCorpus] = {}
        self._write = threading.Lock()
        self._tagger_slots = threading.BoundedSemaphore(max(1, tagger_concurrency))
        self._forward_client = forward_client

    def entry(self, model_id: str) -> ModelEntry:
        if model_id in self.registry:
            return self.registry[model_id]
        stats = self.snapshot.models.get(model_id)
        cost = {"mean_cost": stats.overall_mean_cost} if stats else {}
        return ModelEntry(model_id, model_id, cost, True)

    def enabled_models(self, index: ScoreIndex) -> list[str]:
        return [m for m in sorted(index.models) if self.entry(m).enabled]

    def tag(self, text: str):
        if self.tagger is None:
            raise TaggerUnavailable("no tagger configured")
        with self._tagger_slots:
            return self.tagger.tag(text)

    def upload_records(self, model_id: str, lines) -> int:
        if self.corpus is None:
            raise InvalidConfig("gateway has no index corpus; start it with the tags file")
        sliced = ingest_records(lines, self.corpus.queries)
        ids = sliced.model_ids()
        if ids != [model_id]:
            raise ParseError(f"records must all carry model_id {model_id!r}, got {ids}")
        with self._write:
            if model_id in self.snapshot.models or model_id in self.pending:
                raise Conflict(f"model {model_id!r} already registered")
            self.pending[model_id] = sliced
        return len(sliced.records)

    def rebuild(self) -> ScoreIndex:
        with self._write:
            new = self.snapshot
            for mid in sorted(self.pending):
                new = add_model(new, self.pending[mid])
            if new is self.snapshot:
                new = replace(new, version=new.version + 1)
            if self.corpus is not None:
                for sl in self.pending.values():
                    self.corpus.records.update(sl.records)
            self.pending.clear()
            self.snapshot = new
            return new


def decision_body(decision: RoutingDecision, index: ScoreIndex, tags: TagSet, tagging_cost: float) -> dict:
    return {
        "model_id": decision.model_id,
        "breakdown": {
            m: {"ks": b.knowledge_score, "cs": b.capability_score, "mixed": b.mixed_score}
            for m, b in decision.breakdown.items()
        },
        "fallbacks_used": {m: [list(f) for f in b.fallbacks_used] for m, b in decision.breakdown.items()},
        "index_version": index.version,
        "tags_used": tags.to_dict(),
        "tagging_cost": tagging_cost,
    }


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=status)


def _number(body, key):
    v = body.get(key)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise InvalidConfig(f"{key} must be a finite number")
    return float(v)


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="kcroute gateway")
    app.state.service = state

    @app.middleware("http")
    async def request_log(request: Request, call_next):
        t0 = time.perf_counter()
        response = await call_next(request)
        access_log.info(json.dumps({
            "method": request.method, "path": request.url.path, "status": response.status_code,
            "ms": round(1000 * (time.perf_counter() - t0), 3),
        }))
        return response

    def admin_ok(request: Request) -> bool:
        token = state.admin_token
        got = request.headers.get("authorization", "")
        return bool(token) and got == f"Bearer {token}"

    @app.get("/healthz", response_class=PlainTextResponse)
    def healthz():
        return "ok"

    @app.post("/v1/route")
    async def route_endpoint(request: Request):
        try:
            body = json.loads(await request.body())
        except (json.JSONDecodeError, UnicodeDecodeError):
            return _error(400, "body is not valid JSON")
        return await run_in_threadpool(_route, body)

    def _route(body):
        snap = state.snapshot
        if not isinstance(body, dict):
            return _error(400, "body must be a JSON object")
        has_text, has_tags = "text" in body, "tags" in body
        if has_text == has_tags:
            return _error(400, "give exactly one of 'text' or 'tags'")
        try:
            config = state.config.replace(
                alpha=_number(body, "alpha"), beta=_number(body, "beta"),
                gamma=_number(body, "gamma"), delta=_number(body, "delta"),
            )
        except InvalidConfig as exc:
            return _error(400, str(exc))
        if config.alpha != snap.alpha_used:
            return _error(409, f"alpha {config.alpha} does not match index alpha {snap.alpha_used}")

        pool = state.enabled_models(snap)
        if "pool" in body:
            req = body["pool"]
            if not isinstance(req, list) or not all(isinstance(m, str) for m in req):
                return _error(400, "pool must be a list of model ids")
            unknown = sorted(set(req) - set(snap.models))
            if unknown:
                return _error(400, f"unknown models in pool: {unknown}")
            pool = [m for m in pool if m in set(req)]
        if not pool:
            return _error(422, "routing pool is empty after restriction")

        tagging_cost = 0.0
        if has_tags:
            t = body["tags"]
            if not isinstance(t, dict):
                return _error(400, "tags must be an object")
            try:
                tags = normalize_tags_input(t.get("knowledge", []), t.get("capabilities", []))
            except InvalidLabel as exc:
                return _error(400, str(exc))
        else:
            text = body["text"]
            if not isinstance(text, str) or not text.strip():
                return _error(400, "text must be a non-empty string")
            try:
                result = state.tag(text)
            except (TaggerUnavailable, TaggerParseError) as exc:
                return _error(503, f"tagger unavailable: {exc}")
            except InvalidQuery as exc:
                return _error(400, str(exc))
            tags, tagging_cost = result.tags, result.tagging_cost

        try:
            decision = route(snap, tags, config, pool)
        except AlphaMismatch as exc:
            return _error(409, str(exc))
        except KCRouteError as exc:
            return _error(400, str(exc))
        out = decision_body(decision, snap, snap.prepare_tags(tags), tagging_cost)
        if body.get("forward"):
            out["forwarded"] = _forward(state, decision.model_id, body)
        return out

    @app.get("/v1/models")
    def models():
        snap = state.snapshot
        return {"models": [state.entry(m).to_dict() for m in sorted(snap.models)],
                "pending": sorted(state.pending)}

    @app.post("/v1/models/{model_id}/records")
    async def upload(model_id: str, request: Request):
        if not admin_ok(request):
            return _error(401, "admin token required")
        raw = (await request.body()).decode("utf-8", errors="replace")
        try:
            n = state.upload_records(model_id, raw.splitlines())
        except Conflict as exc:
            return _error(409, str(exc))
        except KCRouteError as exc:
            return _error(400, str(exc))
        return {"model_id": model_id, "records": n, "pending": sorted(state.pending)}

    @app.post("/v1/index/rebuild")
    def rebuild(request: Request):
        if not admin_ok(request):
            return _error(401, "admin token required")
        new = state.rebuild()
        return {"index_version": new.version, "models": sorted(new.models)}

    @app.get("/v1/index/stats")
    def stats():
        return {**state.snapshot.stats_summary(), "pending": sorted(state.pending)}

    return app


def _forward(state: ServiceState, model_id: str, body: dict):
    entry = state.entry(model_id)
    if not entry.endpoint:
        return {"error": f"no endpoint configured for {model_id!r}"}
    import httpx

    client = state._forward_client or httpx.Client(timeout=120.0)
    try:
        resp = client.post(entry.endpoint, json={"model": model_id, "prompt": body.get("text", "")})
        return {"status": resp.status_code, "body": resp.json()}
    except Exception as exc:
        return {"error": str(exc)}


def load_registry(path) -> dict[str, ModelEntry]:
    with open(path) as fh:
        data = json.load(fh)
    items = data["models"] if isinstance(data, dict) else data
    return {d["id"]: ModelEntry(d["id"], d.get("display_name", ""), d.get("cost", {}),
                                bool(d.get("enabled", True)), d.get("endpoint")) for d in items}


def serve(state: ServiceState, bind: str | None = None):
    import uvicorn

    bind = bind or os.environ.get("ROUTER_BIND_ADDR", "127.0.0.1:8080")
    host, _, port = bind.rpartition(":")
    uvicorn.run(create_app(state), host=host or "127.0.0.1", port=int(port), log_level="info")
