"""HTTP service: health, gated retrieval, stored-pose rendering, index info."""

from __future__ import annotations

import logging

from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from pydantic import BaseModel

from .clients import HashEmbedder, HttpEmbeddingClient, HttpNormalizationClient
from .config import EngineConfig
from .errors import ClientError, ValidationError
from .index import FlatIndex, build_index
from .pose import encode_png, rasterize
from .retrieval import GateConfig, RetrievalClients, UserPrompt, retrieve
from .store import PoseStore

logger = logging.getLogger(__name__)


class HealthResponse(BaseModel):
    status: str
    index_entries: int


class IndexInfoResponse(BaseModel):
    entries: int
    dim: int
    path: str | None = None


class RetrieveRequest(BaseModel):
    prompt: str


class RetrieveResponse(BaseModel):
    kind: str
    canonical_query: str
    source: str
    pose_ref: str | None = None
    score: float | None = None
    entry_id: int | None = None
    pose_url: str | None = None
    best_score: float | None = None


def build_clients(config: EngineConfig) -> RetrievalClients:
    """Clients from config; without endpoint URLs the engine runs self-contained
    (built-in hash embedder, passthrough normalization)."""
    embedder = (
        HttpEmbeddingClient(config.embed_url, config.embed_timeout)
        if config.embed_url
        else HashEmbedder()
    )
    normalizer = (
        HttpNormalizationClient(config.normalize_url, config.normalize_timeout)
        if config.normalize_url
        else None
    )
    return RetrievalClients(embedder, normalizer)


def create_app(
    config: EngineConfig,
    index: FlatIndex | None = None,
    store: PoseStore | None = None,
    clients: RetrievalClients | None = None,
) -> FastAPI:
    """Assemble the service; index/store load failures raise at startup."""
    if index is None:
        index = FlatIndex.load(config.index_path) if config.index_path else build_index([])
    if store is None and config.pose_store_path:
        store = PoseStore(config.pose_store_path)
    if clients is None:
        clients = build_clients(config)
    gate_cfg = GateConfig(config.alpha_u)

    app = FastAPI(title="astra retrieval engine")

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", index_entries=len(index))

    @app.get("/index/info", response_model=IndexInfoResponse)
    def index_info() -> IndexInfoResponse:
        return IndexInfoResponse(entries=len(index), dim=index.dim, path=config.index_path)

    @app.post("/retrieve", response_model=RetrieveResponse, response_model_exclude_none=True)
    def retrieve_pose(request: RetrieveRequest) -> RetrieveResponse:
        try:
            outcome = retrieve(UserPrompt(request.prompt), index, clients, gate_cfg)
        except ValidationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except ClientError as exc:
            raise HTTPException(status_code=502, detail=str(exc)) from exc
        return RetrieveResponse(
            kind=outcome.kind,
            canonical_query=outcome.canonical_query.text,
            source=outcome.canonical_query.source,
            pose_ref=outcome.pose_ref,
            score=outcome.score,
            entry_id=outcome.entry_id,
            pose_url=f"/pose/{outcome.entry_id}.png" if outcome.is_hit else None,
            best_score=outcome.best_score,
        )

    @app.get("/pose/{entry_id}.png")
    def pose_png(entry_id: int) -> Response:
        if store is None:
            raise HTTPException(status_code=503, detail="no pose store configured")
        try:
            entry = index.entry(entry_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no entry {entry_id}") from None
        try:
            pose_map = store.resolve(entry.pose_ref)
        except KeyError:
            raise HTTPException(
                status_code=404, detail=f"pose {entry.pose_ref!r} missing from store"
            ) from None
        return Response(content=encode_png(rasterize(pose_map)), media_type="image/png")

    return app


def serve(config: EngineConfig, host: str = "127.0.0.1", port: int = 8000) -> None:
    """Run the service; startup errors (corrupt index, bad paths) propagate."""
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=host, port=port, log_level=config.log_level.lower())
