"""FastAPI application exposing live observing sessions."""

from __future__ import annotations

from importlib import metadata
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from ..errors import (
    ConfigError,
    SeqDesignError,
    SessionNotFoundError,
    SessionStateError,
)
from ..util import RNG_KIND
from .manager import SessionManager
from .schemas import (
    ErrorBody,
    HealthBody,
    HistoryBody,
    ObservationBody,
    ObservationResultBody,
    PosteriorBody,
    RecommendationBody,
    SessionCreateBody,
    SessionSummaryBody,
)

try:
    _VERSION = metadata.version("seqdesign")
except metadata.PackageNotFoundError:  # pragma: no cover - editable quirk
    _VERSION = "0.0.0"


def _error(status: int, code: str, message: str, details=None) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content=ErrorBody(code=code, message=message, details=details).model_dump(),
    )


def create_app(state_dir, frontend_dir=None) -> FastAPI:
    app = FastAPI(title="seqdesign session service", version=_VERSION)
    manager = SessionManager(state_dir)
    app.state.manager = manager

    @app.exception_handler(SessionNotFoundError)
    async def _not_found(request: Request, exc: SessionNotFoundError):
        return _error(404, "not-found", str(exc))

    @app.exception_handler(SessionStateError)
    async def _wrong_state(request: Request, exc: SessionStateError):
        return _error(409, "wrong-state", str(exc), details={"status": exc.status})

    @app.exception_handler(ConfigError)
    async def _bad_config(request: Request, exc: ConfigError):
        return _error(422, "invalid-config", str(exc))

    @app.exception_handler(SeqDesignError)
    async def _engine_error(request: Request, exc: SeqDesignError):
        return _error(500, "compute-failed", str(exc))

    @app.get("/healthz", response_model=HealthBody)
    def healthz():
        return HealthBody(status="ok", name="seqdesign", version=_VERSION, rng=RNG_KIND)

    @app.post("/sessions", response_model=SessionSummaryBody, status_code=201)
    def create_session(body: SessionCreateBody):
        record = manager.create(
            model_config=body.model.model_dump(exclude_none=True),
            design_config=body.design.model_dump(exclude_none=True),
            strategy=body.strategy,
            seed=body.seed,
            t_max=body.t_max,
        )
        return SessionSummaryBody(**manager.summary(record))

    @app.get("/sessions", response_model=list[str])
    def list_sessions():
        return manager.store.list_ids()

    @app.get("/sessions/{session_id}", response_model=SessionSummaryBody)
    def get_session(session_id: str):
        return SessionSummaryBody(**manager.summary(manager.get(session_id)))

    @app.get("/sessions/{session_id}/recommendation", response_model=RecommendationBody)
    def get_recommendation(session_id: str):
        return RecommendationBody(**manager.recommendation(session_id))

    @app.post("/sessions/{session_id}/observations", response_model=ObservationResultBody)
    def submit_observation(session_id: str, body: ObservationBody):
        return ObservationResultBody(
            **manager.observe(session_id, body.filter_id, body.count)
        )

    @app.get("/sessions/{session_id}/posterior", response_model=PosteriorBody)
    def get_posterior(session_id: str, level: float = 0.95):
        return PosteriorBody(**manager.posterior(session_id, level))

    @app.get("/sessions/{session_id}/history", response_model=HistoryBody)
    def get_history(session_id: str):
        return HistoryBody(**manager.history(session_id))

    if frontend_dir is None:
        default_front = Path(__file__).resolve().parents[3] / "frontend" / "dist"
        if not default_front.exists():
            default_front = Path(__file__).resolve().parents[4] / "frontend" / "dist"
        frontend_dir = default_front if default_front.exists() else None
    if frontend_dir is not None and Path(frontend_dir).exists():
        app.mount("/ui", StaticFiles(directory=str(frontend_dir), html=True), name="ui")

    return app
