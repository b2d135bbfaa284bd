"""Session lifecycle: create, recommend, observe, summarize, export.

The persisted record is the source of truth; each request rebuilds the
engine from it, applies one transition under the per-session lock, and
persists atomically before returning. A crash between compute and save
leaves the previous state intact.
"""

from __future__ import annotations

import secrets
from datetime import datetime, timezone

from ..config import parse_design_config, parse_model_config
from ..smc import (
    STATUS_AWAITING_OBSERVATION,
    STATUS_AWAITING_RECOMMENDATION,
    SessionEngine,
    posterior_summary,
)
from .store import SessionStore

RECORD_VERSION = 1


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class SessionManager:
    def __init__(self, state_dir):
        self.store = SessionStore(state_dir)

    # -- helpers -----------------------------------------------------------

    def _engine_from_record(self, record: dict) -> SessionEngine:
        cfg = record["config"]
        model, bank = parse_model_config(cfg["model"])
        design = parse_design_config(cfg["design"], model.templates.m)
        return SessionEngine.from_dict(model, bank, design, record["engine"])

    def _persist(self, record: dict, engine: SessionEngine) -> dict:
        record["engine"] = engine.to_dict()
        record["status"] = engine.status
        record["updated_at"] = _now()
        self.store.save(record["id"], record)
        return record

    @staticmethod
    def summary(record: dict) -> dict:
        eng = record["engine"]
        return {
            "id": record["id"],
            "status": record["status"],
            "created_at": record["created_at"],
            "updated_at": record["updated_at"],
            "strategy": eng["strategy"],
            "t": len(eng["steps"]),
            "t_max": eng["t_max"],
            "n_particles": len(eng["particles"]),
            "filter_ids": [f["id"] for f in record["config"]["model"]["filters"]],
            "template_names": record["template_names"],
        }

    # -- operations ---------------------------------------------------------

    def create(
        self,
        model_config: dict,
        design_config: dict,
        strategy: str = "smcs",
        seed: int | None = None,
        t_max: int | None = None,
    ) -> dict:
        model, bank = parse_model_config(model_config)
        design = parse_design_config(design_config, model.templates.m)
        engine = SessionEngine(
            model, bank, design, strategy=strategy, t_max=t_max, seed=seed
        )
        session_id = secrets.token_hex(8)
        now = _now()
        record = {
            "version": RECORD_VERSION,
            "id": session_id,
            "created_at": now,
            "updated_at": now,
            "status": engine.status,
            "template_names": list(model.templates.names),
            "prior_posterior": posterior_summary(engine.pset).to_dict(),
            "config": {
                "model": model_config,
                "design": design_config,
                "strategy": strategy,
                "seed": seed,
                "t_max": t_max,
            },
            "engine": engine.to_dict(),
        }
        self.store.save(session_id, record)
        return record

    def get(self, session_id: str) -> dict:
        return self.store.load(session_id)

    def recommendation(self, session_id: str) -> dict:
        with self.store.lock_for(session_id):
            record = self.store.load(session_id)
            engine = self._engine_from_record(record)
            if engine.status == STATUS_AWAITING_OBSERVATION and engine.pending is not None:
                return engine.pending.to_dict()
            rec = engine.recommend()
            self._persist(record, engine)
            return rec.to_dict()

    def observe(self, session_id: str, filter_id: str, count: int) -> dict:
        with self.store.lock_for(session_id):
            record = self.store.load(session_id)
            engine = self._engine_from_record(record)
            result = engine.observe(filter_id, count)
            self._persist(record, engine)
            return {
                "step": result.step.to_dict(),
                "stopped": result.stopped,
                "status": engine.status,
                "posterior": result.posterior.to_dict(),
            }

    def posterior(self, session_id: str, level: float = 0.95) -> dict:
        record = self.store.load(session_id)
        engine = self._engine_from_record(record)
        return posterior_summary(engine.pset, level).to_dict()

    def history(self, session_id: str) -> dict:
        record = self.store.load(session_id)
        return {
            "id": record["id"],
            "status": record["status"],
            "ig_threshold": record["config"]["design"].get("ig_threshold", 1e-4),
            "template_names": record["template_names"],
            "prior_posterior": record["prior_posterior"],
            "steps": record["engine"]["steps"],
        }
