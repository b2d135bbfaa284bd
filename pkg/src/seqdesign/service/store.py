"""Atomic JSON persistence for session records, one file per session."""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path

from ..errors import SessionNotFoundError


class SessionStore:
    """State directory of ``<id>.json`` files written via temp-file+rename.

    ``lock_for`` hands out one mutex per session id; callers serialize
    mutations with it so concurrent requests to one session cannot
    interleave between load and save.
    """

    def __init__(self, state_dir):
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def _path(self, session_id: str) -> Path:
        if not session_id or "/" in session_id or session_id.startswith("."):
            raise SessionNotFoundError(f"invalid session id {session_id!r}")
        return self.state_dir / f"{session_id}.json"

    def lock_for(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            if session_id not in self._locks:
                self._locks[session_id] = threading.Lock()
            return self._locks[session_id]

    def exists(self, session_id: str) -> bool:
        return self._path(session_id).exists()

    def load(self, session_id: str) -> dict:
        path = self._path(session_id)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            raise SessionNotFoundError(f"no session {session_id!r}") from None

    def save(self, session_id: str, record: dict) -> None:
        path = self._path(session_id)
        tmp = path.with_suffix(".json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(record, fh, sort_keys=True)
            fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    def list_ids(self) -> list[str]:
        return sorted(p.stem for p in self.state_dir.glob("*.json"))
