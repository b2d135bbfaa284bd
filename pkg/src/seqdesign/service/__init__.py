"""Service subpackage: FastAPI app, session manager, persistence."""

from .app import create_app
from .manager import SessionManager
from .store import SessionStore

__all__ = ["create_app", "SessionManager", "SessionStore"]
