"""The supervisory layer: ingest pipeline, liveness, derived quantities,
sessions/authorization and the operator HTTP API."""
from .auth import Action, AuthError, AuthExpired, PermissionDenied, SessionManager, parse_users
from .core import IngestPump, Supervisor
from .liveness import LivenessBank

__all__ = ["Action", "AuthError", "AuthExpired", "PermissionDenied", "SessionManager",
           "parse_users", "IngestPump", "Supervisor", "LivenessBank"]
