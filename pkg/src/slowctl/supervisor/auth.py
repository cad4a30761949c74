"""Login sessions and the authorization policy.

Roles: guest (read-only), shift (operate: HV on/off, acknowledge, load
reference files), expert (full, but only within their own detector set).
Sessions expire after one hour of inactivity, except the designated
control-room session which must stay up.

Users file (config root `users.txt`):

    USER <name> <password> <role> [detector ...] [CONTROL_ROOM]
"""
from __future__ import annotations

import secrets
import threading
from dataclasses import dataclass, field
from enum import Enum

from ..values import SlowControlError

SESSION_TIMEOUT_MS = 3_600_000  # one hour of inactivity


class AuthError(SlowControlError):
    pass


class AuthExpired(AuthError):
    pass


class PermissionDenied(AuthError):
    pass


class Action(Enum):
    VIEW = "view"
    ACK = "ack"
    HV_COMMAND = "hv_command"
    LOAD_HVREF = "load_hvref"
    SAVE_RECIPE = "save_recipe"
    COMMIT_RECIPE = "commit_recipe"
    SAVE_SNAPSHOT = "save_snapshot"
    APPLY_SNAPSHOT = "apply_snapshot"
    INTERLOCK_CONTROL = "interlock_control"


ROLE_ACTIONS = {
    "guest": frozenset({Action.VIEW}),
    "shift": frozenset({Action.VIEW, Action.ACK, Action.HV_COMMAND, Action.LOAD_HVREF}),
    "expert": frozenset(Action),
}

#: actions whose targets are checked against an expert's detector set
SCOPED_ACTIONS = frozenset({Action.HV_COMMAND, Action.LOAD_HVREF, Action.SAVE_RECIPE,
                            Action.COMMIT_RECIPE, Action.APPLY_SNAPSHOT,
                            Action.INTERLOCK_CONTROL, Action.SAVE_SNAPSHOT})


@dataclass(frozen=True)
class User:
    name: str
    password: str
    role: str
    detectors: frozenset[str] = frozenset()
    control_room: bool = False


def parse_users(text: str) -> dict[str, User]:
    users = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if fields[0] != "USER" or len(fields) < 4:
            raise AuthError(f"users file line {lineno}: {raw!r}")
        name, password, role = fields[1], fields[2], fields[3]
        if role not in ROLE_ACTIONS:
            raise AuthError(f"users file line {lineno}: unknown role {role!r}")
        tail = fields[4:]
        control_room = "CONTROL_ROOM" in tail
        detectors = frozenset(d for d in tail if d != "CONTROL_ROOM")
        users[name] = User(name, password, role, detectors, control_room)
    return users


@dataclass
class Session:
    token: str
    user: User
    login_at: int
    last_activity: int = 0

    @property
    def role(self) -> str:
        return self.user.role


class SessionManager:
    def __init__(self, users: dict[str, User], clock):
        self.users = users
        self.clock = clock
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def login(self, name: str, password: str) -> Session:
        user = self.users.get(name)
        if user is None or user.password != password:
            raise AuthError("bad credentials")
        now = self.clock.now_ms()
        session = Session(secrets.token_hex(16), user, now, now)
        with self._lock:
            self._sessions[session.token] = session
        return session

    def logout(self, token: str) -> None:
        with self._lock:
            self._sessions.pop(token, None)

    def get(self, token: str | None) -> Session:
        """Session for a token, touching its activity clock. Expired sessions
        (outside the control room) raise AuthExpired."""
        if not token:
            raise AuthError("missing token")
        with self._lock:
            session = self._sessions.get(token)
            if session is None:
                raise AuthError("unknown or logged-out token")
            now = self.clock.now_ms()
            if not session.user.control_room and \
                    now - session.last_activity > SESSION_TIMEOUT_MS:
                del self._sessions[session.token]
                raise AuthExpired("session expired after one hour of inactivity")
            session.last_activity = now
            return session

    def authorize(self, session: Session, action: Action,
                  targets: frozenset[str] | set[str] = frozenset()) -> None:
        """Raises PermissionDenied unless the session's role allows `action`
        on every target detector."""
        allowed = ROLE_ACTIONS[session.role]
        if action not in allowed:
            raise PermissionDenied(f"role {session.role} may not {action.value}")
        if session.role == "expert" and action in SCOPED_ACTIONS:
            outside = set(targets) - set(session.user.detectors)
            if outside:
                raise PermissionDenied(
                    f"{session.user.name} is not expert for: {', '.join(sorted(outside))}")

    def active_count(self) -> int:
        with self._lock:
            return len(self._sessions)
