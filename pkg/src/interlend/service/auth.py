"""Bearer-token session store.

Tokens bind an opaque value to a (user, library) pair with expiry; role
resolution happens per request against the live grant directory, so a
revoked operator loses access immediately. Stands in for federated
login, which is out of scope by design.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass
from datetime import datetime, timedelta

from ..errors import Unauthorized


@dataclass(frozen=True)
class Session:
    token: str
    user: str
    library: str
    expires_at: datetime


class TokenStore:
    def __init__(self, clock, ttl_hours: int = 24):
        self.clock = clock
        self.ttl_hours = ttl_hours
        self._sessions: dict[str, Session] = {}

    def issue(self, user: str, library: str) -> Session:
        token = secrets.token_urlsafe(24)
        session = Session(
            token=token, user=user, library=library,
            expires_at=self.clock() + timedelta(hours=self.ttl_hours))
        self._sessions[token] = session
        return session

    def resolve(self, token: str | None) -> Session:
        if not token:
            raise Unauthorized("missing bearer token")
        session = self._sessions.get(token)
        if session is None:
            raise Unauthorized("unknown token")
        if session.expires_at <= self.clock():
            del self._sessions[token]
            raise Unauthorized("token expired")
        return session
