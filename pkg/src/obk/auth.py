"""Password hashing, roles and session tokens.

Hash format: `scrypt$<n>$<r>$<p>$<salt-hex>$<hash-hex>`, carrying its own
parameters so they can change without invalidating stored credentials.
Verification is constant time over the derived hash.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional

__all__ = ["Role", "TokenStore", "hash_password", "verify_password"]

# Memory-hard but quick enough for tests: 16 MiB per derivation.
_SCRYPT_N = 2 ** 14
_SCRYPT_R = 8
_SCRYPT_P = 1
_DKLEN = 32


class Role(str, Enum):
    READER = "Reader"
    WRITER = "Writer"
    ADMIN = "Admin"

    @property
    def rank(self) -> int:
        return _ROLE_RANK[self]

    def allows(self, required: "Role") -> bool:
        return self.rank >= required.rank


_ROLE_RANK = {Role.READER: 0, Role.WRITER: 1, Role.ADMIN: 2}


def hash_password(password: str, *, n: int = _SCRYPT_N, r: int = _SCRYPT_R,
                  p: int = _SCRYPT_P) -> str:
    salt = secrets.token_bytes(16)
    dk = hashlib.scrypt(password.encode("utf-8"), salt=salt, n=n, r=r, p=p,
                        dklen=_DKLEN)
    return f"scrypt${n}${r}${p}${salt.hex()}${dk.hex()}"


def verify_password(password: str, stored: str) -> bool:
    try:
        scheme, n, r, p, salt_hex, hash_hex = stored.split("$")
        if scheme != "scrypt":
            return False
        expected = bytes.fromhex(hash_hex)
        dk = hashlib.scrypt(
            password.encode("utf-8"),
            salt=bytes.fromhex(salt_hex),
            n=int(n), r=int(r), p=int(p),
            dklen=len(expected),
        )
    except (ValueError, TypeError):
        return False
    return hmac.compare_digest(dk, expected)


# A fixed hash to verify against when the username is unknown, so login
# latency does not reveal which usernames exist.
DUMMY_HASH = hash_password("unused-dummy-credential")


@dataclass(frozen=True)
class SessionToken:
    token: str
    username: str
    role: Role
    expires_at: float  # time.monotonic() deadline


class TokenStore:
    """In-memory session tokens with fixed TTL."""

    def __init__(self, ttl_seconds: float = 12 * 3600.0):
        self.ttl_seconds = ttl_seconds
        self._lock = threading.Lock()
        self._tokens: dict[str, SessionToken] = {}

    def issue(self, username: str, role: Role) -> SessionToken:
        token = secrets.token_hex(16)  # 128 bits
        session = SessionToken(token, username, role,
                               time.monotonic() + self.ttl_seconds)
        with self._lock:
            self._tokens[token] = session
        return session

    def resolve(self, token: str) -> Optional[SessionToken]:
        with self._lock:
            session = self._tokens.get(token)
            if session is None:
                return None
            if time.monotonic() >= session.expires_at:
                del self._tokens[token]
                return None
            return session

    def revoke(self, token: str) -> None:
        with self._lock:
            self._tokens.pop(token, None)
