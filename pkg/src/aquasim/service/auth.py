"""Bearer tokens and credential storage.

Tokens are compact three-part HMAC-SHA256 web tokens (header.claims.signature,
base64url without padding). Passwords rest as salted PBKDF2 hashes.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import os
import time
from dataclasses import dataclass

ROLE_OPERATOR = "operator"
ROLE_GATEWAY = "gateway"
ROLES = (ROLE_OPERATOR, ROLE_GATEWAY)

DEFAULT_TOKEN_TTL_S = 24 * 3600

_PBKDF2_ITERATIONS = 100_000


class AuthError(Exception):
    pass


def _b64url(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode()


def _unb64url(text: str) -> bytes:
    pad = "=" * (-len(text) % 4)
    return base64.urlsafe_b64decode(text + pad)


def hash_password(password: str, salt: bytes | None = None) -> str:
    salt = salt if salt is not None else os.urandom(16)
    digest = hashlib.pbkdf2_hmac("sha256", password.encode(), salt, _PBKDF2_ITERATIONS)
    return f"pbkdf2:{_PBKDF2_ITERATIONS}:{salt.hex()}:{digest.hex()}"


def verify_password(password: str, stored: str) -> bool:
    try:
        scheme, iterations, salt_hex, digest_hex = stored.split(":")
        if scheme != "pbkdf2":
            return False
        digest = hashlib.pbkdf2_hmac(
            "sha256", password.encode(), bytes.fromhex(salt_hex), int(iterations)
        )
        return hmac.compare_digest(digest.hex(), digest_hex)
    except (ValueError, TypeError):
        return False


@dataclass(frozen=True)
class User:
    username: str
    password_hash: str
    role: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise AuthError(f"unknown role {self.role!r}")


class TokenSigner:
    def __init__(self, secret: str, ttl_s: int = DEFAULT_TOKEN_TTL_S):
        self._key = secret.encode()
        self.ttl_s = ttl_s

    def _sign(self, signing_input: bytes) -> bytes:
        return hmac.new(self._key, signing_input, hashlib.sha256).digest()

    def issue(self, subject: str, role: str, now: float | None = None) -> str:
        now = time.time() if now is None else now
        header = _b64url(json.dumps({"alg": "HS256", "typ": "JWT"}).encode())
        claims = _b64url(
            json.dumps(
                {"sub": subject, "role": role, "iat": int(now), "exp": int(now) + self.ttl_s}
            ).encode()
        )
        signature = _b64url(self._sign(f"{header}.{claims}".encode()))
        return f"{header}.{claims}.{signature}"

    def verify(self, token: str, now: float | None = None) -> dict:
        """Return the claims of a valid, unexpired token; raise AuthError otherwise."""
        now = time.time() if now is None else now
        try:
            header, claims_part, signature = token.split(".")
        except ValueError:
            raise AuthError("malformed token") from None
        expected = self._sign(f"{header}.{claims_part}".encode())
        try:
            if not hmac.compare_digest(expected, _unb64url(signature)):
                raise AuthError("bad signature")
            claims = json.loads(_unb64url(claims_part))
        except (ValueError, TypeError):
            raise AuthError("malformed token") from None
        if not isinstance(claims, dict) or "exp" not in claims or "role" not in claims:
            raise AuthError("missing claims")
        if claims["exp"] <= now:
            raise AuthError("token expired")
        if claims["role"] not in ROLES:
            raise AuthError("unknown role")
        return claims


class LoginThrottle:
    """429 guard: at most `limit` failed attempts per account per window."""

    def __init__(self, limit: int = 10, window_s: float = 60.0):
        self.limit = limit
        self.window_s = window_s
        self._failures: dict[str, list[float]] = {}

    def blocked(self, username: str, now: float | None = None) -> bool:
        now = time.time() if now is None else now
        failures = [t for t in self._failures.get(username, []) if now - t < self.window_s]
        self._failures[username] = failures
        return len(failures) >= self.limit

    def record_failure(self, username: str, now: float | None = None) -> None:
        now = time.time() if now is None else now
        self._failures.setdefault(username, []).append(now)
