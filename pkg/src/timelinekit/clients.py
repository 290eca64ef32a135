"""Model clients: a scripted client for offline runs and a remote wire client.

The wire protocol is a single JSON POST carrying the system prompt, the user
content, and the decoding config (deterministic decoding requested); the
response body carries the completion under ``text``. Credentials come only
from environment variables, never from config files.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .errors import ModelError


class ModelClient(Protocol):
    """Anything that can turn (system prompt, user content) into text."""

    client_id: str

    def complete(self, system: str, user: str, job_id: str = "") -> str: ...


class AuditLog:
    """Appends one JSON line per request/response under a run directory."""

    def __init__(self, run_dir: str | Path):
        self._path = Path(run_dir) / "requests.jsonl"
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._sequence = 0

    def record(self, client_id: str, job_id: str, system: str, user: str, response: str) -> None:
        entry = {
            "seq": self._sequence,
            "client": client_id,
            "job_id": job_id,
            "system": system,
            "user": user,
            "response": response,
        }
        with self._lock:
            entry["seq"] = self._sequence
            self._sequence += 1
            with self._path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(entry, ensure_ascii=False) + "\n")


@dataclass
class ScriptedModelClient:
    """Deterministic client for tests and offline runs.

    Either ``responses`` (consumed in call order; an Exception entry is
    raised instead of returned) or ``script`` (a function of the prompts)
    must be provided. Every request is kept in ``requests`` for assertions.
    """

    responses: Sequence[str | Exception] | None = None
    script: Callable[[str, str], str] | None = None
    client_id: str = "scripted"
    audit: AuditLog | None = None
    requests: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if (self.responses is None) == (self.script is None):
            raise ValueError("provide exactly one of responses or script")
        self._lock = threading.Lock()
        self._cursor = 0

    @property
    def call_count(self) -> int:
        return len(self.requests)

    def complete(self, system: str, user: str, job_id: str = "") -> str:
        with self._lock:
            self.requests.append((system, user))
            if self.script is not None:
                out: str | Exception = self.script(system, user)
            else:
                if self._cursor >= len(self.responses):  # type: ignore[arg-type]
                    raise ModelError(f"{self.client_id}: script exhausted")
                out = self.responses[self._cursor]  # type: ignore[index]
                self._cursor += 1
        if isinstance(out, Exception):
            raise out
        if self.audit is not None:
            self.audit.record(self.client_id, job_id, system, user, out)
        return out


GENERIC_API_KEY_ENV = "TIMELINEKIT_API_KEY"


def resolve_api_token(api_key_env: str) -> str:
    """Read the auth token from the backend-specific variable, falling back
    to the generic one; tokens never live in config files."""
    for name in (api_key_env, GENERIC_API_KEY_ENV):
        token = os.environ.get(name, "")
        if token:
            return token
    return ""


class RemoteModelClient:
    """JSON-over-HTTP client with a bounded retry policy.

    The auth token is read from the environment at call time so audit logs
    and configs never contain credentials.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = GENERIC_API_KEY_ENV,
        timeout: float = 30.0,
        retries: int = 2,
        retry_wait: float = 1.0,
        audit: AuditLog | None = None,
    ):
        if not endpoint:
            raise ValueError("endpoint must be non-empty")
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.retries = max(0, retries)
        self.retry_wait = retry_wait
        self.audit = audit
        self.client_id = f"remote:{model or endpoint}"

    def complete(self, system: str, user: str, job_id: str = "") -> str:
        payload = {
            "model": self.model,
            "system": system,
            "user": user,
            "decoding": {"temperature": 0.0, "deterministic": True},
        }
        headers = {"Content-Type": "application/json"}
        token = resolve_api_token(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                reply = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
                reply.raise_for_status()
                text = reply.json()["text"]
                if self.audit is not None:
                    self.audit.record(self.client_id, job_id, system, user, text)
                return text
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                if attempt < self.retries:
                    time.sleep(self.retry_wait * (attempt + 1))
        raise ModelError(f"{self.client_id}: request failed: {last_error}") from last_error
