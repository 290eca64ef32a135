"""Keyed file store used for atom-decomposition and entailment-verdict caches.

Entries live in memory and, when a directory is configured, as one JSON file
per key so runs are reproducible across processes. Reads are lock-free on the
in-memory map; writes are serialized.
"""

from __future__ import annotations

import hashlib
import json
import threading
from pathlib import Path
from typing import Any


class KeyedFileStore:
    def __init__(self, directory: str | Path | None = None):
        self._directory = Path(directory) if directory is not None else None
        if self._directory is not None:
            self._directory.mkdir(parents=True, exist_ok=True)
        self._memory: dict[str, Any] = {}
        self._write_lock = threading.Lock()

    @staticmethod
    def _digest(key_parts: tuple[str, ...]) -> str:
        joined = "\x1f".join(key_parts)
        return hashlib.sha256(joined.encode("utf-8")).hexdigest()

    def _path_for(self, digest: str) -> Path:
        assert self._directory is not None
        return self._directory / f"{digest}.json"

    def get(self, *key_parts: str) -> Any | None:
        digest = self._digest(key_parts)
        if digest in self._memory:
            return self._memory[digest]
        if self._directory is not None:
            path = self._path_for(digest)
            if path.is_file():
                value = json.loads(path.read_text(encoding="utf-8"))
                self._memory[digest] = value
                return value
        return None

    def put(self, value: Any, *key_parts: str) -> None:
        digest = self._digest(key_parts)
        with self._write_lock:
            self._memory[digest] = value
            if self._directory is not None:
                payload = json.dumps(value, ensure_ascii=False)
                self._path_for(digest).write_text(payload, encoding="utf-8")

    def __len__(self) -> int:
        return len(self._memory)
