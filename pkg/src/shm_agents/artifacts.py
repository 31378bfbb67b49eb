"""Append-only store for figure artifacts.

Files live under ``artifacts/<session>/<uuid>.png``. Ids are deterministic
uuid5 values derived from the session and a per-session counter, so replays
of the same run produce the same ids.
"""

from __future__ import annotations

import threading
import uuid
from pathlib import Path
from typing import Optional, Union

_NAMESPACE = uuid.UUID("8a6ff37c-9a44-4a4e-9b62-3f6f3e6d1a11")


class ArtifactStore:
    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._paths: dict[str, Path] = {}
        self._counters: dict[str, int] = {}

    def put_png(self, session_id: str, data: bytes) -> str:
        with self._lock:
            seq = self._counters.get(session_id, 0)
            self._counters[session_id] = seq + 1
            art_id = str(uuid.uuid5(_NAMESPACE, f"{session_id}:{seq}"))
            path = self.root / session_id / f"{art_id}.png"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
            self._paths[art_id] = path
            return art_id

    def path(self, artifact_id: str) -> Optional[Path]:
        with self._lock:
            hit = self._paths.get(artifact_id)
        if hit is not None and hit.exists():
            return hit
        for cand in self.root.glob(f"*/{artifact_id}.png"):
            return cand
        return None

    def exists(self, artifact_id: str) -> bool:
        return self.path(artifact_id) is not None
