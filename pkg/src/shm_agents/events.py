"""Run events emitted by the orchestrator and consumed by the service layer.

Event types: plan, allocate, skill_start, skill_result, retry, summary,
error, plus config_stage/config_created for configuration builds. The JSON
shape is the one the SSE endpoints expose:
``{type, step_index?, node?, text?, artifact_ids?, status?}``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional


@dataclass
class OrchestratorEvent:
    type: str
    step_index: Optional[int] = None
    node: Optional[str] = None
    text: Optional[str] = None
    artifact_ids: list[str] = field(default_factory=list)
    status: Optional[str] = None

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"type": self.type}
        if self.step_index is not None:
            out["step_index"] = self.step_index
        if self.node is not None:
            out["node"] = self.node
        if self.text is not None:
            out["text"] = self.text
        if self.artifact_ids:
            out["artifact_ids"] = list(self.artifact_ids)
        if self.status is not None:
            out["status"] = self.status
        return out


TERMINAL_EVENT_TYPES = ("summary", "error")


class EventBuffer:
    """Append-only event log for one run, safe for concurrent readers.

    Late subscribers replay the buffer from any index (SSE Last-Event-ID
    resume), then follow live appends until a terminal event lands.
    """

    def __init__(self) -> None:
        self._events: list[OrchestratorEvent] = []
        self._cond = threading.Condition()
        self._closed = False

    def append(self, event: OrchestratorEvent) -> int:
        with self._cond:
            self._events.append(event)
            if event.type in TERMINAL_EVENT_TYPES:
                self._closed = True
            self._cond.notify_all()
            return len(self._events) - 1

    def snapshot(self) -> list[OrchestratorEvent]:
        with self._cond:
            return list(self._events)

    @property
    def closed(self) -> bool:
        with self._cond:
            return self._closed

    def follow(self, start: int = 0, timeout: float = 120.0) -> Iterator[tuple[int, OrchestratorEvent]]:
        """Yield (index, event) from `start`, blocking for new events until
        the run terminates or `timeout` passes with no progress."""
        idx = start
        while True:
            with self._cond:
                while idx >= len(self._events):
                    if self._closed:
                        return
                    if not self._cond.wait(timeout):
                        return
                event = self._events[idx]
            yield idx, event
            idx += 1


EventSink = Callable[[OrchestratorEvent], None]
