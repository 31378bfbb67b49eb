"""Dialogue memory: the ordered turn log each session accumulates.

context_window always keeps the system turn and then as many of the most
recent turns as fit the character budget, so downstream prompts see a
suffix of the conversation.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Optional

ROLES = ("system", "user", "architecture", "allocate", "skill", "summary")

DEFAULT_CHAR_BUDGET = 24000


@dataclass
class DialogueTurn:
    role: str
    content: str
    timestamp: float = 0.0
    seq: int = 0
    artifacts: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")


class MemoryStore:
    """Per-session turn log; appends are strictly ordered."""

    def __init__(self, system_content: str = "") -> None:
        self._turns: list[DialogueTurn] = []
        self._lock = threading.RLock()
        self._seq = 0
        if system_content:
            self.append(DialogueTurn(role="system", content=system_content))

    def append(self, turn: DialogueTurn) -> None:
        with self._lock:
            self._seq += 1
            turn.seq = self._seq
            turn.timestamp = time.time()
            if self._turns and turn.timestamp <= self._turns[-1].timestamp:
                turn.timestamp = self._turns[-1].timestamp + 1e-6
            self._turns.append(turn)

    def add(self, role: str, content: str, artifacts: Optional[list[str]] = None) -> None:
        self.append(DialogueTurn(role=role, content=content, artifacts=artifacts or []))

    def turns(self) -> list[DialogueTurn]:
        with self._lock:
            return list(self._turns)

    def context_window(self, char_budget: int = DEFAULT_CHAR_BUDGET) -> list[DialogueTurn]:
        with self._lock:
            turns = list(self._turns)
        system = [t for t in turns if t.role == "system"][:1]
        rest = [t for t in turns if not system or t is not system[0]]
        picked: list[DialogueTurn] = []
        used = 0
        for turn in reversed(rest):
            cost = len(turn.content)
            if used + cost > char_budget:
                break
            picked.append(turn)
            used += cost
        picked.reverse()
        return system + picked
