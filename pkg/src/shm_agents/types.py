"""Core domain types flowing between the planner, allocator, and skill nodes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

STATUS_OK = "ok"
STATUS_RESOLVABLE = "resolvable_error"
STATUS_FATAL = "fatal_error"

ACTIONS = ("dispatch", "retry", "abort", "finish")


@dataclass
class PlanStep:
    node_name: str
    instruction: str
    expected_inputs: list[str] = field(default_factory=list)
    expected_outputs: list[str] = field(default_factory=list)


@dataclass
class ExecutionPlan:
    steps: list[PlanStep]

    def to_json(self) -> dict[str, Any]:
        return {
            "steps": [
                {
                    "node": s.node_name,
                    "instruction": s.instruction,
                    "inputs": list(s.expected_inputs),
                    "outputs": list(s.expected_outputs),
                }
                for s in self.steps
            ]
        }


@dataclass
class AllocateDecision:
    action: str                      # dispatch | retry | abort | finish
    target_node: Optional[str] = None
    instruction: str = ""
    reason: str = ""

    def __post_init__(self) -> None:
        if self.action not in ACTIONS:
            raise ValueError(f"action must be one of {ACTIONS}, got {self.action!r}")
        if self.action in ("dispatch", "retry") and not self.target_node:
            raise ValueError(f"{self.action} decisions need a target node")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"action": self.action}
        if self.target_node:
            out["node"] = self.target_node
        if self.instruction:
            out["instruction"] = self.instruction
        if self.reason:
            out["reason"] = self.reason
        return out


@dataclass
class SkillResult:
    status: str                      # ok | resolvable_error | fatal_error
    message: str = ""
    produced_variables: list[str] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


@dataclass
class StepLogEntry:
    node: str
    instruction: str
    status: str
    retries: int = 0
    message: str = ""


@dataclass
class SummaryReport:
    narrative: str
    step_log: list[StepLogEntry] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)
    variable_index: dict[str, str] = field(default_factory=dict)
    outcome: str = "finish"          # finish | abort

    def to_json(self) -> dict[str, Any]:
        return {
            "narrative": self.narrative,
            "outcome": self.outcome,
            "step_log": [
                {
                    "node": e.node,
                    "instruction": e.instruction,
                    "status": e.status,
                    "retries": e.retries,
                    "message": e.message,
                }
                for e in self.step_log
            ],
            "artifacts": list(self.artifacts),
            "variable_index": dict(self.variable_index),
        }
