"""Run loop: plan, dispatch, judge results, retry or abort, summarize.

The planner and summarizer are LLM calls; the allocator's verdict
(dispatch/retry/abort/finish) is computed deterministically from the plan
state so the loop invariants hold regardless of model behavior, and the
LLM only phrases the subtask command sent to each node. A step runs at
most 1 + MAX_RETRIES times; every terminal path, abort included, emits
exactly one SummaryReport.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from typing import Any, Optional

from .artifacts import ArtifactStore
from .errors import GrammarError, PlanError, UnknownNodeError
from .events import EventBuffer, OrchestratorEvent
from .llm.gateway import LlmGateway, PLAN_TEMPERATURE, SUMMARY_TEMPERATURE
from .llm.grammar import parse_decision, parse_plan, render_plan
from .llm.prompts import ALLOCATE_SYSTEM, ARCHITECTURE_SYSTEM, SUMMARY_SYSTEM
from .skills.base import SkillContext
from .state.configs import BridgeConfig
from .state.memory import MemoryStore
from .state.registry import AlgorithmRegistry
from .state.variables import DataStore, VariableDescriptor
from .types import (
    STATUS_FATAL,
    STATUS_OK,
    STATUS_RESOLVABLE,
    AllocateDecision,
    ExecutionPlan,
    SkillResult,
    StepLogEntry,
    SummaryReport,
)

MAX_RETRIES = 3


@dataclass
class Session:
    id: str
    registry: AlgorithmRegistry
    gateway: LlmGateway
    artifacts: ArtifactStore
    config: Optional[BridgeConfig] = None
    default_seed: int = 0
    datastore: DataStore = field(default_factory=DataStore)
    memory: MemoryStore = field(default_factory=MemoryStore)
    extras: dict[str, Any] = field(default_factory=dict)
    runs: list[EventBuffer] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def __post_init__(self) -> None:
        if not self.memory.turns():
            name = self.config.bridge_name if self.config else "unconfigured bridge"
            self.memory.add("system", f"Structural-health-monitoring session for {name}.")

    def begin_run(self) -> EventBuffer:
        buffer = EventBuffer()
        self.runs.append(buffer)
        return buffer

    def latest_run(self) -> Optional[EventBuffer]:
        return self.runs[-1] if self.runs else None

    def skill_context(self) -> SkillContext:
        return SkillContext(session_id=self.id, datastore=self.datastore,
                            memory=self.memory, gateway=self.gateway,
                            artifacts=self.artifacts, config=self.config,
                            default_seed=self.default_seed, extras=self.extras)


@dataclass
class StepState:
    index: int
    node_name: str
    instruction: str
    expected_inputs: list[str]
    expected_outputs: list[str]
    status: str = "pending"            # pending | ok | failed
    retries: int = 0
    instruction_used: str = ""
    message: str = ""
    artifacts: list[str] = field(default_factory=list)
    produced: list[str] = field(default_factory=list)


@dataclass
class PlanState:
    steps: list[StepState]
    current: Optional[int] = None      # step awaiting judgement
    last_result: Optional[SkillResult] = None

    @classmethod
    def from_plan(cls, plan: ExecutionPlan) -> "PlanState":
        return cls(steps=[StepState(index=i, node_name=s.node_name, instruction=s.instruction,
                                    expected_inputs=list(s.expected_inputs),
                                    expected_outputs=list(s.expected_outputs))
                          for i, s in enumerate(plan.steps)])

    def next_pending(self) -> Optional[StepState]:
        for step in self.steps:
            if step.status == "pending":
                return step
        return None


class Orchestrator:
    def __init__(self, max_retries: int = MAX_RETRIES):
        self.max_retries = max_retries

    # -- public ----------------------------------------------------------------

    def run_task(self, session: Session, user_command: str,
                 attachments: Optional[list[tuple[VariableDescriptor, Any]]] = None) -> SummaryReport:
        with session.lock:
            events = session.begin_run()
            return self._run(session, events, user_command, attachments or [])

    # -- internals ---------------------------------------------------------------

    def _emit(self, session: Session, events: EventBuffer, event: OrchestratorEvent) -> None:
        events.append(event)

    def _run(self, session: Session, events: EventBuffer, user_command: str,
             attachments: list[tuple[VariableDescriptor, Any]]) -> SummaryReport:
        session.memory.add("user", user_command)
        if not user_command or not user_command.strip():
            return self._abort(session, events, [], "empty command: nothing to execute")

        # preprocessing: attachments land in the data store before planning
        for descriptor, payload in attachments:
            name = session.datastore.register(descriptor, payload)
            self._emit(session, events, OrchestratorEvent(
                type="plan", status="preprocessing",
                text=f"registered input variable {name}"))

        try:
            plan = self._plan(session, user_command)
        except UnknownNodeError as exc:
            return self._abort(session, events, [], f"planning failed: {exc}")
        except (PlanError, GrammarError) as exc:
            return self._abort(session, events, [], f"planning failed: {exc}")
        except Exception as exc:
            return self._abort(session, events, [], f"planning failed unexpectedly: {exc}")

        plan_text = render_plan(plan)
        session.memory.add("architecture", plan_text)
        self._emit(session, events, OrchestratorEvent(type="plan", text=plan_text))

        state = PlanState.from_plan(plan)
        ctx = session.skill_context()
        while True:
            decision = self._allocate(session, state)
            if decision.action == "finish":
                return self._finish(session, events, state)
            if decision.action == "abort":
                return self._abort(session, events, state.steps, decision.reason)

            step = state.steps[state.current]
            event_type = "retry" if decision.action == "retry" else "allocate"
            self._emit(session, events, OrchestratorEvent(
                type=event_type, step_index=step.index, node=step.node_name,
                text=decision.instruction))
            session.memory.add("allocate", decision.instruction)

            self._emit(session, events, OrchestratorEvent(
                type="skill_start", step_index=step.index, node=step.node_name))
            node = session.registry.node(step.node_name)
            result = node.execute(decision.instruction, ctx)
            result = self._judge(session, result)
            step.instruction_used = decision.instruction
            step.message = result.message
            step.artifacts.extend(result.artifacts)
            step.produced.extend(result.produced_variables)
            state.last_result = result
            if result.status == STATUS_OK:
                step.status = "ok"
            self._emit(session, events, OrchestratorEvent(
                type="skill_result", step_index=step.index, node=step.node_name,
                text=result.message, artifact_ids=list(result.artifacts),
                status=result.status))
            session.memory.add("skill", result.message, artifacts=list(result.artifacts))

    def _plan(self, session: Session, user_command: str) -> ExecutionPlan:
        cards = "\n".join(card.prompt_text() for card in session.registry.cards())
        catalog = self._catalog(session)
        bridge = session.config.bridge_name if session.config else "(no configuration)"
        system = ARCHITECTURE_SYSTEM.format(bridge_name=bridge, cards=cards, catalog=catalog)
        reply = session.gateway.ask(system, user_command, temperature=PLAN_TEMPERATURE)
        try:
            plan = parse_plan(reply, session.registry.names())
            self._check_dataflow(session, plan)
            return plan
        except UnknownNodeError:
            raise
        except GrammarError as exc:
            retry_reply = session.gateway.ask(
                system,
                f"{user_command}\n\nYour previous reply could not be used ({exc}). "
                f"Reply with exactly one JSON plan document.",
                temperature=PLAN_TEMPERATURE)
            try:
                plan = parse_plan(retry_reply, session.registry.names())
                self._check_dataflow(session, plan)
                return plan
            except GrammarError as exc2:
                raise PlanError(f"two consecutive unparseable plan replies: {exc2}")

    def _check_dataflow(self, session: Session, plan: ExecutionPlan) -> None:
        available = {d.name for d in session.datastore.query()}
        for i, step in enumerate(plan.steps):
            for name in step.expected_inputs:
                if name not in available:
                    raise GrammarError(
                        f"step {i} input {name!r} is neither an uploaded variable "
                        f"nor an output of an earlier step")
            available.update(step.expected_outputs)

    def _allocate(self, session: Session, state: PlanState) -> AllocateDecision:
        last = state.last_result
        if last is not None and state.current is not None:
            step = state.steps[state.current]
            if last.status == STATUS_RESOLVABLE:
                if step.retries < self.max_retries:
                    step.retries += 1
                    instruction = self._phrase_instruction(
                        session, state, step, "retry",
                        f"The previous attempt failed with a resolvable error: {last.message}. "
                        f"Issue a revised command.")
                    return AllocateDecision(action="retry", target_node=step.node_name,
                                            instruction=instruction,
                                            reason=f"resolvable error, retry {step.retries}")
                step.status = "failed"
                return AllocateDecision(
                    action="abort",
                    reason=f"step {step.index} ({step.node_name}) failed after "
                           f"{self.max_retries} retries: {last.message}")
            if last.status == STATUS_FATAL:
                step.status = "failed"
                return AllocateDecision(
                    action="abort",
                    reason=f"step {step.index} ({step.node_name}) hit a fatal error: {last.message}")

        nxt = state.next_pending()
        if nxt is None:
            return AllocateDecision(action="finish", reason="all plan steps completed")
        missing = [n for n in nxt.expected_inputs if not session.datastore.exists(n)]
        if missing:
            nxt.status = "failed"
            state.current = nxt.index
            return AllocateDecision(
                action="abort",
                reason=f"step {nxt.index} ({nxt.node_name}) cannot start: "
                       f"missing input variable(s) {', '.join(missing)}")
        state.current = nxt.index
        state.last_result = None
        instruction = self._phrase_instruction(session, state, nxt, "dispatch", "")
        return AllocateDecision(action="dispatch", target_node=nxt.node_name,
                                instruction=instruction, reason="next pending step")

    def _phrase_instruction(self, session: Session, state: PlanState, step: StepState,
                            action: str, note: str) -> str:
        """Ask the LLM to phrase the subtask command; fall back to the plan's
        own instruction text so allocation itself can never fail."""
        system = ALLOCATE_SYSTEM.format(action=action, node=step.node_name)
        payload = {
            "plan": [{"node": s.node_name, "instruction": s.instruction,
                      "status": s.status} for s in state.steps],
            "step_index": step.index,
            "step_instruction": step.instruction,
            "available_variables": [d.name for d in session.datastore.query()],
        }
        if note:
            payload["note"] = note
        try:
            reply = session.gateway.ask(system, json.dumps(payload, indent=2),
                                        temperature=PLAN_TEMPERATURE)
            decision = parse_decision(reply, session.registry.names())
            if decision.instruction:
                return decision.instruction
        except Exception:
            pass
        fallback = step.instruction
        if note:
            fallback += f" ({note})"
        return fallback

    def _judge(self, session: Session, result: SkillResult) -> SkillResult:
        """A node reporting ok with unresolvable produced variables is
        downgraded to a resolvable error; nodes know best otherwise."""
        if result.status == STATUS_OK:
            missing = [n for n in result.produced_variables
                       if not session.datastore.exists(n)]
            if missing:
                return SkillResult(
                    status=STATUS_RESOLVABLE,
                    message=f"node reported success but variable(s) "
                            f"{', '.join(missing)} were never registered",
                    produced_variables=[], artifacts=result.artifacts,
                    elapsed=result.elapsed)
        return result

    # -- terminal paths -----------------------------------------------------------

    def _catalog(self, session: Session) -> str:
        descs = session.datastore.query()
        if not descs:
            return "(no variables registered)"
        return "\n".join(f"- {d.name} ({d.dtype}, shape {d.shape}): {d.description}"
                         for d in descs)

    def _variable_index(self, session: Session) -> dict[str, str]:
        return {d.name: d.location for d in session.datastore.query()}

    def _step_log(self, steps: list[StepState]) -> list[StepLogEntry]:
        return [StepLogEntry(node=s.node_name, instruction=s.instruction_used or s.instruction,
                             status=s.status, retries=s.retries, message=s.message)
                for s in steps if s.instruction_used or s.status != "pending"]

    def _collect_artifacts(self, steps: list[StepState]) -> list[str]:
        out: list[str] = []
        for step in steps:
            out.extend(step.artifacts)
        return out

    def _narrative(self, session: Session, step_log: list[StepLogEntry],
                   outcome: str, reason: str = "") -> str:
        payload = {
            "outcome": outcome,
            "steps": [{"node": e.node, "instruction": e.instruction, "status": e.status,
                       "retries": e.retries, "result": e.message} for e in step_log],
            "variables": self._variable_index(session),
        }
        if reason:
            payload["abort_reason"] = reason
        try:
            context = "\n".join(f"[{t.role}] {t.content}"
                                for t in session.memory.context_window(8000))
            return session.gateway.ask(
                SUMMARY_SYSTEM,
                context + "\n\nRun record:\n" + json.dumps(payload, indent=2),
                temperature=SUMMARY_TEMPERATURE)
        except Exception:
            return self._template_narrative(session, step_log, outcome, reason)

    def _template_narrative(self, session: Session, step_log: list[StepLogEntry],
                            outcome: str, reason: str) -> str:
        lines = []
        if outcome == "finish":
            lines.append("Task finished successfully.")
        else:
            lines.append(f"Task aborted: {reason}")
        for e in step_log:
            lines.append(f"- {e.node}: {e.status}"
                         + (f" after {e.retries} retr{'y' if e.retries == 1 else 'ies'}" if e.retries else "")
                         + (f". {e.message}" if e.message else ""))
        index = self._variable_index(session)
        if index:
            lines.append("Variables: " + ", ".join(f"{k} ({v})" for k, v in index.items()))
        return "\n".join(lines)

    def _finish(self, session: Session, events: EventBuffer,
                state: PlanState) -> SummaryReport:
        step_log = self._step_log(state.steps)
        artifacts = self._collect_artifacts(state.steps)
        narrative = self._narrative(session, step_log, "finish")
        report = SummaryReport(narrative=narrative, step_log=step_log,
                               artifacts=artifacts,
                               variable_index=self._variable_index(session),
                               outcome="finish")
        session.memory.add("summary", narrative, artifacts=artifacts)
        self._emit(session, events, OrchestratorEvent(
            type="summary", text=narrative, artifact_ids=artifacts, status="finish"))
        return report

    def _abort(self, session: Session, events: EventBuffer,
               steps: list[StepState], reason: str) -> SummaryReport:
        step_log = self._step_log(steps)
        artifacts = self._collect_artifacts(steps)
        narrative = self._narrative(session, step_log, "abort", reason)
        report = SummaryReport(narrative=narrative, step_log=step_log,
                               artifacts=artifacts,
                               variable_index=self._variable_index(session),
                               outcome="abort")
        session.memory.add("summary", narrative, artifacts=artifacts)
        self._emit(session, events, OrchestratorEvent(
            type="error", text=narrative, artifact_ids=artifacts, status="abort"))
        return report


def new_session_id() -> str:
    return uuid.uuid4().hex[:12]
