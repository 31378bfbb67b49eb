"""Parsers and canonical renderers for the plan/decision exchange.

The models are instructed to reply with a single JSON document, optionally
inside a markdown fence and surrounded by prose. Parsing therefore scans
for JSON candidates rather than trusting the whole reply. Plans are checked
against the registry: unknown node names are a semantic error, not a
syntactic one, so they do not trigger a blind re-prompt.
"""

from __future__ import annotations

import json
import re
from typing import Iterable, Optional

from ..errors import GrammarError, UnknownNodeError
from ..types import ACTIONS, AllocateDecision, ExecutionPlan, PlanStep

_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def _balanced_objects(text: str) -> Iterable[str]:
    """Yield balanced {...} substrings, longest first from each opening brace."""
    for start, ch in enumerate(text):
        if ch != "{":
            continue
        depth = 0
        in_str = False
        escape = False
        for end in range(start, len(text)):
            c = text[end]
            if in_str:
                if escape:
                    escape = False
                elif c == "\\":
                    escape = True
                elif c == '"':
                    in_str = False
                continue
            if c == '"':
                in_str = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    yield text[start:end + 1]
                    break


def extract_json(text: str) -> dict:
    """Pull the first parseable JSON object out of a reply."""
    candidates: list[str] = []
    for match in _FENCE_RE.finditer(text):
        candidates.append(match.group(1).strip())
    candidates.extend(_balanced_objects(text))
    for cand in candidates:
        try:
            doc = json.loads(cand)
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict):
            return doc
    raise GrammarError("no JSON object found in reply")


def parse_plan(text: str, known_nodes: Optional[Iterable[str]] = None) -> ExecutionPlan:
    doc = extract_json(text)
    if "steps" not in doc or not isinstance(doc["steps"], list) or not doc["steps"]:
        raise GrammarError("plan document needs a non-empty 'steps' list")
    steps: list[PlanStep] = []
    for i, raw in enumerate(doc["steps"]):
        if not isinstance(raw, dict) or "node" not in raw:
            raise GrammarError(f"step {i} must be an object with a 'node' field")
        node = str(raw["node"])
        steps.append(PlanStep(
            node_name=node,
            instruction=str(raw.get("instruction", "")),
            expected_inputs=[str(v) for v in raw.get("inputs", [])],
            expected_outputs=[str(v) for v in raw.get("outputs", [])],
        ))
    if known_nodes is not None:
        known = set(known_nodes)
        for step in steps:
            if step.node_name not in known:
                raise UnknownNodeError(f"plan references unknown node {step.node_name!r}")
    return ExecutionPlan(steps=steps)


def parse_decision(text: str, known_nodes: Optional[Iterable[str]] = None) -> AllocateDecision:
    doc = extract_json(text)
    action = str(doc.get("action", ""))
    if action not in ACTIONS:
        raise GrammarError(f"decision action must be one of {ACTIONS}, got {action!r}")
    node = doc.get("node")
    if action in ("dispatch", "retry"):
        if not node:
            raise GrammarError(f"{action} decision needs a 'node' field")
        if known_nodes is not None and node not in set(known_nodes):
            raise UnknownNodeError(f"decision references unknown node {node!r}")
    return AllocateDecision(
        action=action,
        target_node=str(node) if node else None,
        instruction=str(doc.get("instruction", "")),
        reason=str(doc.get("reason", "")),
    )


def render_plan(plan: ExecutionPlan) -> str:
    return "```json\n" + json.dumps(plan.to_json(), indent=2, ensure_ascii=False) + "\n```"


def render_decision(decision: AllocateDecision) -> str:
    return "```json\n" + json.dumps(decision.to_json(), indent=2, ensure_ascii=False) + "\n```"
