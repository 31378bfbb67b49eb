"""Skill node contract: instruction in, SkillResult out.

Each node is a small agent: it asks the LLM to turn the allocator's
instruction into arguments for its tool (validated against a JSON schema),
runs the algorithm, and reports ok / resolvable_error / fatal_error. Any
unexpected exception is caught and reported as fatal so a node bug cannot
crash the run loop.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Any, Optional, TYPE_CHECKING

import jsonschema

from ..errors import FatalError, GrammarError, ResolvableError, ShmAgentsError
from ..llm.gateway import LlmGateway
from ..llm.grammar import extract_json
from ..llm.prompts import NODE_ARGS_SYSTEM
from ..state.memory import MemoryStore
from ..state.registry import AlgorithmCard
from ..state.variables import DataStore
from ..types import STATUS_FATAL, STATUS_OK, STATUS_RESOLVABLE, SkillResult
from ..artifacts import ArtifactStore

if TYPE_CHECKING:
    from ..state.configs import BridgeConfig


@dataclass
class SkillContext:
    session_id: str
    datastore: DataStore
    memory: MemoryStore
    gateway: LlmGateway
    artifacts: ArtifactStore
    config: Optional["BridgeConfig"] = None
    default_seed: int = 0
    extras: dict[str, Any] = field(default_factory=dict)


@dataclass
class SkillOutput:
    message: str
    produced: list[str] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)


class SkillNode:
    name: str = ""
    args_schema: dict[str, Any] = {"type": "object"}

    def card(self) -> AlgorithmCard:  # pragma: no cover - overridden
        raise NotImplementedError

    def run(self, args: dict[str, Any], ctx: SkillContext) -> SkillOutput:
        raise NotImplementedError

    # -- shared machinery ----------------------------------------------------

    def extract_args(self, instruction: str, ctx: SkillContext) -> dict[str, Any]:
        system = NODE_ARGS_SYSTEM.format(node=self.name,
                                         schema=json.dumps(self.args_schema, indent=2))
        reply = ctx.gateway.ask(system, instruction)
        try:
            args = extract_json(reply)
        except GrammarError:
            retry = ctx.gateway.ask(
                system,
                instruction + "\n\nYour previous reply was not a valid JSON document. "
                              "Reply with exactly one JSON object.")
            try:
                args = extract_json(retry)
            except GrammarError as exc:
                raise ResolvableError(f"{self.name}: could not parse tool arguments: {exc}")
        try:
            jsonschema.validate(args, self.args_schema)
        except jsonschema.ValidationError as exc:
            raise ResolvableError(f"{self.name}: invalid tool arguments: {exc.message}")
        return args

    def execute(self, instruction: str, ctx: SkillContext) -> SkillResult:
        started = time.perf_counter()
        try:
            args = self.extract_args(instruction, ctx)
            out = self.run(args, ctx)
            status, message = STATUS_OK, out.message
            produced, artifacts = out.produced, out.artifacts
        except ResolvableError as exc:
            status, message, produced, artifacts = STATUS_RESOLVABLE, str(exc), [], []
        except (FatalError, ShmAgentsError) as exc:
            status, message, produced, artifacts = STATUS_FATAL, str(exc), [], []
        except Exception as exc:  # crash shield
            status, produced, artifacts = STATUS_FATAL, [], []
            message = f"{self.name}: unexpected failure: {type(exc).__name__}: {exc}"
        return SkillResult(status=status, message=message,
                           produced_variables=produced, artifacts=artifacts,
                           elapsed=time.perf_counter() - started)


def require_block(ctx: SkillContext, name: str):
    """Fetch a channels x samples numeric variable as a TimeSeriesBlock."""
    import numpy as np

    from ..signals import TimeSeriesBlock

    var = ctx.datastore.fetch(name)
    desc = var.descriptor
    if desc.dtype not in ("f64", "i64"):
        raise ResolvableError(f"variable {name!r} is {desc.dtype}, expected numeric monitoring data")
    arr = np.asarray(var.payload, dtype=float)
    fs = float(ctx.extras.get("fs", 50.0))
    meta = ctx.extras.get("block_meta", {}).get(name)
    if meta:
        fs = meta.get("fs", fs)
        names = meta.get("channel_names")
        start = meta.get("start_time", 0.0)
    else:
        names, start = None, 0.0
    if arr.ndim == 1:
        arr = arr[None, :]
    return TimeSeriesBlock(data=arr, fs=fs, start_time=start,
                           channel_names=list(names) if names else [])


def register_block(ctx: SkillContext, name: str, block, description: str) -> str:
    """Register a TimeSeriesBlock and remember its sampling metadata."""
    from ..state.variables import VariableDescriptor

    final = ctx.datastore.register(
        VariableDescriptor(name=name, description=description, dtype="f64",
                           shape=list(block.data.shape)),
        block.data,
    )
    ctx.extras.setdefault("block_meta", {})[final] = {
        "fs": block.fs,
        "channel_names": list(block.channel_names),
        "start_time": block.start_time,
    }
    return final
