"""Algorithm registry: one card per skill node.

Cards tell the planner what each node does, what it needs, and what it
returns; the orchestrator also uses the registry to validate plans and to
look up executable node instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from ..errors import ConfigError


@dataclass
class InputRequirement:
    name: str
    semantic_type: str
    shape_constraint: str = ""
    units: str = ""


@dataclass
class AlgorithmCard:
    node_name: str
    function: str
    input_requirements: list[InputRequirement] = field(default_factory=list)
    input_example: str = ""
    output_example: str = ""

    def validate(self) -> None:
        for label, value in (
            ("function", self.function),
            ("input_requirements", self.input_requirements),
            ("input_example", self.input_example),
            ("output_example", self.output_example),
        ):
            if not value:
                raise ConfigError(f"card {self.node_name!r}: {label} must be non-empty")

    def prompt_text(self) -> str:
        reqs = "; ".join(
            f"{r.name} ({r.semantic_type}"
            + (f", {r.shape_constraint}" if r.shape_constraint else "")
            + (f", {r.units}" if r.units else "") + ")"
            for r in self.input_requirements
        )
        return (
            f"- {self.node_name}: {self.function}\n"
            f"  inputs: {reqs or 'none'}\n"
            f"  input example: {self.input_example}\n"
            f"  output example: {self.output_example}"
        )


class AlgorithmRegistry:
    def __init__(self) -> None:
        self._cards: dict[str, AlgorithmCard] = {}
        self._nodes: dict[str, Any] = {}

    def add(self, card: AlgorithmCard, node: Any = None) -> None:
        card.validate()
        if card.node_name in self._cards:
            raise ConfigError(f"duplicate node name {card.node_name!r}")
        self._cards[card.node_name] = card
        if node is not None:
            self._nodes[card.node_name] = node

    def lookup(self, node_name: str) -> AlgorithmCard:
        if node_name not in self._cards:
            raise ConfigError(f"unknown skill node {node_name!r}")
        return self._cards[node_name]

    def node(self, node_name: str) -> Any:
        self.lookup(node_name)
        if node_name not in self._nodes:
            raise ConfigError(f"node {node_name!r} has a card but no executable instance")
        return self._nodes[node_name]

    def names(self) -> list[str]:
        return sorted(self._cards)

    def cards(self) -> list[AlgorithmCard]:
        return [self._cards[n] for n in self.names()]

    def __contains__(self, node_name: str) -> bool:
        return node_name in self._cards
