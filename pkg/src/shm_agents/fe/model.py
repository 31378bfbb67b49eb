"""Planar beam + cable bridge model.

Geometry lives in the x-y plane with three dofs per node (ux, uy, rz).
Beam elements are 2-node Euler-Bernoulli members with axial stiffness and
consistent mass; cables are linear truss members carrying an initial
tension, massless for dynamics. Lanes are ordered node paths (monotone in
x) that moving loads travel along; sensors name response dofs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from ..errors import FatalError

DOF_NAMES = ("ux", "uy", "rz")


class ModelError(FatalError):
    pass


@dataclass
class Node:
    id: int
    x: float
    y: float


@dataclass
class BeamElement:
    node_i: int
    node_j: int
    E: float       # Pa
    I: float       # m^4
    A: float       # m^2
    rho: float     # kg/m^3


@dataclass
class CableElement:
    node_i: int
    node_j: int
    EA: float                # N
    area: float              # m^2
    initial_tension: float   # N


@dataclass
class Support:
    node: int
    fixed: list[str]         # subset of ("ux", "uy", "rz")


@dataclass
class Lane:
    name: str
    nodes: list[int]


@dataclass
class Sensor:
    name: str
    node: int
    dof: str = "uy"


@dataclass
class StructuralModel:
    nodes: list[Node]
    beam_elements: list[BeamElement] = field(default_factory=list)
    cable_elements: list[CableElement] = field(default_factory=list)
    supports: list[Support] = field(default_factory=list)
    lanes: list[Lane] = field(default_factory=list)
    sensors: list[Sensor] = field(default_factory=list)
    damping_alpha: float = 0.0
    damping_beta: float = 0.0

    def __post_init__(self) -> None:
        self._node_index = {n.id: i for i, n in enumerate(self.nodes)}
        if len(self._node_index) != len(self.nodes):
            raise ModelError("duplicate node ids")
        self.validate()

    # -- invariants --------------------------------------------------------

    def validate(self) -> None:
        for el in self.beam_elements + self.cable_elements:
            for nid in (el.node_i, el.node_j):
                if nid not in self._node_index:
                    raise ModelError(f"element references missing node {nid}")
            if el.node_i == el.node_j:
                raise ModelError("element endpoints must differ")
        for sup in self.supports:
            if sup.node not in self._node_index:
                raise ModelError(f"support references missing node {sup.node}")
            for dof in sup.fixed:
                if dof not in DOF_NAMES:
                    raise ModelError(f"unknown dof {dof!r}")
        for lane in self.lanes:
            xs = [self.node(nid).x for nid in lane.nodes]
            if len(xs) < 2:
                raise ModelError(f"lane {lane.name!r} needs at least two nodes")
            if any(nid not in self._node_index for nid in lane.nodes):
                raise ModelError(f"lane {lane.name!r} references missing nodes")
            if not all(a < b for a, b in zip(xs, xs[1:])):
                raise ModelError(f"lane {lane.name!r} path must be monotone increasing in x")
        for sensor in self.sensors:
            if sensor.node not in self._node_index:
                raise ModelError(f"sensor {sensor.name!r} references missing node {sensor.node}")
            if sensor.dof not in DOF_NAMES:
                raise ModelError(f"sensor {sensor.name!r} has unknown dof {sensor.dof!r}")

    # -- lookup ------------------------------------------------------------

    def node(self, nid: int) -> Node:
        return self.nodes[self._node_index[nid]]

    def node_order(self, nid: int) -> int:
        return self._node_index[nid]

    @property
    def n_dofs(self) -> int:
        return 3 * len(self.nodes)

    def dof_index(self, nid: int, dof: str) -> int:
        return 3 * self._node_index[nid] + DOF_NAMES.index(dof)

    def fixed_dofs(self) -> list[int]:
        out = set()
        for sup in self.supports:
            for dof in sup.fixed:
                out.add(self.dof_index(sup.node, dof))
        return sorted(out)

    def free_dofs(self) -> list[int]:
        fixed = set(self.fixed_dofs())
        return [i for i in range(self.n_dofs) if i not in fixed]

    def lane(self, name: str) -> Lane:
        for lane in self.lanes:
            if lane.name == name:
                return lane
        raise ModelError(f"no lane named {name!r}")

    def sensor(self, name: str) -> Sensor:
        for sensor in self.sensors:
            if sensor.name == name:
                return sensor
        raise ModelError(f"no sensor named {name!r}")

    def beam_length(self, el: BeamElement) -> float:
        ni, nj = self.node(el.node_i), self.node(el.node_j)
        return float(((nj.x - ni.x) ** 2 + (nj.y - ni.y) ** 2) ** 0.5)

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "nodes": [{"id": n.id, "x": n.x, "y": n.y} for n in self.nodes],
            "beam_elements": [
                {"node_i": e.node_i, "node_j": e.node_j, "E": e.E, "I": e.I,
                 "A": e.A, "rho": e.rho}
                for e in self.beam_elements
            ],
            "cable_elements": [
                {"node_i": e.node_i, "node_j": e.node_j, "EA": e.EA,
                 "area": e.area, "initial_tension": e.initial_tension}
                for e in self.cable_elements
            ],
            "supports": [{"node": s.node, "fixed": list(s.fixed)} for s in self.supports],
            "lanes": [{"name": l.name, "nodes": list(l.nodes)} for l in self.lanes],
            "sensors": [{"name": s.name, "node": s.node, "dof": s.dof} for s in self.sensors],
            "damping": {"alpha": self.damping_alpha, "beta": self.damping_beta},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "StructuralModel":
        damping = doc.get("damping", {})
        return cls(
            nodes=[Node(int(n["id"]), float(n["x"]), float(n["y"])) for n in doc["nodes"]],
            beam_elements=[
                BeamElement(int(e["node_i"]), int(e["node_j"]), float(e["E"]),
                            float(e["I"]), float(e["A"]), float(e["rho"]))
                for e in doc.get("beam_elements", [])
            ],
            cable_elements=[
                CableElement(int(e["node_i"]), int(e["node_j"]), float(e["EA"]),
                             float(e["area"]), float(e["initial_tension"]))
                for e in doc.get("cable_elements", [])
            ],
            supports=[Support(int(s["node"]), [str(d) for d in s["fixed"]])
                      for s in doc.get("supports", [])],
            lanes=[Lane(str(l["name"]), [int(n) for n in l["nodes"]])
                   for l in doc.get("lanes", [])],
            sensors=[Sensor(str(s["name"]), int(s["node"]), str(s.get("dof", "uy")))
                     for s in doc.get("sensors", [])],
            damping_alpha=float(damping.get("alpha", 0.0)),
            damping_beta=float(damping.get("beta", 0.0)),
        )

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "StructuralModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def scaled_model(model: StructuralModel, *, e_scale: float = 1.0,
                 cable_area_scale: float = 1.0) -> StructuralModel:
    """Copy of the model with Young's moduli and/or cable areas scaled.

    Cable EA scales with area; initial tension is a force and stays put.
    """
    return StructuralModel(
        nodes=[Node(n.id, n.x, n.y) for n in model.nodes],
        beam_elements=[
            BeamElement(e.node_i, e.node_j, e.E * e_scale, e.I, e.A, e.rho)
            for e in model.beam_elements
        ],
        cable_elements=[
            CableElement(e.node_i, e.node_j, e.EA * e_scale * cable_area_scale,
                         e.area * cable_area_scale, e.initial_tension)
            for e in model.cable_elements
        ],
        supports=[Support(s.node, list(s.fixed)) for s in model.supports],
        lanes=[Lane(l.name, list(l.nodes)) for l in model.lanes],
        sensors=[Sensor(s.name, s.node, s.dof) for s in model.sensors],
        damping_alpha=model.damping_alpha,
        damping_beta=model.damping_beta,
    )
