from .model import (
    BeamElement,
    CableElement,
    Lane,
    ModelError,
    Node,
    Sensor,
    StructuralModel,
    Support,
    scaled_model,
)
from .core import (
    Assembled,
    LaneGeometry,
    MechanismError,
    StaticCase,
    TransientResult,
    apply_point_load,
    assemble,
    cable_force,
    cable_stress_mpa,
    influence_line,
    lane_udl_case,
    modal_analysis,
    moving_load_history,
    newmark_transient,
    resolve_target,
)

__all__ = [
    "BeamElement", "CableElement", "Lane", "ModelError", "Node", "Sensor",
    "StructuralModel", "Support", "scaled_model",
    "Assembled", "LaneGeometry", "MechanismError", "StaticCase",
    "TransientResult", "apply_point_load", "assemble", "cable_force",
    "cable_stress_mpa", "influence_line", "lane_udl_case", "modal_analysis",
    "moving_load_history", "newmark_transient", "resolve_target",
]
