from .base import SkillContext, SkillNode, SkillOutput
from ..state.registry import AlgorithmRegistry


def build_registry() -> AlgorithmRegistry:
    """Registry with every skill node and its algorithm card."""
    from .anomaly import AnomalyNode
    from .assessment import FatigueNode, ReliabilityNode, ResponseNode
    from .modal import ModalNode
    from .rag import RagNode
    from .toolbox import ToolboxNode
    from .traffic import TrafficNode

    registry = AlgorithmRegistry()
    for node in (AnomalyNode(), ModalNode(), TrafficNode(), ResponseNode(),
                 FatigueNode(), ReliabilityNode(), RagNode(), ToolboxNode()):
        registry.add(node.card(), node)
    return registry


__all__ = ["SkillContext", "SkillNode", "SkillOutput", "build_registry"]
