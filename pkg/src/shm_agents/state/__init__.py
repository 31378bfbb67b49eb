from .variables import (
    DataStore,
    Variable,
    VariableDescriptor,
    dump_shmvar,
    load_shmvar,
    read_shmvar_file,
)
from .registry import AlgorithmCard, AlgorithmRegistry, InputRequirement
from .memory import DEFAULT_CHAR_BUDGET, DialogueTurn, MemoryStore
from .configs import BridgeConfig, ConfigStore, LlmSettings

__all__ = [
    "DataStore", "Variable", "VariableDescriptor", "dump_shmvar", "load_shmvar",
    "read_shmvar_file", "AlgorithmCard", "AlgorithmRegistry", "InputRequirement",
    "DEFAULT_CHAR_BUDGET", "DialogueTurn", "MemoryStore",
    "BridgeConfig", "ConfigStore", "LlmSettings",
]
