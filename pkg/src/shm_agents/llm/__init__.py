from .gateway import (
    ChatRequest,
    LlmGateway,
    RemoteBackend,
    ScriptedBackend,
    ScriptExhaustedError,
    ScriptMismatchError,
    make_request,
    PLAN_TEMPERATURE,
    SUMMARY_TEMPERATURE,
    DEFAULT_KEY_ENV,
)
from .grammar import (
    extract_json,
    parse_decision,
    parse_plan,
    render_decision,
    render_plan,
)

__all__ = [
    "ChatRequest", "LlmGateway", "RemoteBackend", "ScriptedBackend",
    "ScriptExhaustedError", "ScriptMismatchError", "make_request",
    "PLAN_TEMPERATURE", "SUMMARY_TEMPERATURE", "DEFAULT_KEY_ENV",
    "extract_json", "parse_decision", "parse_plan",
    "render_decision", "render_plan",
]
