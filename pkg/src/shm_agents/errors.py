"""Error taxonomy shared across the system.

Skill nodes and stores distinguish two failure grades: resolvable errors,
which the allocator may retry with a revised instruction, and fatal errors,
which abort the run. Anything else escaping a node is treated as fatal by
the orchestrator.
"""

from __future__ import annotations


class ShmAgentsError(Exception):
    """Base class for all package errors."""

    resolvable = False


class ResolvableError(ShmAgentsError):
    """The failure can plausibly be fixed by a revised instruction."""

    resolvable = True


class FatalError(ShmAgentsError):
    """The failure cannot be corrected within the current run."""


class RegistrationError(FatalError):
    """Variable descriptor/payload mismatch or invalid descriptor."""


class UnknownVariableError(FatalError):
    """A variable name does not resolve in the session's data store."""


class TransformError(ResolvableError):
    """Requested variable conversion is not reachable deterministically."""


class ConfigError(FatalError):
    """Bridge configuration missing, inconsistent, or unreadable."""


class LlmAuthError(FatalError):
    """Remote LLM endpoint rejected the credentials."""


class LlmUnavailableError(ResolvableError):
    """Remote LLM endpoint kept failing after retries."""


class GrammarError(ShmAgentsError):
    """LLM reply did not contain a parseable structured document."""


class UnknownNodeError(GrammarError):
    """A plan or decision referenced a node missing from the registry."""


class PlanError(FatalError):
    """Planning failed after the re-prompt budget was spent."""
