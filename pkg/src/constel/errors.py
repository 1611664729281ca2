class ConstelError(Exception):
    pass


class InvalidScenarioError(ConstelError, ValueError):
    """A scenario violates one of its invariants."""


class ScenarioParseError(InvalidScenarioError):
    """A scenario file is malformed; ``field`` names the offending key."""

    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or f"missing or malformed field {field!r}")


class DomainError(ConstelError, ValueError):
    """An operation was called outside its domain (unknown node, infeasible action, ...)."""


class NoRouteError(ConstelError):
    pass


class UpdateAbortedError(ConstelError, FloatingPointError):
    """A PPO update produced a non-finite loss."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
