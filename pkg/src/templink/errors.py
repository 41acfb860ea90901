"""Error taxonomy shared across the package."""


class TemplinkError(Exception):
    """Base class for package errors."""


class ShapeError(TemplinkError):
    """Operand shapes do not compose."""

    @classmethod
    def binary(cls, op, a_shape, b_shape):
        return cls(f"{op}: shapes {a_shape} and {b_shape} do not compose")


class ContractError(TemplinkError):
    """A documented precondition was violated."""


class StateError(TemplinkError):
    """Operation invalid in the current object state (e.g. double backward)."""


class ConfigError(TemplinkError):
    """Invalid or contradictory configuration."""


class IngestionError(TemplinkError):
    """Unparseable input data; carries the offending line number."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class DegenerateInputError(TemplinkError):
    """Input admits no valid computation (empty targets, no non-edges, ...)."""


class NoNewEdges(TemplinkError):
    """Skip signal: a target snapshot adds no new edges over its predecessor."""

    def __init__(self, t):
        super().__init__(f"snapshot {t} adds no new edges")
        self.t = t
