"""Exception types shared across the toolkit."""


class NclError(Exception):
    """Base class for all toolkit errors."""


class NclSyntaxError(NclError):
    """Raised by the parser; carries a 1-based source position."""

    def __init__(self, message, line, col):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class GroundingError(NclError):
    """A quantifier, guard, or atom could not be expanded over its domain."""


class ResourceLimitError(NclError):
    """A configured size cap (ground atoms, assignment space, expansion) was hit."""


class UnsupportedConstraintError(NclError):
    """The requested lowering cannot express this constraint (see capability matrix)."""


class InfeasibleError(NclError):
    """A solver proved there is no feasible assignment."""


class GradCheckError(NclError):
    """Gradient check produced NaN or could not be evaluated."""
