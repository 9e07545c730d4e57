"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument broke a documented precondition (shape, norm, range)."""


class UnsupportedAction(TypeError):
    """The operation is not defined for the given group action."""


class PreconditionError(ValueError):
    """A formula was evaluated outside the region where it is valid."""


class NonTerminationError(RuntimeError):
    """An iterative algorithm hit its safety cap."""


class CapacityError(RuntimeError):
    """The requested instance is too large for an exhaustive method."""


class MalformedFileError(ValueError):
    """An artifact file could not be parsed."""


class SchemaError(ValueError):
    """A JSON artifact does not match the expected schema."""
