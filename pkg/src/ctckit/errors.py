"""Error types shared across the package.

Everything derives from ValueError so callers that do not care about the
distinction can catch one base class.
"""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class ConfigurationError(ValueError):
    """A config value is out of range or inconsistent with another."""


class SizeError(ValueError):
    """A requested computation exceeds its guarded size budget."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or inconsistent with its peers."""
