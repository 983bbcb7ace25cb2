"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes; message names both shapes."""


class InvalidParameterError(ValueError):
    """A numeric parameter is outside its allowed range."""


class ConfigurationError(ValueError):
    """A configuration is internally inconsistent or violates a contract."""


class DataError(ValueError):
    """Input data violates the schema or an invariant."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; message carries epoch, batch and learning rate."""
