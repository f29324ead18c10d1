"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Invalid or out-of-range configuration value."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class InsufficientDataError(ValueError):
    """Not enough samples to fit or estimate."""


class ParseError(ValueError):
    """Malformed input file; message carries the offending line number."""


class SchemaError(ValueError):
    """CSV/report columns do not match the expected schema."""


class LogicError(RuntimeError):
    """Internal state machine misuse (caller bug, not data)."""


class TrainingDiverged(RuntimeError):
    """Non-finite loss during policy training."""
