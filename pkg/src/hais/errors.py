"""Exception hierarchy shared by all pipeline stages."""


class HaisError(Exception):
    """Base class for every error raised by this package."""


class InputError(HaisError, ValueError):
    """Malformed or inconsistent input data (length mismatch, NaN, ...)."""


class ConfigError(HaisError, ValueError):
    """Invalid hyperparameter or configuration value."""


class InvariantViolation(HaisError):
    """An internal structural guarantee (e.g. disjoint instances) was broken."""


class GenerationError(HaisError):
    """Synthetic scene generation could not satisfy its spec."""


class ParseError(HaisError, ValueError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")
