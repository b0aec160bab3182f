"""Exception types raised across the package."""


class DietError(Exception):
    """Base class for all errors raised by dietcl."""


class ShapeError(DietError, ValueError):
    pass


class InputError(DietError, ValueError):
    pass


class ContractError(DietError, RuntimeError):
    """A call was made in a state its contract does not allow."""


class ProtocolError(DietError, RuntimeError):
    """Violation of the class-incremental protocol (e.g. overlapping classes)."""


class TrainingError(DietError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class RefusalError(DietError, ValueError):
    """Instance too large for exhaustive enumeration."""


class ParseError(DietError, ValueError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.path = path


class SchemaError(ParseError):
    pass


class ConfigError(ParseError):
    """A configuration value failed validation; ``key`` names the offending entry."""

    def __init__(self, key, message, line=None, path=None):
        super().__init__(f"{key}: {message}", line=line, path=path)
        self.key = key
        self.reason = message
