"""Exception hierarchy shared across the package."""


class HybregError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(HybregError, ValueError):
    pass


class DegenerateAxisError(InvalidArgumentError):
    """Rotation axis with zero norm."""


class DegenerateDirectionError(InvalidArgumentError):
    """Translation direction with zero norm."""


class DegenerateFrameError(InvalidArgumentError):
    """6-D rotation input whose two vectors are parallel or zero."""


class RegistrationFailedError(HybregError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class GenerationFailedError(HybregError, RuntimeError):
    pass


class CloudParseError(HybregError, ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class UnsupportedFormatError(HybregError, ValueError):
    pass
