"""Exception hierarchy shared by every module.

Each class carries the CLI exit code of its failure class so the front end
can map any raised error to a status without a lookup table.
"""


class SGTError(Exception):
    exit_code = 3


class ShapeError(SGTError, ValueError):
    exit_code = 3


class DomainError(SGTError, ValueError):
    exit_code = 4


class ParameterError(SGTError, ValueError):
    exit_code = 2


class LabelError(SGTError, ValueError):
    exit_code = 3


class ContractError(SGTError, RuntimeError):
    exit_code = 4


class DataError(SGTError, ValueError):
    exit_code = 3


class ProvenanceError(SGTError, ValueError):
    exit_code = 3


class NumericError(SGTError, ArithmeticError):
    exit_code = 4


class SpecError(SGTError, ValueError):
    exit_code = 2


class FormatError(SGTError, ValueError):
    """Malformed file; ``offset`` is the byte offset (binary) where parsing failed."""

    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ParseError(SGTError, ValueError):
    """Malformed text input; ``line`` is 1-based."""

    exit_code = 3

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


class ConfigError(ParseError):
    exit_code = 2
