"""Exception hierarchy shared by every module.

Each class carries the process exit code the command-line front end uses
when the error escapes a command.
"""


class BaceRulError(Exception):
    exit_code = 1


class ConfigError(BaceRulError, ValueError):
    exit_code = 1


class UsageError(BaceRulError, ValueError):
    exit_code = 1


class ShapeError(BaceRulError, ValueError):
    exit_code = 2


class DataError(BaceRulError, ValueError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class CheckpointError(BaceRulError):
    exit_code = 2


class NumericError(BaceRulError, ArithmeticError):
    exit_code = 3
