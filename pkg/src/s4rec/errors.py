"""Exception hierarchy; the CLI maps each family to an exit code."""


class S4RecError(Exception):
    exit_code = 1


class ConfigError(S4RecError, ValueError):
    exit_code = 2


class DataError(S4RecError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class EmptyInputError(DataError):
    pass


class NumericalError(S4RecError, FloatingPointError):
    exit_code = 4
