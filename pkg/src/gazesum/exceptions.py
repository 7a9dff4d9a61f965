"""Exception hierarchy shared by every gazesum module."""


class GazesumError(Exception):
    """Base class; the CLI maps subclasses onto exit codes."""


class ConfigError(GazesumError, ValueError):
    pass


class ParseError(GazesumError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class IngestError(GazesumError):
    def __init__(self, message, line_number=None):
        self.line_number = line_number
        where = f" at line {line_number}" if line_number is not None else ""
        super().__init__(f"{message}{where}")


class AlignError(GazesumError):
    pass


class EmptyGazeError(GazesumError):
    pass


class ShapeError(GazesumError, ValueError):
    pass


class UsageError(GazesumError, RuntimeError):
    pass


class NormalizationError(GazesumError, ValueError):
    pass


class DegenerateCorrelation(GazesumError, ArithmeticError):
    pass


class DegenerateTest(GazesumError, ArithmeticError):
    pass
