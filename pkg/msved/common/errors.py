class MsvedError(Exception):
    """Base class for every error raised by the package."""


class ContractError(MsvedError, ValueError):
    """A caller violated an operation's precondition."""


class DimensionError(MsvedError, ValueError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class NumericError(MsvedError, ArithmeticError):
    """Non-finite values detected in checked mode."""


class SchemaError(MsvedError):
    pass


class DataError(MsvedError):
    pass


class ParseError(MsvedError):
    def __init__(self, message: str, path=None, line_number: int | None = None):
        self.path = path
        self.line_number = line_number
        location = ""
        if path is not None:
            location = f"{path}:"
        if line_number is not None:
            location += f"{line_number}:"
        super().__init__(f"{location} {message}".strip())


class ConfigurationError(MsvedError, ValueError):
    pass
