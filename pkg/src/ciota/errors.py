class CiotaError(Exception):
    pass


class InvalidParameter(CiotaError, ValueError):
    pass


class InvalidInput(CiotaError, ValueError):
    pass


class DecodeError(CiotaError, ValueError):
    """Raised on malformed binary input; ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class TraceParseError(CiotaError, ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UndefinedMetric(CiotaError, ValueError):
    pass
