class ClickTreeError(Exception):
    pass


class IllegalParameterError(ClickTreeError):
    pass


class UndefinedEstimatorError(ClickTreeError):
    pass


class ProbabilityRangeError(ClickTreeError):
    pass


class EnumerationLimitError(ClickTreeError):
    pass


class StreamFormatError(ClickTreeError):
    def __init__(self, message: str, *, line: int | None = None, record: int | None = None):
        self.line = line
        self.record = record

        location = []
        if line is not None:
            location.append(f"line {line}")
        if record is not None:
            location.append(f"record {record}")

        if location:
            message = f"{message} ({', '.join(location)})"

        super().__init__(message)


class IllegalFieldError(ClickTreeError):
    pass


class IllegalQueryError(ClickTreeError):
    pass
