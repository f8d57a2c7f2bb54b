class ContractViolation(ValueError):
    """A caller broke an operation's precondition."""


class OutOfRangeError(ContractViolation):
    pass


class GenerationError(RuntimeError):
    pass


class EncodingError(ValueError):
    pass


class ParseError(ValueError):
    pass


class BadMagic(ParseError):
    def __init__(self, got: bytes):
        super().__init__(f"bad magic: {got!r}")


class BadVersion(ParseError):
    def __init__(self, got: int):
        super().__init__(f"bad version: {got}")


class Truncated(ParseError):
    def __init__(self, need: int, have: int):
        super().__init__(f"truncated: need {need} bytes, have {have}")


class ConfigError(ValueError):
    """Malformed experiment config; the message names the offending field or line."""
