"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated an operation's preconditions."""


class SceneParseError(ValueError):
    """A scene file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class SceneValidationError(ValueError):
    """A parsed scene breaks one of the scene invariants."""


class NonFiniteLossError(FloatingPointError):
    """A loss term evaluated to NaN or infinity."""

    def __init__(self, term: str):
        self.term = term
        super().__init__(f"non-finite value in loss term '{term}'")


class CheckpointError(ValueError):
    """A checkpoint is unreadable or does not match the requested architecture."""
