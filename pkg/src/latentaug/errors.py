"""Exception hierarchy shared by every module."""


class LatentAugError(Exception):
    """Base class for all package errors."""


class DimensionError(LatentAugError, ValueError):
    """Shapes do not satisfy an operation's contract."""


class DomainError(LatentAugError, ValueError):
    """A value lies outside an operation's mathematical domain."""


class ContractError(LatentAugError, ValueError):
    """A caller violated a precondition that is not about shapes or domains."""


class InsufficientDataError(LatentAugError, ValueError):
    """Too few samples to perform the requested operation."""


class DataError(LatentAugError, ValueError):
    """Dataset content is inconsistent (bad labels, leaked splits, ...)."""


class ParseError(LatentAugError, ValueError):
    """A file could not be parsed; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class VersionError(LatentAugError, ValueError):
    """A file carries an unexpected format-version marker."""
