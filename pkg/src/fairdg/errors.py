"""Exception types raised across the package."""


class FairDGError(Exception):
    """Base class for all package errors."""


class EmptyGroup(FairDGError, ValueError):
    """One of the two sensitive groups has no members."""


class DegenerateGroup(FairDGError, ValueError):
    """Group proportion p1 lies outside the open interval (0, 1)."""


class TooSmall(FairDGError, ValueError):
    pass


class FormatError(FairDGError, ValueError):
    """Malformed row or header in an on-disk dataset."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class DimensionMismatch(FairDGError, ValueError):
    pass


class LengthMismatch(FairDGError, ValueError):
    pass


class EmptySources(FairDGError, ValueError):
    pass


class InvalidSpec(FairDGError, ValueError):
    pass


class NonFiniteLoss(FairDGError, ArithmeticError):
    """A training loss became NaN or infinite."""

    def __init__(self, iteration, name="loss"):
        self.iteration = iteration
        super().__init__(f"non-finite {name} at iteration {iteration}")


class CheckpointError(FairDGError, ValueError):
    """Checkpoint version or shape does not match what the loader expects."""


class ConfigError(FairDGError, ValueError):
    pass


class MissingInput(FairDGError, FileNotFoundError):
    pass
