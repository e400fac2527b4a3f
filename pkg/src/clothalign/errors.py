"""Exception types raised across the package."""


class ClothAlignError(Exception):
    """Base class for all package errors."""


class DegenerateSubset(ClothAlignError, ValueError):
    """A rigid fit was requested on too few points."""


class ZeroExtent(ClothAlignError, ValueError):
    pass


class MismatchedContext(ClothAlignError, ValueError):
    """Two reward breakdowns were computed against different goals/scales."""


class DimensionMismatch(ClothAlignError, ValueError):
    pass


class InvalidParams(ClothAlignError, ValueError):
    pass


class WrongCategory(ClothAlignError, ValueError):
    pass


class NumericalBlowup(ClothAlignError, RuntimeError):
    """Simulation diverged; retry with a smaller time step."""


class InsufficientMeshes(ClothAlignError, ValueError):
    pass


class InvalidPixel(ClothAlignError, ValueError):
    pass


class AllInvalid(ClothAlignError, ValueError):
    """No valid pixel remains after masking."""


class NoValidAction(ClothAlignError, RuntimeError):
    pass


class HashMismatch(ClothAlignError, ValueError):
    """A serialized file failed its content-hash check."""
