"""Exception types raised by compactglue."""


class CompactGlueError(Exception):
    """Base class for all errors raised by this package."""


class ShapeTooLarge(CompactGlueError):
    pass


class UnsupportedDimension(CompactGlueError):
    pass


class OutsideDomain(CompactGlueError):
    pass


class InvalidCollars(CompactGlueError):
    pass


class BundleMismatch(CompactGlueError):
    pass


class UnsupportedOperator(CompactGlueError):
    pass


class DomainMismatch(CompactGlueError):
    pass


class UnsupportedOrder(CompactGlueError):
    pass


class IndicatorTooSharp(CompactGlueError):
    pass


class DegenerateBasis(CompactGlueError):
    pass


class EmptyCollar(CompactGlueError):
    pass


class InsufficientDecayData(CompactGlueError):
    pass


class MissingData(CompactGlueError):
    pass


class FamilyDegenerate(CompactGlueError):
    pass


class NoConvergence(CompactGlueError):
    """CG hit its iteration cap; the partial report travels with the error."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class IncompatibleSource(CompactGlueError):
    """The source pairs nontrivially with the kernel of the adjoint."""

    def __init__(self, message, pairings=None):
        super().__init__(message)
        self.pairings = pairings
