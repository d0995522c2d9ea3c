"""Exception types raised across the package."""


class TightBoxError(Exception):
    """Base class for all package errors."""


class ParseError(TightBoxError):
    pass


class DegenerateMesh(TightBoxError):
    pass


class EmptyMesh(TightBoxError):
    pass


class EmptyPointSet(TightBoxError):
    pass


class DeletedBox(TightBoxError):
    pass


class InvalidPreSegment(TightBoxError):
    pass


class InvalidSegment(TightBoxError):
    pass


class InapplicableAction(TightBoxError):
    pass


class InfeasibleStart(TightBoxError):
    """Hard refinement requires full coverage at the start."""


class UnvisitedNode(TightBoxError):
    pass


class MismatchedBoxSegment(TightBoxError):
    pass


class EmptySampleSet(TightBoxError):
    pass


class NoLabels(TightBoxError):
    pass


class InvalidSpec(TightBoxError):
    pass


class PresegNotFound(TightBoxError):
    pass
