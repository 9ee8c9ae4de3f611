"""Exception types raised by the solver library."""


class MadmmError(Exception):
    """Base class for all library errors."""


class InvalidMeshError(MadmmError, ValueError):
    """Degenerate, non-conforming or otherwise unusable triangulation."""


class HierarchyMismatchError(MadmmError, ValueError):
    """Two meshes are not related by one uniform refinement step."""


class InvalidFunctionError(MadmmError, ValueError):
    """A scalar field produced non-finite values at mesh nodes."""


class SingularMatrixError(MadmmError, ArithmeticError):
    """Matrix is singular to working precision."""


class SubproblemFailure(MadmmError, RuntimeError):
    """The u-subproblem could not be solved to the requested accuracy.

    Attributes
    ----------
    diagnostics : dict
        Inner solver history (tolerances tried, achieved error norms).
    record : object or None
        Partial run record attached by the ADMM drivers.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.record = None


class NotConvergedError(MadmmError, RuntimeError):
    """A run expected to reach its tolerance stopped early."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
