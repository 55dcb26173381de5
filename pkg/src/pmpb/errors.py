"""Exception types shared across the solver."""


class PmpbError(Exception):
    """Base class for all package errors."""


class InputError(PmpbError):
    """Malformed or inconsistent input files / configuration."""


class GeometryError(PmpbError):
    """Interface geometry cannot support the requested discretization."""


class SingularEvaluation(PmpbError):
    """Field evaluation requested at (or too close to) a source point."""


class ConvergenceError(PmpbError):
    """An iterative stage (linear solve or SCF) failed to converge."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
