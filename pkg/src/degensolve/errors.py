"""Exception hierarchy shared by all modules."""


class DegensolveError(Exception):
    """Base class for every error raised by the package."""


class ShapeMismatch(DegensolveError, ValueError):
    pass


class TensorValidationError(DegensolveError, ValueError):
    """Raised when a coefficient tensor is asymmetric or not positive semidefinite."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class NotCertified(DegensolveError):
    """The range of the tensor was not certified to be spanned by rank-one matrices."""


class EmptyInterior(DegensolveError, ValueError):
    pass


class GridMismatch(DegensolveError, ValueError):
    pass


class DimensionMismatch(DegensolveError, ValueError):
    pass


class CompatibilityViolation(DegensolveError):
    """The right-hand side has a component outside the admissible subspace."""

    def __init__(self, message, defect, node, point, component):
        super().__init__(message)
        self.defect = defect
        self.node = node
        self.point = point
        self.component = component


class NonConvergence(DegensolveError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class EstimateBlowup(DegensolveError):
    pass


class TestMapNotInSigma(DegensolveError, ValueError):
    __test__ = False  # keep pytest from collecting this as a test class


class DegeneratePencil(DegensolveError):
    pass


class BandEmpty(DegensolveError, ValueError):
    pass


class WrongDomain(DegensolveError, ValueError):
    pass


class SigmaFull(DegensolveError):
    pass
