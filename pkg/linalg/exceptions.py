class LinalgError(ValueError):
    """Base class for dense linear algebra failures."""


class InvalidMatrix(LinalgError):
    """Input is not a finite square matrix."""


class ZeroNorm(LinalgError):
    """A relative quantity was requested for a zero matrix."""


class SingularFactor(LinalgError):
    """A negative power was requested for a zero eigenvalue."""


class DimError(LinalgError):
    """Operand shapes do not match."""
