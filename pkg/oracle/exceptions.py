class OracleError(ValueError):
    """Base class for full-matrix oracle failures."""


class SizeGuard(OracleError):
    """An explicit mn×mn matrix would exceed the desk-scale limit."""


class NonPositiveScale(OracleError):
    """A bound needs a strictly positive scaling matrix."""
