class OptimizerError(ArithmeticError):
    """Base class for optimizer update failures."""


class DivergentScale(OptimizerError):
    """Element-wise division by a zero second moment."""


class ZeroTrace(OptimizerError):
    """Trace scaling requested for a factor with zero trace."""


class TraceMismatch(OptimizerError):
    """Left and right factor traces drifted apart."""


class NonFiniteUpdate(OptimizerError):
    """A step produced NaN or Inf."""

    def __init__(self, step, message="update has non-finite entries"):
        self.step = step
        super().__init__(f"step {step}: {message}")


class BoundViolation(OptimizerError):
    """An update norm fell outside its norm sandwich."""

    def __init__(self, step, norm, lower, upper):
        self.step = step
        super().__init__(
            f"step {step}: update norm {norm:.6e} outside "
            f"[{lower:.6e}, {upper:.6e}]"
        )
