"""Exception and warning types raised across the package."""


class FSCError(Exception):
    """Base class for all package errors."""


class DomainError(FSCError, ValueError):
    pass


class DimensionError(FSCError, ValueError):
    pass


class NotPositiveDefinite(FSCError, ArithmeticError):
    def __init__(self, pivot_index, pivot_value=None, message=None):
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value
        if message is None:
            message = f"matrix is not positive definite (pivot {pivot_index}"
            if pivot_value is not None:
                message += f" = {pivot_value:.3g}"
            message += ")"
        super().__init__(message)


class NoBracket(FSCError, ValueError):
    def __init__(self, lo, hi, f_lo, f_hi):
        self.lo, self.hi, self.f_lo, self.f_hi = lo, hi, f_lo, f_hi
        super().__init__(
            f"f has no sign change on [{lo}, {hi}] (f(lo)={f_lo:.4g}, f(hi)={f_hi:.4g})"
        )


class NoConvergence(FSCError, ArithmeticError):
    pass


class Unsupported(FSCError, ValueError):
    pass


class DegenerateComponent(FSCError, ArithmeticError):
    def __init__(self, component, mass=None):
        self.component = component
        self.mass = mass
        msg = f"component {component + 1} is degenerate"
        if mass is not None:
            msg += f" (weighted mass {mass:.3g})"
        super().__init__(msg)


class TooFewPoints(FSCError, ValueError):
    pass


class FitFailed(FSCError, ArithmeticError):
    """Every restart of a fit ended in a numerical failure."""

    def __init__(self, causes):
        self.causes = list(causes)
        detail = "; ".join(
            f"restart {i}: {type(c).__name__}: {c}" for i, c in enumerate(self.causes)
        )
        super().__init__(f"all restarts failed ({detail})")


class NuAtBoundary(UserWarning):
    """Degrees-of-freedom update landed on an end of the search bracket."""


class UnderDeterminedWarning(UserWarning):
    pass


class MissingClassWarning(UserWarning):
    pass
