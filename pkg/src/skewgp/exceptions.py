"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes (validation -> 2, numerical -> 3), so
library code should raise the most specific class that applies.
"""


class SkewGpError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SkewGpError, ValueError):
    """Inputs violate a documented contract (shape, domain, finiteness)."""


class NumericalError(SkewGpError, ArithmeticError):
    """A numerical routine failed beyond its safeguards."""


class FactorizationError(NumericalError):
    """Cholesky factorization failed even after the jitter policy.

    ``minor`` is the 1-based order of the leading minor that is not
    positive definite, as reported by LAPACK.
    """

    def __init__(self, minor, jitter=0.0, message=None):
        self.minor = int(minor)
        self.jitter = float(jitter)
        if message is None:
            message = (
                f"matrix is not positive definite: leading minor of order "
                f"{self.minor} failed (max jitter tried: {self.jitter:.3e})"
            )
        super().__init__(message)


class InfeasibleStartError(ValidationError):
    """A sampler was started outside its feasible region.

    ``violated`` lists the indices of the violated constraints.
    """

    def __init__(self, violated, message=None):
        self.violated = list(int(i) for i in violated)
        if message is None:
            message = f"initial point violates constraints {self.violated}"
        super().__init__(message)


class InternalConsistencyError(NumericalError):
    """An internal invariant that should hold by construction was violated."""


class DimensionGuardError(ValidationError):
    """A problem exceeds the size guard of an exact computation path."""


class InitializationError(SkewGpError):
    """Optimizer initialization failed to produce a finite objective."""
