"""Named error types raised across the package."""


class BoltzmannError(Exception):
    """Base class for all package errors."""


class ParameterError(BoltzmannError, ValueError):
    """A physical or numerical parameter violates its admissible range."""


class GammaOutOfRange(ParameterError):
    pass


class AlphaOutOfRange(ParameterError):
    pass


class BetaOutOfRange(ParameterError):
    pass


class DeltaOutOfRange(ParameterError):
    pass


class B0OutOfRange(ParameterError):
    pass


class EpsilonOutOfRange(ParameterError):
    pass


class DegenerateRay(BoltzmannError, ValueError):
    """Velocity too small to define a characteristic line."""


class OutsideDomain(BoltzmannError, ValueError):
    """A point expected inside the domain lies outside it."""


class CoincidentVelocities(BoltzmannError, ValueError):
    """Kernel evaluated at (numerically) coincident velocities."""


class QuadratureFailure(BoltzmannError, RuntimeError):
    """An adaptive or self-checked quadrature did not reach its tolerance."""


class GridTooCoarse(BoltzmannError, ValueError):
    """A grid failed its built-in accuracy check."""


class NotConverged(BoltzmannError, RuntimeError):
    """Iteration stopped at max_iter without meeting the tolerance."""

    def __init__(self, max_iter, last_residual, report=None):
        super().__init__(f"not converged after {max_iter} iterations "
                         f"(last residual {last_residual:.3e})")
        self.max_iter = max_iter
        self.last_residual = last_residual
        self.report = report


class DivergenceDetected(BoltzmannError, RuntimeError):
    """Successive Picard differences grew for several consecutive steps."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
