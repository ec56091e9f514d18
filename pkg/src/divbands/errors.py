"""Exception hierarchy shared by all solver modules."""


class DivBandsError(Exception):
    """Base class for errors raised by this package."""


class DomainError(DivBandsError, ValueError):
    """An argument lies outside the domain of the operation."""


class InvariantError(DivBandsError, ValueError):
    """A domain object violates one of its construction invariants."""


class InfiniteMeanError(DivBandsError, ValueError):
    """The claim distribution has no finite mean."""


class PoleError(DivBandsError, ValueError):
    """A transform was evaluated at one of its poles."""


class MultiplicityError(DivBandsError, ArithmeticError):
    """The Lundberg polynomial has (numerically) repeated roots."""


class ConvergenceError(DivBandsError, ArithmeticError):
    """An iterative method failed to reach its tolerance."""


class InversionError(ConvergenceError):
    """Numerical Laplace inversion did not converge."""


class IntegrationError(ConvergenceError):
    """Adaptive quadrature did not converge."""


class NumericalInstabilityError(DivBandsError, ArithmeticError):
    """A result that must be real came out with a significant imaginary part."""


class NoSolutionError(DivBandsError):
    """No seed of the stationarity system converged to an admissible point."""


class NonDifferentiableError(DomainError):
    """The value is not differentiable in the levels at this point (a level equals u)."""
