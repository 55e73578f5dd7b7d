"""Exception types raised by the solver library."""


class SurfaceDGError(Exception):
    """Base class for all library errors."""


class OutOfTube(SurfaceDGError):
    """A point lies outside the region where the distance function is valid."""


class NoConvergence(SurfaceDGError):
    """An iterative procedure did not reach its tolerance.

    ``residual`` holds the last residual that was measured, when known.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateJacobian(SurfaceDGError):
    """An element map has a (numerically) singular metric."""


class SingularMass(SurfaceDGError):
    """A local mass matrix could not be factorised."""


class IllConditionedLift(SurfaceDGError):
    """The tangent-plane map used to lift gradients onto the surface is ill conditioned."""


class DegenerateInput(SurfaceDGError, ValueError):
    """Input data that cannot produce a meaningful result (e.g. negative errors)."""
