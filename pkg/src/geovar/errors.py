"""Exception hierarchy for the geovar toolkit."""


class GeovarError(Exception):
    """Base class for all toolkit errors."""


class OutOfDomain(GeovarError):
    """A point lies outside the chart domain (or too close to its boundary)."""


class DegenerateAtPoint(GeovarError):
    """The metric has a near-zero eigenvalue at an evaluation point."""


class ProjectorNotIdempotent(GeovarError):
    """A distribution projector fails P @ P = P within tolerance."""


class ZeroVector(GeovarError):
    """A vector argument that must be nonzero is (numerically) zero."""


class DomainExit(GeovarError):
    """A trajectory left the chart before finishing the requested task.

    ``t_exit`` holds the exit time when known.
    """

    def __init__(self, message, t_exit=None):
        super().__init__(message)
        self.t_exit = t_exit


class StepFailure(GeovarError):
    """The ODE integrator failed to advance."""


class NotPeriodic(GeovarError):
    """An operation requiring a periodic geodesic received a non-periodic one."""


class NotCritical(GeovarError):
    """The path is not a critical point of the energy within tolerance."""


class DegenerateGec(GeovarError):
    """The product metric degenerates on the endpoints condition."""


class DegenerateRestriction(GeovarError):
    """The restriction of the product metric to the GEC is degenerate at a point."""


class ConstraintViolated(GeovarError):
    """A variation field violates the linearized endpoints constraint."""


class NewtonDiverged(GeovarError):
    """The shooting Newton iteration failed to converge."""


class RefinementDiverged(GeovarError):
    """Kernel-vector refinement did not reproduce a Jacobi solution."""


class NoValidInterval(GeovarError):
    """No perturbation interval with positive non-parallelism margin exists."""


class StronglyDegenerateSuspected(GeovarError):
    """All iterate-sum fields vanish; the geodesic looks strongly degenerate."""


class TubeTooWide(GeovarError):
    """The requested bump tube overlaps other passes of the geodesic."""


class SignatureBroken(GeovarError):
    """A perturbed metric no longer has the prescribed signature."""


class NonPositiveFactor(GeovarError):
    """A conformal factor fails to be positive on the domain."""


class ConfigError(GeovarError):
    """A problem configuration failed validation."""
