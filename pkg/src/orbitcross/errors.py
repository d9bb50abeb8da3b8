"""Exception types shared across the package."""


class OrbitCrossError(Exception):
    """Base class for all package-specific errors."""


class DegenerateConfiguration(OrbitCrossError):
    """Two concentric coplanar circles or two overlapping ellipses:
    the squared distance has non-isolated stationary points."""


class TangentOrbits(OrbitCrossError):
    """The tangent vectors at the minimum are parallel; the signed
    distance has no well-defined sign there."""


class TooCloseToCrossing(OrbitCrossError):
    """Plain averaging requested inside the extraction band."""


class DegenerateCrossing(OrbitCrossError):
    """det A_h is too small: the singularity extraction cannot be performed."""


class TangentCrossing(OrbitCrossError):
    """The secular evolution meets the crossing set tangentially;
    the generalized solution is not unique beyond this point."""


class StageNonConvergence(OrbitCrossError):
    """Implicit Runge-Kutta stage iteration failed to converge."""


class CollisionSingularity(OrbitCrossError):
    """Full-model integration got within the collision guard radius."""


class StepUnderflow(OrbitCrossError):
    """Adaptive integrator step size shrank below the hardware limit."""


class NoCrossings(OrbitCrossError):
    """No virtual asteroid reaches the crossing band within the horizon."""
