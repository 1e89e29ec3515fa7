"""
Rod Structure Errors

Exception hierarchy shared by the geometry, discretization and solver layers.
"""


class RodError(Exception):
    """Base class for all failures raised by the rods package."""


class ParseError(RodError, ValueError):
    """Input document is malformed or references unknown ids."""


class InvalidMaterial(RodError, ValueError):
    """Lamé coefficients must both be strictly positive."""


class NonUnitSpeedUnfixable(RodError):
    """Arclength reparametrization did not converge."""


class FrameUndefined(RodError):
    """Curvature vanishes somewhere and no frame override was supplied."""


class OutOfRange(RodError, ValueError):
    """Abscissa or cross-section offset outside the admissible domain."""


class DeltaTooLarge(RodError, ValueError):
    """Requested thickness exceeds the injectivity bound delta0."""


class NotClamped(RodError):
    """Operation needs a nonempty clamped set."""


class SolverFailure(RodError):
    """A direct solve produced a residual above tolerance."""


class OrthogonalityNotEnforced(RodError):
    """Extensional right-hand side requested before the load case was checked or projected."""


class OrthogonalityViolated(RodError):
    """Extensional loads act on inextensional displacements beyond tolerance."""


class SingularInconsistent(RodError):
    """Right-hand side has a component along the kernel of a singular operator."""


class NoConvergence(RodError):
    """Iterative solve stopped before reaching the residual target."""


class SaddleSingular(RodError):
    """Constrained system is singular; usually a component without clamps."""


class GridTooCoarse(RodError, ValueError):
    """Tube sampling has too few nodes for the requested derivatives."""


class RankDeficient(RodError):
    """Least-squares rigid or elementary fit has a degenerate normal matrix."""


class OverlappingJunctions(RodError):
    """Blend zones of two knots intersect on one arc."""


class KnotNotMeshNode(RodError, ValueError):
    """Knot abscissa is not a vertex of the arc mesh."""
