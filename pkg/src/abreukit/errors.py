"""Exception hierarchy for abreukit."""


class AbreuKitError(Exception):
    """Base class for all errors raised by the toolkit."""


class GeometryError(AbreuKitError, ValueError):
    pass


class NonConvex(GeometryError):
    pass


class DegenerateEdge(GeometryError):
    pass


class NonPositiveWeight(GeometryError):
    pass


class IrrationalNormal(GeometryError):
    pass


class OutsidePolygon(GeometryError):
    pass


class ZeroHinge(AbreuKitError, ValueError):
    """The positive part of the affine function vanishes on the polygon."""


class NotStable(AbreuKitError):
    pass


class NotPositiveDefinite(AbreuKitError, ArithmeticError):
    """A Hessian lost positive definiteness at some node."""


class FutakiGateError(AbreuKitError):
    """Boundary and interior measures have mismatched moments."""


class InfeasibleStart(AbreuKitError):
    pass


class OutsideDomain(AbreuKitError, ValueError):
    pass


class OriginSingular(AbreuKitError, ValueError):
    pass


class NewtonDiverged(AbreuKitError, ArithmeticError):
    pass


class ProbeOutside(AbreuKitError, ValueError):
    pass


class EmptyX(AbreuKitError, ValueError):
    pass


class PathOutside(AbreuKitError, ValueError):
    pass


class ParseError(AbreuKitError, ValueError):
    pass


class ValidationError(AbreuKitError, ValueError):
    pass
