"""Exception types raised by the solver pipeline."""


class StCutFemError(Exception):
    """Base class for all package errors."""


class DegenerateLevelSetError(StCutFemError):
    """The discrete level set vanishes identically on an element or cannot be cut cleanly."""


class GeometryError(StCutFemError):
    """Mapping or lifting construction failed (root solve, orientation, band coverage)."""


class EmptyDomainError(StCutFemError):
    """The physical domain does not intersect a slab."""


class SingularSystemError(StCutFemError):
    """A slab system is singular or numerically close to singular."""
