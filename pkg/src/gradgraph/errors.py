"""Exception types shared across the package."""


class GradGraphError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(GradGraphError):
    """A point or region falls outside the admissible domain."""


class ValidityError(GradGraphError):
    """The full background metric failed positive definiteness at a sample."""


class DegeneracyError(GradGraphError):
    """The induced metric on the graph is not positive definite."""


class StencilError(GradGraphError):
    """A finite-difference stencil was requested too close to the boundary."""


class SupportError(GradGraphError):
    """A test function's support reaches into the boundary band."""


class ParameterError(GradGraphError):
    """An argument is outside its admissible range."""


class SteepnessError(GradGraphError):
    """The graph is too steep for the configured Lipschitz cap."""


class EllipticityError(GradGraphError):
    """A coefficient tensor is not Legendre-positive."""


class AssemblyError(GradGraphError):
    """A discrete system could not be assembled or factorized."""


class HypothesisError(GradGraphError):
    """A sampled decay-iteration hypothesis inequality is violated."""


class ConfigError(GradGraphError):
    """A run configuration is malformed."""
