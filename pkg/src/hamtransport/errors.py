"""Exception hierarchy shared by all modules.

Every error carries an optional ``context`` dict (particle index, time,
offending key, residual value ...) so that the harness can report where a
run stopped without parsing messages.
"""


class HamTransportError(Exception):
    """Base class for every error raised by the package."""

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context

    def __str__(self):
        base = super().__str__()
        if not self.context:
            return base
        extra = ", ".join(f"{k}={v!r}" for k, v in sorted(self.context.items()))
        return f"{base} ({extra})"


class ChartBoundary(HamTransportError):
    """A point came within the chart margin of a non-periodic boundary."""


class NonSPD(HamTransportError):
    """A matrix that must be symmetric positive definite is not."""


class StepTooLarge(HamTransportError):
    """A finite-difference stencil would leave the legal chart region."""


class GridTooCoarse(HamTransportError):
    """A finite-difference time step cannot meet the requested tolerance."""


class StepCount(HamTransportError):
    """Too few steps, or energy drift above the scenario tolerance."""


class NotHomogeneous(HamTransportError):
    """An operation that needs a fibrewise homogeneous Hamiltonian got another kind."""


class SymmetryBreach(HamTransportError):
    """The numerically computed curvature matrix is far from symmetric."""


class UnsupportedKind(HamTransportError):
    """No closed form is available for this Hamiltonian or metric kind."""


class MissingHJState(HamTransportError):
    """A Hamilton-Jacobi weighted measure was used without the u-track."""


class CausticReached(HamTransportError):
    """log det B fell below the caustic threshold."""


class ResidualBreach(HamTransportError):
    """An internal consistency residual exceeded its tolerance."""


class NonPositiveDensity(HamTransportError):
    """A transported density became zero, negative or non-finite."""


class ConstraintViolation(HamTransportError):
    """Scenario parameters do not satisfy the identities a theorem requires."""


class ConfigError(HamTransportError):
    """A scenario configuration is malformed; the message names the key."""
