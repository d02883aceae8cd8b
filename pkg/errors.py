"""Exceptions raised by the transport toolkit.

Every error also derives from ValueError so callers that only guard against
bad input keep working.
"""


class TransportError(ValueError):
    """Base class for all errors of this package."""


class StayTimeError(TransportError):
    """advect() asked to leave the window (-tau_minus, tau_plus)."""

    def __init__(self, violated, t, bound):
        self.violated = violated
        self.t = t
        self.bound = bound
        super().__init__(f"t={t!r} violates stay time {violated}={bound!r}")


class BoundaryPointError(TransportError):
    """Stay times requested on a boundary point."""


class OutsideDomainError(TransportError):
    """Point does not belong to the phase space."""


class NoBackwardExitError(TransportError):
    """Outgoing point whose backward characteristic never leaves the domain."""


class UnsupportedGeometryError(TransportError):
    """Operation not defined for the given geometry or boundary kind."""


class SignedDensityError(TransportError):
    """Nonnegative density required."""


class QuasiInteriorError(TransportError):
    """Boundary weight is not strictly positive where the check runs."""


class ScenarioConfigError(TransportError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class MassBalanceError(TransportError):
    """Exact partial sums and boundary traces disagree on the mass budget."""

    def __init__(self, lhs, rhs, atol):
        self.lhs = lhs
        self.rhs = rhs
        super().__init__(f"mass balance broken: lhs={lhs!r}, rhs={rhs!r} (atol {atol!r})")
