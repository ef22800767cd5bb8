"""Exception taxonomy shared by all solver modules.

Every error raised by this package derives from :class:`LambridgeError` so
callers (notably the CLI) can map failures to exit codes in one place.
"""


class LambridgeError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(LambridgeError):
    """Position/grid dimensions disagree."""


class SingularityError(LambridgeError):
    """Potential evaluated inside the singularity guard radius."""


class InvalidSpec(LambridgeError):
    """Malformed grid or density specification."""


class MassLeakage(LambridgeError):
    """More than the allowed fraction of analytic density mass lies outside the grid box."""


class NonPositiveField(LambridgeError):
    """Operation requires a strictly positive field."""


class GridMismatch(LambridgeError):
    """Fields or operators defined on different grids were combined."""


class DomainTooNarrow(LambridgeError):
    """Grid box too small for the diffusion length of the requested propagation."""


class NonFiniteKernel(LambridgeError):
    """Kernel construction would overflow/underflow; rescale units (see README)."""


class UnalignedSnapshot(LambridgeError):
    """Requested snapshot time does not sit on a time-substep boundary."""


class DivisionBlowup(LambridgeError):
    """Factor division hit a vanishing denominator where the marginal carries mass."""


class ScheduleTooCoarse(LambridgeError):
    """Too few snapshots for the requested time-domain operation."""


class SingularityCrossing(LambridgeError):
    """Integrated trajectory entered the singularity guard radius."""


class NewtonDivergence(LambridgeError):
    """Shooting iteration failed to converge."""


class ParseError(LambridgeError):
    """Config file could not be parsed."""


class ValidationError(LambridgeError):
    """Config parsed but violates a precondition."""
