"""Exception and warning types raised across the package."""


class CausalMaskError(Exception):
    """Base class for every error raised by this package."""


class WorldError(CausalMaskError, ValueError):
    """A world model or policy violates one of its invariants."""


class NegativeProbability(WorldError):
    pass


class NotNormalized(WorldError):
    pass


class RewardOutOfRange(WorldError):
    pass


class BadRho(WorldError):
    pass


class EmptyStratum(WorldError):
    pass


class DimensionMismatch(WorldError):
    pass


class InvalidPolicy(WorldError):
    pass


class MalformedProgram(CausalMaskError, ValueError):
    pass


class DegenerateNormalization(CausalMaskError, ArithmeticError):
    """Exploit and fair(0) welfare coincide, so normalized performance is undefined."""


class SameStratum(CausalMaskError, ValueError):
    pass


class RhoTooLarge(CausalMaskError, ValueError):
    """The small participation-rate premise of the gap bound does not hold."""


class DomainError(CausalMaskError, ValueError):
    pass


class NoUsableStrata(CausalMaskError, ValueError):
    """No stratum has observations in both protected groups."""


class IngestError(CausalMaskError, ValueError):
    pass


class MissingColumn(IngestError):
    pass


class NonBinaryProtected(IngestError):
    pass


class EmptyTable(IngestError):
    pass


class DegenerateCovariate(UserWarning):
    """A covariate had fewer distinct values than requested bins and was collapsed."""


class EmptyCellWarning(UserWarning):
    """An (x, p) cell had no rows; its reward fell back to 0.5."""
