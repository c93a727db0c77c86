"""Exception vocabulary for the whole package.

Every failure mode that callers are expected to branch on gets its own
class here.  Numeric routines never return a silently degraded value:
they either meet their tolerance contract or raise.
"""


class RauzylabError(Exception):
    """Base class for all package-specific errors."""


class NonConvergent(RauzylabError):
    """Adaptive quadrature could not reach the requested tolerance."""


class BadGrid(RauzylabError):
    """A grid argument is unordered, too short, or contains non-finite values."""


class InvalidCombinatorics(RauzylabError):
    """A combinatorial pair is malformed or reducible."""


class InvalidFamilyParams(RauzylabError):
    """Constructor parameters do not define a valid map of the family."""


class OutOfDomain(RauzylabError):
    """A point lies outside the half-open interval a map or branch acts on."""


class NoSecondDerivative(RauzylabError):
    """The branch does not carry second-derivative data at the requested point."""


class NotRenormalizable(RauzylabError):
    """The two candidate intervals of a Rauzy step have equal length."""


class HistoryTooShort(RauzylabError):
    """Not enough induction steps recorded to run the requested check."""


class TilingViolation(RauzylabError):
    """Computed intervals fail to tile; usually means precision is exhausted."""


class InconsistentDepths(RauzylabError):
    """Two partitions passed together do not come from consecutive depths."""


class NotRefining(RauzylabError):
    """The finer partition is not a refinement of the coarser one."""


class BadLambda(RauzylabError):
    """A contraction rate outside (0, 1) was supplied."""


class GridInadequate(RauzylabError):
    """Grid refinement moved a sup-norm estimate by more than the allowed factor."""


class SignConventionViolation(RauzylabError):
    """The zoom recursion anchor fails, indicating an inconsistent sign choice."""


class IncompatibleRuns(RauzylabError):
    """Two run directories cannot be compared field by field."""


class ConfigError(RauzylabError):
    """An experiment configuration file is malformed."""
