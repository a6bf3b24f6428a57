"""Exception types shared across the package.

Every failure mode that callers are expected to catch has its own class;
all of them derive from :class:`MorselabError` so ``except MorselabError``
catches any domain failure while programming errors still surface raw.
"""


class MorselabError(Exception):
    """Base class for all domain errors raised by morselab."""


class ConfigError(MorselabError):
    """Scenario configuration is malformed or inconsistent."""


class InvalidState(MorselabError):
    """A state vector has the wrong shape, dtype, or non-finite entries."""


class NonFiniteState(MorselabError):
    """Integration produced a non-finite state or left the bounding box."""


class StepLimitExceeded(MorselabError):
    """A flow request would exceed the configured step budget."""


class NonConvergent(MorselabError):
    """An iterative solve failed to reach its tolerance."""


class DegenerateCritical(MorselabError):
    """A critical point has an eigenvalue inside the degeneracy band."""


class NonRegularLevel(MorselabError):
    """A critical value sits too close to the chosen action cutoff."""


class EpsilonTooLarge(MorselabError):
    """Requested action window exceeds half the minimal critical gap."""


class MorseSmaleViolation(MorselabError):
    """A connecting-orbit computation hit a non-generic configuration."""


class UnsupportedIndex(MorselabError):
    """Signed orbit counting is not implemented for this source index."""


class BoundarySquareNonzero(MorselabError):
    """The boundary operator failed to square to zero."""


class NestingViolation(MorselabError):
    """A filtration level escaped the required nesting."""


class DisjointnessFailure(MorselabError):
    """Conley sets of distinct critical points overlap."""


class TLimitExceeded(MorselabError):
    """Doubling search for a filtration time passed its cap."""


class NotAMorseFiltration(MorselabError):
    """Relative homology of a filtration pair is not free in one degree."""


class OracleError(MorselabError):
    """A membership oracle could not classify a state."""


class TTooSmall(MorselabError):
    """Requested graph-map time is below the chart's minimum."""


class ShootingDivergence(MorselabError):
    """The mixed boundary-value solve diverged."""


class EmptyLeaf(MorselabError):
    """A foliation leaf sample contains no usable points."""


class AlphaDegenerate(MorselabError):
    """Gradient floor on the annular region is numerically zero."""


class MissingStage(MorselabError):
    """A CLI stage needs artifacts that an earlier stage did not produce."""
