"""Exception types shared across the package.

Every error raised by fsmclab derives from FsmclabError, so callers can
catch one base class at API boundaries (the CLI and the HTTP service both
map these to structured error payloads).  Each subclass also derives from
the closest builtin category so that generic handling keeps working.
"""


class FsmclabError(Exception):
    """Base class for all package errors."""


# -- chain / distribution validation -----------------------------------------

class RowNotStochastic(FsmclabError, ValueError):
    """A transition-matrix row does not sum to one (or has entries outside [0, 1])."""


class Reducible(FsmclabError, ValueError):
    """The transition graph is not strongly connected."""


class Periodic(FsmclabError, ValueError):
    """The chain has period greater than one."""


class DuplicateGain(FsmclabError, ValueError):
    """Two states carry the same gain value; state identification would be ambiguous."""


class UnsupportedDistribution(FsmclabError, ValueError):
    """A fading family or parameter set the package does not handle."""


# -- numerical solves ---------------------------------------------------------

class SolveFailed(FsmclabError, RuntimeError):
    """A linear or scalar solve produced an unusable result."""


class NoConvergence(SolveFailed):
    """An iterative solve exhausted its budget without meeting tolerance."""


class Infeasible(FsmclabError, ValueError):
    """The optimization problem has no feasible point (e.g. negative power budget)."""


class TooManyStates(FsmclabError, ValueError):
    """The requested exhaustive computation would not terminate in reasonable time."""


# -- codec --------------------------------------------------------------------

class Overflow(FsmclabError, OverflowError):
    """A codebook count exceeds the exactly-representable integer range."""


class IndexOutOfRange(FsmclabError, IndexError):
    """A message component or time index lies outside its valid range."""


class DimensionMismatch(FsmclabError, ValueError):
    """Vector length does not match the codebook / scheme dimension."""


# -- schemes / channel --------------------------------------------------------

class CsiViolation(FsmclabError, RuntimeError):
    """An encoder tried to read channel-state information it cannot have yet."""


class WrongDelay(FsmclabError, ValueError):
    """Scheme kind and configured CSI delay do not match."""


class NonDiagonalClosedLoop(FsmclabError, ValueError):
    """A supplied gain table would couple codeword coordinates; the loop must stay diagonal."""


# -- control ------------------------------------------------------------------

class ZeroInitialCoordinate(FsmclabError, ValueError):
    """Growth-rate-from-state-products needs every initial coordinate nonzero."""


class GainUnstable(FsmclabError, RuntimeError):
    """The requested feedback gain is outside the mean-square stability region."""


class Diverged(FsmclabError, RuntimeError):
    """A simulated moment or state grew without bound."""


# -- persistence / configuration ----------------------------------------------

class IoFailure(FsmclabError, RuntimeError):
    """Reading or writing a result file failed."""


class ConfigError(FsmclabError, ValueError):
    """An experiment config file is missing required keys or holds bad values."""
