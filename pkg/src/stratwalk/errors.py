"""Exception types shared across the package."""


class StratwalkError(Exception):
    """Base class for all package-specific errors."""


class PrecisionExhausted(StratwalkError):
    """An interval-certified operation could not be completed at the available precision."""


class RationalInput(StratwalkError):
    """The Gauss orbit of the supplied angle terminates before the requested depth."""


class DepthExceeded(StratwalkError):
    """An index fell outside the range representable at the computed depth."""


class HorizonExceeded(StratwalkError):
    """A scan or table query ran past its configured horizon."""


class HypothesisViolation(StratwalkError):
    """An environment failed the uniform ellipticity / bounded-support certificate."""


class WrongKind(StratwalkError):
    """An operation restricted to one environment kind was called on another."""


class RealizabilityError(StratwalkError):
    """A requested per-stratum mean cannot be realized under the support bound."""


class SmallDivisorBlowup(StratwalkError):
    """A Fourier divisor fell below the configured floor."""


class NotCentered(StratwalkError):
    """A function that must have zero mean does not."""


class TruncationTooDeep(StratwalkError):
    """A constructive truncation would exceed its piece or depth budget."""


class ConfigError(StratwalkError):
    """An experiment configuration is malformed or inconsistent."""
