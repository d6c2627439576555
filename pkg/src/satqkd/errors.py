"""Exception types shared across the package."""


class SatQkdError(Exception):
    """Base class for all satqkd errors."""


class InvalidParameterError(SatQkdError, ValueError):
    """A parameter violates its documented range or invariant."""


class NoSolutionError(SatQkdError, ValueError):
    """The requested inversion has no solution (e.g. loss below the atmospheric floor)."""


class ProtocolError(SatQkdError):
    """Two-party bookkeeping went out of step (length/index mismatch)."""


class InvalidEventError(SatQkdError, ValueError):
    """A detection event lies outside its detection period."""


class LdpcConstructionError(SatQkdError):
    """The degree distribution is infeasible for the requested code size."""


class DecodeFailureError(SatQkdError):
    """Belief propagation exhausted its iteration budget without matching the syndrome."""


class NoViableCodeError(SatQkdError):
    """No code rate in the ladder supports the observed error rate."""


class LedgerError(SatQkdError):
    """Pre-shared key ledger misuse: exhausted pool or a one-time re-issue attempt."""


class InsufficientKeyError(SatQkdError):
    """Not enough accumulated QKD key for the OTP layer under the wait policy."""


class InvalidKeyError(SatQkdError, ValueError):
    """Cipher or MAC key has the wrong size."""


class NonceReuseError(SatQkdError):
    """A (key, nonce) pair was about to be used twice."""


class ConfigError(SatQkdError):
    """Configuration file could not be parsed or failed validation."""


class SessionAbort(SatQkdError):
    """A session attempt aborted; carries the typed reason."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)
