"""Exception hierarchy shared by every module."""


class TracePrivError(Exception):
    """Base class for all errors raised by :mod:`tracepriv`."""


class ParameterError(TracePrivError, ValueError):
    """A configuration or call parameter is out of its valid domain."""


class SlotRangeError(TracePrivError, IndexError):
    """A slot index lies outside the simulated horizon."""


class FormatError(TracePrivError, ValueError):
    """Malformed token, message, or ciphertext structure."""


class SchemeError(TracePrivError, ValueError):
    """Unsupported encryption scheme or unusable key material."""


class SizeError(TracePrivError, ValueError):
    """Plaintext exceeds the maximum sealable size."""


class AuthenticationError(TracePrivError):
    """Decryption failed: wrong key or tampered ciphertext."""


class ConsistencyError(TracePrivError):
    """Inputs disagree with each other (e.g. a schedule is missing)."""


class ProtocolError(TracePrivError):
    """An actor attempted a step the protocol does not allow."""


class CompletenessError(TracePrivError):
    """An aggregate was requested without all of its required inputs."""


class ConfigError(ParameterError):
    """Config file problem; carries the offending field and line when known."""

    def __init__(self, message, *, field=None, line=None, path=None):
        self.field = field
        self.line = line
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = ": ".join([", ".join(where)]) + ": " if where else ""
        super().__init__(prefix + message)


class InvariantViolation(TracePrivError, AssertionError):
    """An internal invariant failed during a run."""

    def __init__(self, invariant, detail=""):
        self.invariant = invariant
        super().__init__(f"invariant '{invariant}' violated" + (f": {detail}" if detail else ""))


class RunFailed(TracePrivError):
    """One run of a batch failed; ``cause`` is the original error."""

    def __init__(self, name, seed, cause):
        self.name = name
        self.seed = seed
        self.cause = cause
        super().__init__(f"run {name} seed {seed} failed: {type(cause).__name__}: {cause}")
