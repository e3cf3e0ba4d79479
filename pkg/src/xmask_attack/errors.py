class XMaskAttackError(Exception):
    """Base class for all package errors."""


class InvalidInputError(XMaskAttackError, ValueError):
    """Input violates a documented precondition."""


class DegenerateMaskError(XMaskAttackError):
    pass


class NumericError(XMaskAttackError, FloatingPointError):
    """A loss term or gradient became non-finite."""

    def __init__(self, message, *, term=None, snapshot=None):
        super().__init__(message)
        self.term = term
        self.snapshot = snapshot


class EncoderUnavailableError(XMaskAttackError, RuntimeError):
    """Requested encoder backend or model cannot be constructed."""


class EncoderFailure(XMaskAttackError, RuntimeError):
    def __init__(self, message, *, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConfigError(XMaskAttackError, ValueError):
    def __init__(self, message, *, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line


class JudgeTransportError(XMaskAttackError, ConnectionError):
    pass


class JudgeProtocolError(XMaskAttackError, ValueError):
    pass


class UndefinedRateError(XMaskAttackError, ZeroDivisionError):
    pass
