class CkksError(Exception):
    """Base class for encryption-layer failures."""


class InvalidParams(CkksError, ValueError):
    pass


class Overflow(CkksError, OverflowError):
    """Scaled message would not fit below half the active modulus."""


class LevelMismatch(CkksError):
    pass


class ScaleMismatch(CkksError):
    pass


class DepthExhausted(CkksError):
    pass


class MissingGaloisKey(CkksError, KeyError):
    pass


class MalformedFrame(CkksError, ValueError):
    pass


class VersionMismatch(CkksError, ValueError):
    pass


class ParamsMismatch(CkksError, ValueError):
    pass
