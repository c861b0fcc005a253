class IDKGError(Exception):
    """Operational failure raised by any pipeline stage."""


class ValidationError(IDKGError, ValueError):
    pass


class DivergenceError(IDKGError, FloatingPointError):
    pass


class ManifestMismatch(IDKGError):
    pass
