"""Exception hierarchy shared by all modules."""


class GuidedSRError(Exception):
    """Base class for every error raised by this package."""


class DimensionNotDivisible(GuidedSRError, ValueError):
    pass


class ShapeMismatch(GuidedSRError, ValueError):
    pass


class GeoMismatch(GuidedSRError, ValueError):
    pass


class ValueOutOfRange(GuidedSRError, ValueError):
    def __init__(self, message, index=None, value=None):
        super().__init__(message)
        self.index = index
        self.value = value


class CorruptData(GuidedSRError, ValueError):
    pass


class ParseError(GuidedSRError, ValueError):
    def __init__(self, message, offset=None, line=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.offset = offset
        self.line = line


class EmptyGuide(GuidedSRError, ValueError):
    pass


class EmptySample(GuidedSRError, ValueError):
    pass


class NonFinite(GuidedSRError, FloatingPointError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class PlanError(GuidedSRError, ValueError):
    pass


class PatchTooLarge(PlanError):
    pass


class PlanMismatch(PlanError):
    pass


class OutOfBounds(GuidedSRError, IndexError):
    pass


class InvalidParams(GuidedSRError, ValueError):
    pass


class ConfigError(GuidedSRError, ValueError):
    pass
