"""Exception hierarchy shared across the package."""


class TransductError(Exception):
    """Base class for all errors raised by this package."""


# --- task / type validation ---

class DimensionMismatch(TransductError):
    pass


class NonFiniteValue(TransductError):
    pass


class LabelOutOfRange(TransductError):
    pass


class NormTooFarFromUnit(TransductError):
    pass


class EmptyClass(TransductError):
    pass


# --- few-shot protocol ---

class InsufficientShots(TransductError):
    pass


# --- file formats ---

class BadMagic(TransductError):
    pass


class TruncatedFile(TransductError):
    pass


class RaggedCsv(TransductError):
    pass


class ParseError(TransductError):
    pass


class NegativeLabel(TransductError):
    pass


class IoFailure(TransductError):
    pass
