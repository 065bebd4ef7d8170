"""Exception types raised across the toolkit."""


class CoughScreenError(Exception):
    """Base class for every error raised by this package."""


# audio_io
class MalformedContainer(CoughScreenError, ValueError):
    pass


class UnsupportedEncoding(CoughScreenError, ValueError):
    pass


# preprocess / features
class ClipTooShort(CoughScreenError, ValueError):
    pass


class NoActivityFound(CoughScreenError):
    pass


class DegenerateFilter(CoughScreenError, ValueError):
    pass


class ShapeMismatch(CoughScreenError, ValueError):
    pass


class InvalidConfig(CoughScreenError, ValueError):
    pass


# augment
class InvalidMagnitude(CoughScreenError, ValueError):
    pass


class SingleClassInput(CoughScreenError, ValueError):
    pass


# nncore
class GraphNotBuilt(CoughScreenError, RuntimeError):
    pass


class LengthMismatch(CoughScreenError, ValueError):
    pass


# checkpoints and MELS records
class BadMagic(CoughScreenError, ValueError):
    pass


class VersionMismatch(CoughScreenError, ValueError):
    pass


class TruncatedFile(CoughScreenError, ValueError):
    pass


class ShapeMismatchOnLoad(CoughScreenError, ValueError):
    pass


# dataset
class MissingColumn(CoughScreenError, ValueError):
    def __init__(self, column):
        super().__init__(f"manifest is missing required column {column!r}")
        self.column = column


class BadRow(CoughScreenError, ValueError):
    def __init__(self, line, reason=""):
        msg = f"bad manifest row at line {line}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.line = line


class EmptyManifest(CoughScreenError, ValueError):
    pass


class TooFewSamples(CoughScreenError, ValueError):
    pass


# metrics
class EmptyInput(CoughScreenError, ValueError):
    pass


class UndefinedMetric(CoughScreenError, ZeroDivisionError):
    def __init__(self, name):
        super().__init__(f"{name} is undefined (zero denominator)")
        self.name = name


class SingleClass(CoughScreenError, ValueError):
    pass


# trainer
class NonFiniteLoss(CoughScreenError, FloatingPointError):
    def __init__(self, epoch, batch):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class ConfigMismatch(CoughScreenError, ValueError):
    pass
