"""Exception types shared across the package.

Each failure mode callers are expected to distinguish gets its own class;
everything derives from PianodiffError so `except PianodiffError` catches
any library-originated failure.
"""


class PianodiffError(Exception):
    pass


# --- audio I/O ---

class MissingFile(PianodiffError, FileNotFoundError):
    pass


class UnsupportedEncoding(PianodiffError):
    pass


class MalformedHeader(PianodiffError):
    pass


class EmptyClip(PianodiffError):
    pass


class IoFailure(PianodiffError, OSError):
    pass


# --- tensor substrate ---

class DimMismatch(PianodiffError):
    pass


class GraphNotRecorded(PianodiffError):
    pass


# --- pitch / loudness encoders ---

class ClipTooShort(PianodiffError):
    pass


class NegativeFrequency(PianodiffError):
    pass


class IndexOutOfRange(PianodiffError):
    pass


class WrongSampleRate(PianodiffError):
    pass


class EmptyInput(PianodiffError):
    pass


# --- vector quantizer ---

class EmptyCodebook(PianodiffError):
    pass


class InsufficientDistinctValues(PianodiffError):
    pass


class SchemaVersionMismatch(PianodiffError):
    pass


# --- diffusion / training ---

class TOutOfRange(PianodiffError):
    pass


class NonFiniteLoss(PianodiffError):
    pass


class BadMagic(PianodiffError):
    pass


class VersionMismatch(PianodiffError):
    pass


class TensorDimMismatch(PianodiffError):
    pass


# --- dataset / evaluation ---

class PitchIndexZeroInScore(PianodiffError):
    pass


class GridMismatch(PianodiffError):
    pass


class DurationMismatch(PianodiffError):
    pass


class ConfigError(PianodiffError):
    pass
