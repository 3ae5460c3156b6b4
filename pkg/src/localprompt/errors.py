"""Exception types shared across the package.

Every error the library raises deliberately derives from LocalPromptError so
callers (and the CLI) can catch one base class.
"""


class LocalPromptError(Exception):
    """Base class for all errors raised by this package."""


# ---- numeric kernels ----

class ZeroNormVectorError(LocalPromptError):
    """Cosine similarity was asked for a vector with (near-)zero norm."""


class NonPositiveTemperatureError(LocalPromptError):
    """Softmax temperature must be strictly positive."""


class EmptyInputError(LocalPromptError):
    """An operation received an empty sequence."""


# ---- stores and checkpoints ----

class BadMagicError(LocalPromptError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(LocalPromptError):
    """File carries an unsupported format version."""


class TruncatedFileError(LocalPromptError):
    """File ended before the payload declared in its header."""


class ChecksumMismatchError(LocalPromptError):
    """Payload CRC-32 does not match the trailing checksum."""


class DimensionMismatchError(LocalPromptError):
    """Vector shapes are inconsistent with the declared d / N / C."""


class NonFiniteValueError(LocalPromptError):
    """A feature or prompt vector contains NaN or Inf."""


class InvalidLabelError(LocalPromptError):
    """A class label is outside [-1, C)."""


class StoreIOError(LocalPromptError):
    """Reading or writing a store file failed at the OS level."""


class EmptyClassError(LocalPromptError):
    """Few-shot subsampling found a class with no records."""


class ShapeMismatchError(LocalPromptError):
    """Prompt bank shapes disagree with the data or with each other."""


# ---- training ----

class NotEnoughCandidatesError(LocalPromptError):
    """A crop candidate set is smaller than m1 + m2."""


class NoNegativePromptsError(LocalPromptError):
    """The negative loss needs at least one negative prompt."""


class TooFewNegativePromptsError(LocalPromptError):
    """The diversity term needs at least two negative prompts."""


class MissingCropSetsError(LocalPromptError):
    """Training requires crop candidate sets for every record."""


class StepOutOfRangeError(LocalPromptError):
    """Learning-rate schedule queried outside [0, total_steps)."""


# ---- evaluation ----

class EmptySetError(LocalPromptError):
    """A metric received an empty score set."""


class UnknownAxisError(LocalPromptError):
    """Sweep axis is not one of the supported parameter names."""


# ---- synthetic data ----

class InvalidSynthSpecError(LocalPromptError):
    """Synthetic dataset spec violates its own constraints."""
