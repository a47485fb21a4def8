"""Exception hierarchy.

Errors split into two families so the CLI can map them to exit codes:
``ConfigError``-like problems (bad input, bad shapes, bad files) and
``NumericError`` (the math went somewhere it should not).
"""


class OaveError(Exception):
    """Base class for every error raised by this package."""


class UsageError(OaveError):
    """Invalid arguments, shapes or configuration."""


class NumericError(OaveError):
    """A numerical failure during integration or estimation."""


# latent-core
class InvalidShape(UsageError):
    pass


class ShapeMismatch(UsageError):
    pass


class NonFiniteValue(UsageError):
    pass


# scheduler
class InvalidSteps(UsageError):
    pass


class NonFiniteVelocity(NumericError):
    pass


class DivergenceDetected(NumericError):
    pass


# oracles
class SingularTime(NumericError):
    pass


class DegenerateField(NumericError):
    pass


class InsufficientEffectiveSamples(NumericError):
    pass


class InvalidField(UsageError):
    pass


# attention
class EmptyPrompt(UsageError):
    pass


class HookShapeViolation(UsageError):
    pass


class AlignmentOutOfRange(UsageError):
    pass


class PromptMismatch(UsageError):
    pass


# pipeline
class ZeroVector(UsageError):
    pass


# file formats / cli
class ConfigError(UsageError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ParseError(UsageError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagic(ParseError):
    pass


class UnsupportedVersion(ParseError):
    pass
