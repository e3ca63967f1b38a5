"""Exception hierarchy shared by every module in the package."""


class ContextDitError(Exception):
    """Base class for all package errors."""


class ShapeError(ContextDitError):
    """Tensor shapes are incompatible with the requested operation."""


class NumericError(ContextDitError):
    """A numeric invariant was violated (division by zero, NaN gradient, ...)."""


class MaskError(ContextDitError):
    """An attention row has no allowed keys."""


class ConfigError(ContextDitError):
    """A configuration value is out of its legal range."""


class RangeError(ContextDitError):
    """An index (e.g. diffusion timestep) is outside its valid range."""


class VocabError(ContextDitError):
    """A prompt token id is not part of the vocabulary."""


class FormatError(ContextDitError):
    """An on-disk file is corrupt, truncated, or of the wrong version."""


class ExtractionError(ContextDitError):
    """No subject could be located in a frame."""


class GenError(ContextDitError):
    """Sample generation could not satisfy its constraints within the retry budget."""


class DeterminismError(ContextDitError):
    """A closure that must be deterministic returned different values for the same input."""
