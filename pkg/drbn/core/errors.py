"""
Exception hierarchy.
Library layers raise these; services translate them into result objects and
the CLI controller into exit codes.
"""

from typing import Optional


class DrbnError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(DrbnError, ValueError):
    """Operand shapes are inconsistent."""


class GeometryError(ShapeError):
    """Convolution geometry is not exact (filter larger than input, non-divisible stride)."""


class ProbabilityRangeError(DrbnError, ValueError):
    """A probability tensor holds values outside [0, 1] (or NaN)."""


class EmptyBatchError(DrbnError, ValueError):
    """A batch-averaged quantity was requested for zero examples."""


class EnumerationLimitError(DrbnError, ValueError):
    """Model is too large for exhaustive enumeration."""


class ConfigError(DrbnError, ValueError):
    """Invalid run configuration."""


class ArchitectureSpecError(ConfigError):
    """Architecture string could not be parsed; `position` is the 0-based character index."""

    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        pointer = f"\n  {text}\n  {' ' * position}^" if text else ""
        super().__init__(f"{message} (at position {position}){pointer}")


class IdxFormatError(DrbnError, ValueError):
    """Malformed IDX container; `offset` is the byte offset of the fault."""

    def __init__(self, message: str, offset: int, path: Optional[str] = None):
        self.offset = offset
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"{message} at byte offset {offset}{where}")


class ImageFormatError(DrbnError, ValueError):
    """An image could not be decoded or has degenerate size."""


# ─── Model / checkpoint files ────────────────────────────────────────────────
class ModelFileError(DrbnError):
    """Base class for model and checkpoint file problems."""


class BadMagicError(ModelFileError):
    pass


class UnsupportedVersionError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class TruncatedFileError(ModelFileError):
    pass


class ShapeInconsistencyError(ModelFileError):
    pass


class MissingSectionError(ModelFileError):
    pass
