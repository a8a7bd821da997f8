"""Exception hierarchy shared by all slicelearn modules.

Every failure mode that callers are expected to branch on gets its own
class; everything derives from SliceLearnError so a CLI can catch one type.
"""


class SliceLearnError(Exception):
    """Base class for all slicelearn errors."""


# --- container / stream parsing -------------------------------------------

class BadMagic(SliceLearnError, ValueError):
    """Stream does not identify as the expected format."""


class TruncatedData(SliceLearnError, ValueError):
    """Stream ended before the declared payload was complete."""


class UnsupportedDatatype(SliceLearnError, ValueError):
    """Voxel datatype outside the supported set (uint8, int16, float32)."""


class NonVolumetric(SliceLearnError, ValueError):
    """Image is not a plain 3D volume."""


class VersionUnsupported(SliceLearnError, ValueError):
    """Container format version not understood by this reader."""


class DuplicateName(SliceLearnError, ValueError):
    """Weight container declares the same tensor name twice."""


# --- manifest --------------------------------------------------------------

class MalformedLine(SliceLearnError, ValueError):
    """A manifest line failed to parse; carries the 1-based line number."""

    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno


class DuplicateSubject(SliceLearnError, ValueError):
    """Two manifest lines share a subject_id."""


class CdrOutOfRange(SliceLearnError, ValueError):
    """Clinical dementia rating outside [0, 2]."""


# --- slice selection --------------------------------------------------------

class DegenerateRange(SliceLearnError, ValueError):
    """Histogram binning range has zero width."""


class EmptyVolume(SliceLearnError, ValueError):
    """Volume has no slices along the requested axis (defensive)."""


# --- tensor / network -------------------------------------------------------

class ShapeMismatch(SliceLearnError, ValueError):
    """Tensor shapes do not compose for the requested operation."""


class NonFinite(SliceLearnError, ValueError):
    """NaN or Inf encountered where finite values are required."""


class BadLabel(SliceLearnError, ValueError):
    """Class label outside [0, n_classes)."""


class MissingTensor(SliceLearnError, ValueError):
    """Weight container lacks a tensor the transfer mode requires."""


class EmptyDataset(SliceLearnError, ValueError):
    """Training requested on an empty dataset."""


# --- evaluation --------------------------------------------------------------

class TooFewUnits(SliceLearnError, ValueError):
    """Fewer units than folds requested."""


class LengthMismatch(SliceLearnError, ValueError):
    """Prediction and truth lists differ in length."""


class Empty(SliceLearnError, ValueError):
    """Metric requested on zero items."""


class DegenerateFold(SliceLearnError, ValueError):
    """A fold's training split does not contain both classes."""


class BadParams(SliceLearnError, ValueError):
    """Synthetic cohort parameters are invalid."""


class MalformedReport(SliceLearnError, ValueError):
    """Evaluation report file missing or not parseable."""


# --- configuration -----------------------------------------------------------

class ConfigError(SliceLearnError, ValueError):
    """Run configuration is missing fields, has unknown keys, or is invalid."""
