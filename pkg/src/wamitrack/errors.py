"""Exception types shared across the tracker."""


class WamitrackError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(WamitrackError):
    """Two rasters/patches that must share dimensions do not."""


class OutOfFrame(WamitrackError):
    """A box does not intersect the frame it is cropped from."""


class MissingObservation(WamitrackError):
    """A track lacks an observation at a required frame index."""


class RegionTooSmall(WamitrackError):
    """No template placement fits inside the scan region."""


class EmptyTargetSet(WamitrackError):
    """Graph optimization was called with no target hypotheses."""


class NoOverlap(WamitrackError):
    """Track and tracklet time intervals do not intersect."""


class GapTooLarge(WamitrackError):
    """Temporal gap between track end and tracklet start exceeds the limit."""


class ConflictingAssignment(WamitrackError):
    """A track received more than one tracklet in a single frame."""


class EmptyGroundTruth(WamitrackError):
    """Evaluation requested against an empty ground-truth set."""


class EmptyOverlap(WamitrackError):
    """Ground truth and predictions cover disjoint frame ranges."""


class InvalidConfig(WamitrackError):
    """A configuration file failed validation."""


class InputFormatError(WamitrackError):
    """A data file (frames, detections, tracks) failed to parse."""
