"""Multi-target tracking for low-frame-rate grayscale aerial imagery.

Couples a detection-based tracker (layered detection trees with merged-blob
splitting) with a local context tracker (flow-sampled hypotheses scored on
per-target star graphs), plus dense/sparse optical flow, track association
and fusion, CLEAR-style metrics, and a deterministic scene simulator.
"""

from .config import PipelineConfig
from .errors import WamitrackError
from .metrics import MetricsReport, evaluate, format_report
from .pipeline import run_tracking
from .simulator import CounterRng, ScenarioConfig, SimOutput, simulate
from .types import (BBox, Detection, GrayFrame, Observation, SOURCE_DETECTION,
                    SOURCE_INTERPOLATED, SOURCE_LCT, TemplateSet, Track,
                    TrackPool)

__version__ = "0.1.0"

__all__ = [
    "BBox", "CounterRng", "Detection", "GrayFrame", "MetricsReport",
    "Observation", "PipelineConfig", "ScenarioConfig", "SimOutput",
    "SOURCE_DETECTION", "SOURCE_INTERPOLATED", "SOURCE_LCT", "TemplateSet",
    "Track", "TrackPool", "WamitrackError", "evaluate", "format_report",
    "run_tracking", "simulate", "__version__",
]
