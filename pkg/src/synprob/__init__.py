"""Query-driven probabilistic synapse detection for multi-channel
fluorescence volumes."""

from .core import (
    EPS_FLOOR,
    ChannelVolume,
    Detection,
    GroundTruthAnnotation,
    Label,
    MarkerQuery,
    ProbabilityVolume,
    PunctaSize,
    QuerySpec,
    SearchMode,
    Stage,
    VoxelGeometry,
)
from .postprocess import DetectionParams, extract_detections
from .query import execute_query

__version__ = "0.1.0"
