"""Segmentation, labelling and simulation of keystroke and gaze logs from
translation sessions."""

from .session import (Diagnostic, FixationEvent, KeyEvent, Session, parse_session,
                      serialize_session, validate_session)
from .thresholds import ThresholdSet, derive_thresholds, filter_sessions
from .segmentation import SegmentHierarchy, segment
from .gaze import GazeClassifier, GazeGeometry, classify_gaze
from .states import HofLabeler, HofRules, detect_phases, label_hof
from .styles import ConstrainedKMeans, RelativeICV, constrained_kmeans, relative_icv
from .simulator import GeneratorParams, default_params, simulate_session

__version__ = "0.1.0"

__all__ = [
    "Diagnostic", "FixationEvent", "KeyEvent", "Session", "parse_session",
    "serialize_session", "validate_session", "ThresholdSet", "derive_thresholds",
    "filter_sessions", "SegmentHierarchy", "segment", "GazeClassifier", "GazeGeometry",
    "classify_gaze", "HofLabeler", "HofRules", "detect_phases", "label_hof",
    "ConstrainedKMeans", "RelativeICV", "constrained_kmeans", "relative_icv",
    "GeneratorParams", "default_params", "simulate_session", "__version__",
]
