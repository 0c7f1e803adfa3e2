"""Gaze-driven attention metrics and personalized post-lecture quizzes."""

from .geometry import LabeledTrace, label_samples, ray_hits_box, ray_hits_rectangle
from .ingest import GazeTrace, IngestStats, Mode, normalize_directions, parse_gaze_csv
from .metrics import (
    AttentionReport,
    DwellSegment,
    SectionMetrics,
    adi,
    build_dwell_segments,
    count_switches,
    coverage,
    fixation_filter,
    per_minute_coverage,
    section_metrics,
)
from .model import (
    AWAY,
    AoiDefinition,
    Box,
    EngineConfig,
    GazeSample,
    LectureDescriptor,
    LectureTimeline,
    Rectangle,
    load_lecture,
    validate_timeline,
)
from .pipeline import analyze_csv

__version__ = "0.1.0"
