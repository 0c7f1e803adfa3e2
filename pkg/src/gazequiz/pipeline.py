"""End-to-end helpers shared by the CLI and the HTTP service."""

from __future__ import annotations

import hashlib

from .geometry import label_samples
from .ingest import parse_gaze_csv
from .metrics import AttentionReport, section_metrics
from .model import EngineConfig, LectureDescriptor


def analyze_csv(
    data: bytes,
    descriptor: LectureDescriptor,
    config: EngineConfig | None = None,
    *,
    session_id: str = "",
    sort: bool = False,
) -> AttentionReport:
    """Parse, label and measure one gaze log."""
    config = config or EngineConfig()
    trace, _stats = parse_gaze_csv(data, config, sort=sort)
    labeled = label_samples(trace, descriptor.aois)
    return section_metrics(labeled, descriptor.timeline, config, descriptor.learning_labels, session_id=session_id)


def seed_from_session(session_id: str) -> int:
    """64-bit seed derived from a session id, for reproducible control quizzes."""
    return int.from_bytes(hashlib.sha256(session_id.encode("utf-8")).digest()[:8], "big")
