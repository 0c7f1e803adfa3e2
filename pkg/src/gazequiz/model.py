"""Domain types shared across the pipeline.

All types are frozen dataclasses; constructors validate their invariants and
raise a distinct :class:`~gazequiz.errors.InvariantError` subclass per
violation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence, Union

from .errors import (
    AoiShapeError,
    ConfigError,
    DescriptorError,
    DirectionNormError,
    DuplicateLabelError,
    GapError,
    MissingGazeDataError,
    NegativeTimestampError,
    OutOfRangeError,
    OverlapError,
    ReservedLabelError,
)

Vec3 = tuple[float, float, float]

AWAY = "away"
UNIT_NORM_TOL = 1e-6
ORTHO_TOL = 1e-6


def _vec3(value: Iterable[float], what: str) -> Vec3:
    try:
        x, y, z = (float(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise AoiShapeError(f"{what} must be a 3-vector") from exc
    if not all(math.isfinite(c) for c in (x, y, z)):
        raise AoiShapeError(f"{what} must be finite")
    return (x, y, z)


def _dot(a: Sequence[float], b: Sequence[float]) -> float:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@dataclass(frozen=True)
class GazeSample:
    t_ms: int
    origin: Vec3 | None = None
    direction: Vec3 | None = None
    target: str | None = None
    valid: bool = True

    def __post_init__(self):
        if self.t_ms < 0:
            raise NegativeTimestampError(f"t_ms must be >= 0, got {self.t_ms}")
        has_ray = self.origin is not None and self.direction is not None
        if not has_ray and self.target is None:
            raise MissingGazeDataError("sample needs origin+direction or a target label")
        # Invalid samples may carry a degenerate (zero) direction.
        if self.direction is not None and self.valid:
            norm = math.sqrt(_dot(self.direction, self.direction))
            if abs(norm - 1.0) > UNIT_NORM_TOL:
                raise DirectionNormError(f"direction norm {norm!r} is not 1")


@dataclass(frozen=True)
class Rectangle:
    """Oriented planar rectangle: ``center + a*half_u + b*half_v`` for a, b in [-1, 1]."""

    center: Vec3
    half_u: Vec3
    half_v: Vec3

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        object.__setattr__(self, "half_u", _vec3(self.half_u, "half_u"))
        object.__setattr__(self, "half_v", _vec3(self.half_v, "half_v"))
        nu = math.sqrt(_dot(self.half_u, self.half_u))
        nv = math.sqrt(_dot(self.half_v, self.half_v))
        if nu == 0.0 or nv == 0.0:
            raise AoiShapeError("rectangle half-edges must be nonzero")
        if abs(_dot(self.half_u, self.half_v)) > ORTHO_TOL * nu * nv:
            raise AoiShapeError("rectangle half-edges must be orthogonal")

    def to_dict(self) -> dict:
        return {
            "type": "rectangle",
            "center": list(self.center),
            "half_u": list(self.half_u),
            "half_v": list(self.half_v),
        }


@dataclass(frozen=True)
class Box:
    """Axis-aligned box."""

    min: Vec3
    max: Vec3

    def __post_init__(self):
        object.__setattr__(self, "min", _vec3(self.min, "min"))
        object.__setattr__(self, "max", _vec3(self.max, "max"))
        if any(lo > hi for lo, hi in zip(self.min, self.max)):
            raise AoiShapeError("box min must be <= max componentwise")

    def to_dict(self) -> dict:
        return {"type": "box", "min": list(self.min), "max": list(self.max)}


Shape = Union[Rectangle, Box]


def shape_from_dict(data: dict) -> Shape:
    kind = data.get("type")
    try:
        if kind == "rectangle":
            return Rectangle(data["center"], data["half_u"], data["half_v"])
        if kind == "box":
            return Box(data["min"], data["max"])
    except KeyError as exc:
        raise AoiShapeError(f"{kind} shape missing field {exc.args[0]!r}") from exc
    raise AoiShapeError(f"unknown shape type {kind!r}")


@dataclass(frozen=True)
class AoiDefinition:
    label: str
    shape: Shape
    learning_related: bool = False

    def __post_init__(self):
        if not isinstance(self.label, str) or not self.label:
            raise AoiShapeError("AOI label must be a nonempty string")
        if self.label == AWAY:
            raise ReservedLabelError(f"{AWAY!r} is reserved")

    @classmethod
    def from_dict(cls, data: dict) -> "AoiDefinition":
        return cls(
            label=data.get("label", ""),
            shape=shape_from_dict(data.get("shape", {})),
            learning_related=bool(data.get("learning_related", False)),
        )

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "learning_related": self.learning_related,
            "shape": self.shape.to_dict(),
        }


def validate_aoi_set(aois: Sequence[AoiDefinition]) -> tuple[AoiDefinition, ...]:
    seen: set[str] = set()
    for aoi in aois:
        if aoi.label in seen:
            raise DuplicateLabelError(f"duplicate AOI label {aoi.label!r}")
        seen.add(aoi.label)
    return tuple(aois)


def learning_labels(aois: Iterable[AoiDefinition]) -> frozenset[str]:
    return frozenset(a.label for a in aois if a.learning_related)


@dataclass(frozen=True)
class Section:
    index: int
    start_ms: int
    end_ms: int

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms


@dataclass(frozen=True)
class LectureTimeline:
    lecture_id: str
    duration_ms: int
    sections: tuple[Section, ...]

    def raw_sections(self) -> list[tuple[int, int]]:
        return [(s.start_ms, s.end_ms) for s in self.sections]

    def section(self, index: int) -> Section:
        return self.sections[index - 1]

    def __len__(self) -> int:
        return len(self.sections)


def _as_pair(item) -> tuple[int, int]:
    if isinstance(item, Section):
        return item.start_ms, item.end_ms
    start, end = item
    return int(start), int(end)


def validate_timeline(raw_sections, duration_ms: int, lecture_id: str = "") -> LectureTimeline:
    """Check that sections tile ``[0, duration_ms)`` and build a timeline.

    ``raw_sections`` holds ``(start_ms, end_ms)`` pairs (or :class:`Section`
    values) in order; errors name the 1-based index of the offending section.
    """
    pairs = [_as_pair(s) for s in raw_sections]
    if not pairs:
        raise OutOfRangeError(1, "timeline needs at least one section")
    if duration_ms <= 0:
        raise OutOfRangeError(1, f"duration {duration_ms} must be positive")
    expected = 0
    sections = []
    for idx, (start, end) in enumerate(pairs, start=1):
        if start < 0 or end > duration_ms:
            raise OutOfRangeError(idx, f"[{start}, {end}) outside [0, {duration_ms})")
        if end <= start:
            raise OutOfRangeError(idx, f"empty or inverted range [{start}, {end})")
        if start > expected:
            raise GapError(idx, f"gap before start {start}", boundary_ms=expected)
        if start < expected:
            raise OverlapError(idx, f"starts at {start} before previous end {expected}")
        sections.append(Section(idx, start, end))
        expected = end
    if expected != duration_ms:
        raise GapError(len(pairs), f"sections end at {expected}, lecture at {duration_ms}", boundary_ms=expected)
    return LectureTimeline(lecture_id, int(duration_ms), tuple(sections))


def equal_sections(duration_ms: int, n: int = 6, lecture_id: str = "") -> LectureTimeline:
    """Split a lecture into ``n`` contiguous sections of (near) equal length."""
    bounds = [round(duration_ms * k / n) for k in range(n + 1)]
    return validate_timeline(list(zip(bounds[:-1], bounds[1:])), duration_ms, lecture_id)


@dataclass(frozen=True)
class EngineConfig:
    nominal_rate_hz: float = 60.0
    switch_debounce_ms: int = 100
    gap_clamp_ms: int = 500
    adi_coverage_weight: float = 0.7
    adi_switch_weight: float = 0.3
    switch_rate_cap: float = 30.0
    min_section_sample_fraction: float = 0.5
    question_count: int = 6
    rng_seed: int = 0
    count_away_switches: bool = True
    quiz_difficulty: str = "medium"
    generation_retries: int = 2
    grounding_chunks_per_section: int = 3

    def __post_init__(self):
        def bad(name, why):
            raise ConfigError(f"{name}: {why}")

        if not self.nominal_rate_hz > 0:
            bad("nominal_rate_hz", "must be positive")
        if self.switch_debounce_ms < 0:
            bad("switch_debounce_ms", "must be non-negative")
        if self.gap_clamp_ms <= 0:
            bad("gap_clamp_ms", "must be positive")
        for name in ("adi_coverage_weight", "adi_switch_weight"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                bad(name, "must lie in [0, 1]")
        if abs(self.adi_coverage_weight + self.adi_switch_weight - 1.0) > 1e-9:
            bad("adi weights", "must sum to 1")
        if not self.switch_rate_cap > 0:
            bad("switch_rate_cap", "must be positive")
        if not 0.0 < self.min_section_sample_fraction <= 1.0:
            bad("min_section_sample_fraction", "must lie in (0, 1]")
        if self.question_count < 1:
            bad("question_count", "must be positive")
        if not -(2**63) <= self.rng_seed < 2**64:
            bad("rng_seed", "must fit in 64 bits")
        if self.quiz_difficulty not in ("easy", "medium", "hard"):
            bad("quiz_difficulty", "must be easy, medium or hard")
        if self.generation_retries < 0:
            bad("generation_retries", "must be non-negative")
        if self.grounding_chunks_per_section < 1:
            bad("grounding_chunks_per_section", "must be positive")

    @classmethod
    def from_dict(cls, data: dict | None) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data or {}) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**(data or {}))

    def with_overrides(self, **kw) -> "EngineConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class SectionInfo:
    title: str = ""
    content_text: str = ""


@dataclass(frozen=True)
class LectureDescriptor:
    """Timeline, per-section text and AOI set for one lecture."""

    timeline: LectureTimeline
    aois: tuple[AoiDefinition, ...]
    info: dict = field(default_factory=dict)  # section index -> SectionInfo

    @property
    def lecture_id(self) -> str:
        return self.timeline.lecture_id

    @property
    def learning_labels(self) -> frozenset[str]:
        return learning_labels(self.aois)

    def section_info(self, index: int) -> SectionInfo:
        return self.info.get(index, SectionInfo())

    @classmethod
    def from_dict(cls, data: dict) -> "LectureDescriptor":
        if not isinstance(data, dict):
            raise DescriptorError("descriptor must be a JSON object")
        try:
            lecture_id = str(data["lecture_id"])
            duration = int(data["duration_ms"])
            raw = data["sections"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DescriptorError(f"descriptor missing or bad field: {exc}") from exc
        raw = sorted(raw, key=lambda s: s.get("index", 0))
        for pos, sec in enumerate(raw, start=1):
            if sec.get("index", pos) != pos:
                raise DescriptorError(f"section indices must be 1..N, found {sec.get('index')}")
        timeline = validate_timeline([(s["start_ms"], s["end_ms"]) for s in raw], duration, lecture_id)
        info = {
            pos: SectionInfo(str(s.get("title", "")), str(s.get("content_text", "")))
            for pos, s in enumerate(raw, start=1)
        }
        aois = validate_aoi_set([AoiDefinition.from_dict(a) for a in data.get("aois", [])])
        return cls(timeline, aois, info)

    def to_dict(self) -> dict:
        return {
            "lecture_id": self.lecture_id,
            "duration_ms": self.timeline.duration_ms,
            "sections": [
                {
                    "index": s.index,
                    "start_ms": s.start_ms,
                    "end_ms": s.end_ms,
                    "title": self.section_info(s.index).title,
                    "content_text": self.section_info(s.index).content_text,
                }
                for s in self.timeline.sections
            ],
            "aois": [a.to_dict() for a in self.aois],
        }


def load_lecture(path: str | Path) -> LectureDescriptor:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DescriptorError(f"{path}: invalid JSON ({exc})") from exc
    return LectureDescriptor.from_dict(data)
