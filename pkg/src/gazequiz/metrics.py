"""Dwell segmentation, coverage, attention switches and the attention index.

Segments are half-open ``[start_ms, end_ms)`` intervals in integer
milliseconds, so all window arithmetic below is exact.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, Iterator

import numpy as np

from .errors import EmptyTraceError, InapplicableError, InvariantError
from .geometry import LabeledTrace
from .model import AWAY, EngineConfig, LectureTimeline

MINUTE_MS = 60_000
_SIX = Decimal("0.000001")


def round6(x: float) -> float:
    """Round half-even to 6 fractional digits."""
    return float(Decimal(repr(float(x))).quantize(_SIX, rounding=ROUND_HALF_EVEN))


def format6(x: float) -> str:
    """Plain decimal text with at most 6 fractional digits (no exponent)."""
    text = format(Decimal(repr(float(x))).quantize(_SIX, rounding=ROUND_HALF_EVEN), "f")
    whole, _, frac = text.partition(".")
    frac = frac.rstrip("0") or "0"
    if whole == "-0":
        whole = "0"
    return f"{whole}.{frac}"


@dataclass(frozen=True)
class DwellSegment:
    label: str
    start_ms: int
    end_ms: int

    def __post_init__(self):
        if self.end_ms <= self.start_ms:
            raise InvariantError(f"segment [{self.start_ms}, {self.end_ms}) is empty")


class DwellSegments(Sequence):
    """Ordered dwell segments backed by parallel arrays."""

    def __init__(self, starts, ends, labels):
        self.starts = np.asarray(starts, dtype=np.int64)
        self.ends = np.asarray(ends, dtype=np.int64)
        lab = np.empty(len(self.starts), dtype=object)
        lab[:] = list(labels)
        self.labels = lab

    @classmethod
    def coerce(cls, segments) -> "DwellSegments":
        if isinstance(segments, DwellSegments):
            return segments
        segments = list(segments)
        return cls([s.start_ms for s in segments], [s.end_ms for s in segments], [s.label for s in segments])

    def __len__(self) -> int:
        return len(self.starts)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return DwellSegments(self.starts[i], self.ends[i], self.labels[i])
        return DwellSegment(self.labels[i], int(self.starts[i]), int(self.ends[i]))

    def __iter__(self) -> Iterator[DwellSegment]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if isinstance(other, (list, tuple)):
            return list(self) == list(other)
        if not isinstance(other, DwellSegments):
            return NotImplemented
        return (
            np.array_equal(self.starts, other.starts)
            and np.array_equal(self.ends, other.ends)
            and list(self.labels) == list(other.labels)
        )

    def __repr__(self) -> str:
        return f"DwellSegments({list(self)!r})"


def _run_length(starts, ends, labels):
    if len(starts) == 0:
        return starts, ends, labels
    change = np.ones(len(labels), dtype=bool)
    change[1:] = labels[1:] != labels[:-1]
    first = np.nonzero(change)[0]
    last = np.append(first[1:] - 1, len(labels) - 1)
    return starts[first], ends[last], labels[first]


def _debounce(starts, ends, labels, debounce_ms: int):
    """Absorb label changes that last less than ``debounce_ms`` into the preceding label."""
    out_s: list[int] = []
    out_e: list[int] = []
    out_l: list[str] = []
    for s, e, lab in zip(starts.tolist(), ends.tolist(), labels.tolist()):
        if out_l and (lab == out_l[-1] or e - s < debounce_ms):
            out_e[-1] = e
            continue
        out_s.append(s)
        out_e.append(e)
        out_l.append(lab)
    return out_s, out_e, out_l


def build_dwell_segments(labeled: LabeledTrace, config: EngineConfig | None = None) -> DwellSegments:
    """Turn per-sample labels into merged, debounced dwell segments.

    Each sample holds its label until the next sample, for at most
    ``gap_clamp_ms``; the remainder of a longer gap is ``"away"``. The last
    sample dwells for the median inter-sample interval.
    """
    config = config or EngineConfig()
    n = len(labeled)
    if n == 0:
        raise EmptyTraceError("no samples")
    t = np.asarray(labeled.t_ms, dtype=np.int64)
    labels = np.asarray(labeled.labels, dtype=object)
    clamp = config.gap_clamp_ms
    if n > 1:
        gaps = np.diff(t)
        last = int(round(float(np.median(gaps))))
    else:
        gaps = np.zeros(0, dtype=np.int64)
        last = int(round(1000.0 / config.nominal_rate_hz))
    last = max(1, min(last, clamp))
    dwell = np.append(np.minimum(gaps, clamp), last)
    starts = t
    ends = t + dwell
    lost = np.nonzero(gaps > clamp)[0]
    if len(lost):
        away = np.empty(len(lost), dtype=object)
        away[:] = AWAY
        starts = np.concatenate([starts, t[lost] + clamp])
        ends = np.concatenate([ends, t[lost + 1]])
        labels = np.concatenate([labels, away])
        order = np.argsort(starts, kind="stable")
        starts, ends, labels = starts[order], ends[order], labels[order]
    starts, ends, labels = _run_length(starts, ends, labels)
    if config.switch_debounce_ms > 0:
        starts, ends, labels = _debounce(starts, ends, labels, config.switch_debounce_ms)
    return DwellSegments(starts, ends, labels)


def _overlaps(seg: DwellSegments, ws: int, we: int) -> np.ndarray:
    return np.clip(np.minimum(seg.ends, we) - np.maximum(seg.starts, ws), 0, None)


def coverage(segments, window_start_ms: int, window_end_ms: int, learning_labels: Iterable[str]) -> float:
    """Fraction of the window spent on learning-related labels."""
    if window_end_ms <= window_start_ms:
        raise ValueError("window must have positive length")
    seg = DwellSegments.coerce(segments)
    learn = set(learning_labels)
    mask = np.fromiter((lab in learn for lab in seg.labels), dtype=bool, count=len(seg))
    on = int(_overlaps(seg, window_start_ms, window_end_ms)[mask].sum())
    return min(1.0, max(0.0, on / (window_end_ms - window_start_ms)))


def per_minute_coverage(segments, duration_ms: int, learning_labels: Iterable[str]) -> list[float]:
    """Coverage per 60 s window; a trailing partial window uses its own length."""
    if duration_ms <= 0:
        raise ValueError("duration must be positive")
    seg = DwellSegments.coerce(segments)
    return [
        coverage(seg, start, min(start + MINUTE_MS, duration_ms), learning_labels)
        for start in range(0, duration_ms, MINUTE_MS)
    ]


def dwell_by_label(segments, window_start_ms: int, window_end_ms: int) -> dict[str, int]:
    seg = DwellSegments.coerce(segments)
    ov = _overlaps(seg, window_start_ms, window_end_ms)
    totals: dict[str, int] = {}
    for lab, ms in zip(seg.labels, ov.tolist()):
        if ms:
            totals[lab] = totals.get(lab, 0) + ms
    return totals


def count_switches(segments, window: tuple[int, int], *, include_away: bool = True) -> int:
    """Label changes whose boundary time falls in ``[window[0], window[1])``."""
    seg = DwellSegments.coerce(segments)
    starts, labels = seg.starts, seg.labels
    if not include_away:
        keep = labels != AWAY
        starts, labels = starts[keep], labels[keep]
    if len(starts) < 2:
        return 0
    changed = labels[1:] != labels[:-1]
    b = starts[1:][changed]
    return int(np.count_nonzero((b >= window[0]) & (b < window[1])))


def adi(coverage_value: float, switch_rate: float, config: EngineConfig | None = None) -> float:
    """Attention index: weighted coverage plus a capped switch-rate penalty, clamped to [0, 1]."""
    config = config or EngineConfig()
    penalty = min(1.0, switch_rate / config.switch_rate_cap)
    value = config.adi_coverage_weight * coverage_value + config.adi_switch_weight * (1.0 - penalty)
    return min(1.0, max(0.0, value))


@dataclass(frozen=True)
class SectionMetrics:
    index: int
    start_ms: int
    end_ms: int
    aoi_coverage: float
    attention_switches: int
    switch_rate_per_min: float
    adi: float
    valid: bool
    sample_count: int

    def __post_init__(self):
        if not 0.0 <= self.aoi_coverage <= 1.0 or not 0.0 <= self.adi <= 1.0:
            raise InvariantError(f"section {self.index}: coverage/adi outside [0, 1]")
        if self.attention_switches < 0 or self.switch_rate_per_min < 0:
            raise InvariantError(f"section {self.index}: negative switch count")

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "start_ms": self.start_ms,
            "end_ms": self.end_ms,
            "aoi_coverage": self.aoi_coverage,
            "attention_switches": self.attention_switches,
            "switch_rate_per_min": self.switch_rate_per_min,
            "adi": self.adi,
            "valid": self.valid,
            "sample_count": self.sample_count,
        }


@dataclass(frozen=True)
class AttentionReport:
    session_id: str
    lecture_id: str
    generated_at_ms: int
    per_minute_coverage: tuple[float, ...]
    sections: tuple[SectionMetrics, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "lecture_id": self.lecture_id,
            "generated_at_ms": self.generated_at_ms,
            "per_minute_coverage": list(self.per_minute_coverage),
            "sections": [s.to_dict() for s in self.sections],
        }

    def to_json(self) -> str:
        return dumps_canonical(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "AttentionReport":
        sections = tuple(
            SectionMetrics(
                index=int(s["index"]),
                start_ms=int(s["start_ms"]),
                end_ms=int(s["end_ms"]),
                aoi_coverage=float(s["aoi_coverage"]),
                attention_switches=int(s["attention_switches"]),
                switch_rate_per_min=float(s["switch_rate_per_min"]),
                adi=float(s["adi"]),
                valid=bool(s["valid"]),
                sample_count=int(s["sample_count"]),
            )
            for s in data["sections"]
        )
        return cls(
            session_id=str(data["session_id"]),
            lecture_id=str(data["lecture_id"]),
            generated_at_ms=int(data["generated_at_ms"]),
            per_minute_coverage=tuple(float(x) for x in data["per_minute_coverage"]),
            sections=sections,
        )

    def adis(self) -> list[float]:
        return [s.adi for s in self.sections]


def _dump(value, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    close = " " * (indent * level)
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format6(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_dump(v, indent, level + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + close + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in value):
            return "[" + ", ".join(_dump(v, indent, level + 1) for v in value) + "]"
        return "[\n" + ",\n".join(pad + _dump(v, indent, level + 1) for v in value) + "\n" + close + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps_canonical(obj, indent: int = 2) -> str:
    """JSON text with insertion-ordered keys and floats rounded to 6 digits."""
    return _dump(obj, indent, 0) + "\n"


def section_metrics(
    labeled: LabeledTrace,
    timeline: LectureTimeline,
    config: EngineConfig | None = None,
    learning_labels: Iterable[str] = ("slides", "lecturer"),
    *,
    session_id: str = "",
    generated_at_ms: int | None = None,
) -> AttentionReport:
    """Compute per-section and per-minute attention metrics for one trace.

    Sections with fewer than ``min_section_sample_fraction`` of the expected
    sample count are kept but flagged ``valid=False``. ``generated_at_ms``
    defaults to the lecture duration so reports are reproducible.
    """
    config = config or EngineConfig()
    learn = frozenset(learning_labels)
    segments = build_dwell_segments(labeled, config)
    t = np.asarray(labeled.t_ms)
    sections = []
    for sec in timeline.sections:
        dur = sec.duration_ms
        cov = coverage(segments, sec.start_ms, sec.end_ms, learn)
        switches = count_switches(segments, (sec.start_ms, sec.end_ms), include_away=config.count_away_switches)
        rate = switches / (dur / MINUTE_MS)
        count = int(np.searchsorted(t, sec.end_ms, "left") - np.searchsorted(t, sec.start_ms, "left"))
        expected = config.min_section_sample_fraction * config.nominal_rate_hz * dur / 1000.0
        sections.append(
            SectionMetrics(
                index=sec.index,
                start_ms=sec.start_ms,
                end_ms=sec.end_ms,
                aoi_coverage=round6(cov),
                attention_switches=switches,
                switch_rate_per_min=round6(rate),
                adi=round6(adi(cov, rate, config)),
                valid=count >= expected,
                sample_count=count,
            )
        )
    pmc = tuple(round6(c) for c in per_minute_coverage(segments, timeline.duration_ms, learn))
    return AttentionReport(
        session_id=session_id,
        lecture_id=timeline.lecture_id,
        generated_at_ms=timeline.duration_ms if generated_at_ms is None else int(generated_at_ms),
        per_minute_coverage=pmc,
        sections=tuple(sections),
    )


def _angles(directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(directions, dtype=float)
    yaw = np.degrees(np.arctan2(d[:, 0], -d[:, 2]))
    pitch = np.degrees(np.arcsin(np.clip(d[:, 1], -1.0, 1.0)))
    return yaw, pitch


def fixation_windows(t_ms, yaw, pitch, dispersion_deg: float, min_duration_ms: int) -> list[tuple[int, int]]:
    """Dispersion-threshold (I-DT) fixations as inclusive index ranges."""
    t = np.asarray(t_ms)
    n = len(t)
    out = []
    i = 0
    while i < n:
        j = int(np.searchsorted(t, t[i] + min_duration_ms, "left"))
        if j >= n:
            break
        ymin, ymax = yaw[i : j + 1].min(), yaw[i : j + 1].max()
        pmin, pmax = pitch[i : j + 1].min(), pitch[i : j + 1].max()
        if (ymax - ymin) + (pmax - pmin) > dispersion_deg:
            i += 1
            continue
        while j + 1 < n:
            ny0, ny1 = min(ymin, yaw[j + 1]), max(ymax, yaw[j + 1])
            np0, np1 = min(pmin, pitch[j + 1]), max(pmax, pitch[j + 1])
            if (ny1 - ny0) + (np1 - np0) > dispersion_deg:
                break
            ymin, ymax, pmin, pmax = ny0, ny1, np0, np1
            j += 1
        out.append((i, j))
        i = j + 1
    return out


def fixation_filter(labeled: LabeledTrace, dispersion_deg: float = 1.0, min_duration_ms: int = 100) -> LabeledTrace:
    """Relabel samples outside any I-DT fixation as ``"away"``.

    Fixations never span invalid samples. Needs gaze directions, so traces
    that came from pre-labeled logs are rejected.
    """
    if labeled.directions is None:
        raise InapplicableError("fixation filtering needs gaze directions (GEOMETRIC logs)")
    n = len(labeled)
    keep = np.zeros(n, dtype=bool)
    yaw, pitch = _angles(labeled.directions)
    valid = np.asarray(labeled.valid, dtype=bool)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], valid.view(np.int8), [0]])))
    for a, b in zip(edges[::2], edges[1::2]):
        for i, j in fixation_windows(labeled.t_ms[a:b], yaw[a:b], pitch[a:b], dispersion_deg, min_duration_ms):
            keep[a + i : a + j + 1] = True
    labels = labeled.labels.copy()
    labels[~keep] = AWAY
    return LabeledTrace(labeled.t_ms, labels, labeled.valid, labeled.directions)
