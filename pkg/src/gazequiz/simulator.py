"""Seeded synthetic gaze traces for end-to-end checks.

Each section is a sequence of dwell segments with exponential lengths. A
segment targets a learning-related AOI with the section's on-AOI
probability and a distractor otherwise. The intended label of every sample
is recoverable, which makes closed-loop tests against the geometry possible.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import ray_distance
from .ingest import Mode
from .model import AWAY, AoiDefinition, Box, LectureTimeline, Rectangle

HEAD = (0.0, 1.6, 0.0)
_MAX_TRIES = 200


@dataclass(frozen=True)
class SectionProfile:
    on_aoi_probability: float
    mean_dwell_ms: float = 1000.0
    distractor_labels: tuple[str, ...] = (AWAY,)
    target_labels: tuple[str, ...] = ()  # empty: any learning AOI

    def __post_init__(self):
        if not 0.0 <= self.on_aoi_probability <= 1.0:
            raise ValueError("on_aoi_probability must lie in [0, 1]")
        if not self.mean_dwell_ms > 0:
            raise ValueError("mean_dwell_ms must be positive")
        object.__setattr__(self, "distractor_labels", tuple(self.distractor_labels) or (AWAY,))
        object.__setattr__(self, "target_labels", tuple(self.target_labels))


@dataclass(frozen=True)
class AttentionProfile:
    sections: tuple[SectionProfile, ...]
    sample_rate_hz: float = 60.0
    seed: int = 0
    head: tuple[float, float, float] = HEAD

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")

    @classmethod
    def from_probabilities(cls, probs, *, mean_dwell_ms: float = 1000.0, distractors=(AWAY,), sample_rate_hz: float = 60.0, seed: int = 0):
        return cls(tuple(SectionProfile(p, mean_dwell_ms, tuple(distractors)) for p in probs), sample_rate_hz, seed)

    @classmethod
    def from_dict(cls, data: dict) -> "AttentionProfile":
        defaults = {k: data[k] for k in ("mean_dwell_ms", "distractor_labels", "target_labels") if k in data}
        sections = []
        for sec in data["sections"]:
            merged = {**defaults, **sec}
            sections.append(
                SectionProfile(
                    float(merged["on_aoi_probability"]),
                    float(merged.get("mean_dwell_ms", 1000.0)),
                    tuple(merged.get("distractor_labels", (AWAY,))),
                    tuple(merged.get("target_labels", ())),
                )
            )
        return cls(
            tuple(sections),
            float(data.get("sample_rate_hz", 60.0)),
            int(data.get("seed", 0)),
            tuple(data.get("head", HEAD)),
        )

    def to_dict(self) -> dict:
        return {
            "sample_rate_hz": self.sample_rate_hz,
            "seed": self.seed,
            "head": list(self.head),
            "sections": [
                {
                    "on_aoi_probability": s.on_aoi_probability,
                    "mean_dwell_ms": s.mean_dwell_ms,
                    "distractor_labels": list(s.distractor_labels),
                    "target_labels": list(s.target_labels),
                }
                for s in self.sections
            ],
        }


def load_profile(path: str | Path) -> AttentionProfile:
    return AttentionProfile.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class SimulatedTrace:
    """Sample times with the label each sample was generated to hit."""

    t_ms: np.ndarray
    intended: list[str]
    csv: bytes
    rays: np.ndarray | None = field(default=None, repr=False)


def sample_times(duration_ms: int, rate_hz: float) -> np.ndarray:
    n = int(np.ceil(duration_ms * rate_hz / 1000.0))
    t = np.round(np.arange(n) * (1000.0 / rate_hz)).astype(np.int64)
    return t[t < duration_ms]


def _intended_segments(profile: AttentionProfile, timeline: LectureTimeline, learning: list[str], rng) -> list[tuple[int, int, str]]:
    segs = []
    for sec, prof in zip(timeline.sections, profile.sections):
        t = float(sec.start_ms)
        while t < sec.end_ms:
            dwell = max(1.0, rng.exponential(prof.mean_dwell_ms))
            on = rng.random() < prof.on_aoi_probability
            targets = list(prof.target_labels) or learning
            pool = targets if on and targets else list(prof.distractor_labels)
            label = pool[int(rng.integers(len(pool)))]
            end = min(float(sec.end_ms), t + dwell)
            segs.append((int(np.ceil(t)), int(np.ceil(end)), label))
            t = end
    return [(a, b, lab) for a, b, lab in segs if b > a]


def _point_in(aoi: AoiDefinition, rng) -> np.ndarray:
    if isinstance(aoi.shape, Rectangle):
        a, b = rng.uniform(-0.9, 0.9, size=2)
        return np.asarray(aoi.shape.center) + a * np.asarray(aoi.shape.half_u) + b * np.asarray(aoi.shape.half_v)
    lo, hi = np.asarray(aoi.shape.min), np.asarray(aoi.shape.max)
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    return mid + rng.uniform(-0.9, 0.9, size=3) * half


def _nearest(origin, direction, aois) -> str:
    best, best_d = AWAY, np.inf
    for aoi in aois:
        d = ray_distance(origin, direction, aoi)
        if d is not None and d < best_d:
            best, best_d = aoi.label, d
    return best


def _aim(label: str, origin: np.ndarray, aois, by_label, rng) -> np.ndarray:
    """Unit direction from ``origin`` whose nearest hit is ``label``."""
    for _ in range(_MAX_TRIES):
        if label == AWAY:
            d = rng.normal(size=3)
        else:
            d = _point_in(by_label[label], rng) - origin
        norm = np.linalg.norm(d)
        if norm == 0:
            continue
        d = d / norm
        if _nearest(tuple(origin), tuple(d), aois) == label:
            return d
    raise ValueError(f"could not aim a gaze ray at {label!r} from {tuple(origin)}; is it occluded?")


def simulate(
    profile: AttentionProfile,
    timeline: LectureTimeline,
    aois: list[AoiDefinition] | tuple[AoiDefinition, ...],
    mode: Mode | str = Mode.LABELED,
) -> SimulatedTrace:
    """Generate a gaze CSV (same seed, same bytes).

    GEOMETRIC output holds one ray per dwell segment, re-aimed until the
    intended AOI is the nearest hit.
    """
    mode = Mode(mode.upper() if isinstance(mode, str) else mode)
    if len(profile.sections) != len(timeline.sections):
        raise ValueError(f"profile has {len(profile.sections)} sections, timeline {len(timeline.sections)}")
    by_label = {a.label: a for a in aois}
    learning = [a.label for a in aois if a.learning_related]
    for prof in profile.sections:
        for lab in prof.distractor_labels:
            if lab != AWAY and lab not in by_label:
                raise ValueError(f"distractor {lab!r} is not a declared AOI")
        for lab in prof.target_labels:
            if lab not in learning:
                raise ValueError(f"target {lab!r} is not a learning-related AOI")
    rng = np.random.default_rng(int(profile.seed) & (2**64 - 1))
    segs = _intended_segments(profile, timeline, learning, rng)
    t = sample_times(timeline.duration_ms, profile.sample_rate_hz)
    seg_starts = np.array([s[0] for s in segs])
    which = np.searchsorted(seg_starts, t, side="right") - 1
    intended = [segs[k][2] for k in which]

    out = io.StringIO()
    if mode is Mode.LABELED:
        out.write("t_ms,target\n")
        for ti, lab in zip(t.tolist(), intended):
            out.write(f"{ti},{lab}\n")
        return SimulatedTrace(t, intended, out.getvalue().encode("utf-8"))

    origin = np.asarray(profile.head, dtype=float)
    seg_dirs = np.array([_aim(lab, origin, aois, by_label, rng) for _, _, lab in segs]).reshape(-1, 3)
    dirs = seg_dirs[which]
    o_txt = ",".join(repr(float(v)) for v in origin)
    out.write("t_ms,ox,oy,oz,dx,dy,dz\n")
    for ti, d in zip(t.tolist(), dirs.tolist()):
        out.write(f"{ti},{o_txt},{d[0]!r},{d[1]!r},{d[2]!r}\n")
    rays = np.hstack([np.tile(origin, (len(t), 1)), dirs])
    return SimulatedTrace(t, intended, out.getvalue().encode("utf-8"), rays)


def demo_scene() -> list[AoiDefinition]:
    """Slides in front, a lecturer box to the left, a peer box to the right."""
    return [
        AoiDefinition("slides", Rectangle((0.0, 1.8, -4.0), (1.6, 0.0, 0.0), (0.0, 0.9, 0.0)), True),
        AoiDefinition("lecturer", Box((-3.2, 0.0, -4.0), (-2.2, 1.9, -3.4)), True),
        AoiDefinition("peer", Box((2.2, 0.0, -2.5), (3.0, 1.3, -1.7)), False),
    ]
