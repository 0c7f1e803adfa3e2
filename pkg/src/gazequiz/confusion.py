"""Per-section confusion scoring from post-lecture chat messages."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import EngineConfig, LectureDescriptor, LectureTimeline
from .quiz import PlanMode, QuizPlan, allocate_by_weight
from .retrieval import cosine

GENERAL = None
ATTRIBUTION_THRESHOLD = 0.2

DEFAULT_LEXICON = (
    "confused",
    "confusing",
    "don't understand",
    "do not understand",
    "don't get",
    "do not get",
    "not sure",
    "unclear",
    "lost",
    "no idea",
    "makes no sense",
    "doesn't make sense",
    "stuck",
    "struggling",
    "difficult",
    "hard to follow",
    "maybe",
    "i think",
    "i guess",
    "what does",
    "what is",
    "why",
    "how come",
    "huh",
)


class Author(str, Enum):
    USER = "USER"
    ASSISTANT = "ASSISTANT"


@dataclass(frozen=True)
class ChatMessage:
    t_ms: int
    author: Author
    text: str

    def __post_init__(self):
        object.__setattr__(self, "author", Author(self.author))

    def to_dict(self) -> dict:
        return {"t_ms": self.t_ms, "author": self.author.value, "text": self.text}

    @classmethod
    def from_dict(cls, data: dict) -> "ChatMessage":
        return cls(int(data["t_ms"]), Author(data["author"]), str(data["text"]))


def read_chat_log(path: str | Path) -> list[ChatMessage]:
    p = Path(path)
    if not p.exists():
        return []
    return [ChatMessage.from_dict(json.loads(line)) for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_lexicon(path: str | Path) -> tuple[str, ...]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list) or not data or not all(isinstance(m, str) and m.strip() for m in data):
        raise ValueError(f"{path}: lexicon must be a nonempty JSON array of strings")
    return tuple(data)


@dataclass(frozen=True)
class SectionProfile:
    index: int
    embedding: np.ndarray


def section_profiles(descriptor: LectureDescriptor, embedder) -> list[SectionProfile]:
    out = []
    for sec in descriptor.timeline.sections:
        info = descriptor.section_info(sec.index)
        out.append(SectionProfile(sec.index, np.asarray(embedder.embed(f"{info.title} {info.content_text}"))))
    return out


def attribute_message(message: ChatMessage | str, profiles: Sequence[SectionProfile], embedder, threshold: float = ATTRIBUTION_THRESHOLD):
    """Section whose profile is most similar to the message, or ``GENERAL``.

    Ties go to the lower section index.
    """
    text = message.text if isinstance(message, ChatMessage) else message
    q = embedder.embed(text)
    best, best_sim = GENERAL, -math.inf
    for prof in profiles:
        sim = cosine(q, prof.embedding)
        if sim > best_sim:
            best, best_sim = prof.index, sim
    if best_sim < threshold:
        return GENERAL
    return best


def _marker_pattern(marker: str) -> re.Pattern:
    words = [re.escape(w) for w in marker.lower().split()]
    return re.compile(r"(?<!\w)" + r"\s+".join(words) + r"(?!\w)")


def marker_hits(text: str, lexicon: Iterable[str]) -> int:
    lowered = text.lower().replace("’", "'")
    return sum(len(_marker_pattern(m).findall(lowered)) for m in lexicon)


def message_score(text: str, lexicon: Iterable[str] = DEFAULT_LEXICON) -> float:
    evidence = marker_hits(text, lexicon) + text.count("?")
    return 1.0 - math.exp(-evidence / 2.0)


def confusion_score(messages: Sequence[ChatMessage | str], lexicon: Iterable[str] = DEFAULT_LEXICON) -> float:
    """Mean saturating score over user messages; 0 when there are none."""
    lexicon = tuple(lexicon)
    if not lexicon:
        raise ValueError("lexicon must be nonempty")
    texts = []
    for m in messages:
        if isinstance(m, ChatMessage):
            if m.author is not Author.USER or not m.text.strip():
                continue
            texts.append(m.text)
        elif m.strip():
            texts.append(m)
    if not texts:
        return 0.0
    return sum(message_score(t, lexicon) for t in texts) / len(texts)


@dataclass(frozen=True)
class ConfusionReport:
    session_id: str
    confusion: tuple[tuple[int, float], ...]
    message_counts: tuple[tuple[int, int], ...]
    general_count: int

    def to_dict(self) -> dict:
        counts = dict(self.message_counts)
        return {
            "session_id": self.session_id,
            "general_count": self.general_count,
            "sections": [
                {"index": i, "confusion": c, "message_count": counts.get(i, 0)} for i, c in self.confusion
            ],
        }


def confusion_report(
    messages: Sequence[ChatMessage],
    descriptor: LectureDescriptor,
    embedder,
    lexicon: Iterable[str] = DEFAULT_LEXICON,
    session_id: str = "",
) -> ConfusionReport:
    profiles = section_profiles(descriptor, embedder)
    buckets: dict[int, list[ChatMessage]] = {s.index: [] for s in descriptor.timeline.sections}
    general = 0
    for m in messages:
        if m.author is not Author.USER or not m.text.strip():
            continue
        target = attribute_message(m, profiles, embedder)
        if target is GENERAL:
            general += 1
        else:
            buckets[target].append(m)
    lexicon = tuple(lexicon)
    return ConfusionReport(
        session_id=session_id,
        confusion=tuple((i, confusion_score(ms, lexicon)) for i, ms in buckets.items()),
        message_counts=tuple((i, len(ms)) for i, ms in buckets.items()),
        general_count=general,
    )


def chatquiz_plan(report: ConfusionReport, timeline: LectureTimeline, config: EngineConfig | None = None) -> QuizPlan:
    """Largest-remainder plan weighted by confusion; uniform when nobody was confused."""
    config = config or EngineConfig()
    scores = dict(report.confusion)
    indices = [s.index for s in timeline.sections]
    allocation = allocate_by_weight(indices, [max(0.0, scores.get(i, 0.0)) for i in indices], indices, config.question_count)
    return QuizPlan(
        session_id=report.session_id,
        mode=PlanMode.CONFUSION,
        allocation=tuple(allocation),
        difficulty=config.quiz_difficulty,
        total=config.question_count,
    )
