"""Quiz planning, prompt assembly, generation and grading.

Question counts are apportioned across lecture sections by the largest
remainder method over per-section weights (attention deficit ``1 - adi`` for
lecture quizzes, confusion for chat quizzes).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    AdapterError,
    EmptyPlanError,
    InvariantError,
    MalformedGenerationError,
    MissingGroundingError,
    NoValidSectionError,
)
from .metrics import AttentionReport
from .model import EngineConfig, LectureDescriptor, LectureTimeline
from .retrieval import Chunk

REQUEST_MARKER = "QUIZ_REQUEST:"
DIFFICULTIES = ("easy", "medium", "hard")


class PlanMode(str, Enum):
    ATTENTIVE = "ATTENTIVE"
    RANDOM = "RANDOM"
    CONFUSION = "CONFUSION"


class ItemKind(str, Enum):
    MCQ = "MCQ"
    SHORT_ANSWER = "SHORT_ANSWER"


@dataclass(frozen=True)
class QuizPlan:
    session_id: str
    mode: PlanMode
    allocation: tuple[tuple[int, int], ...]
    difficulty: str = "medium"
    total: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", PlanMode(self.mode))
        object.__setattr__(self, "allocation", tuple((int(i), int(c)) for i, c in self.allocation))
        if any(c < 0 for _, c in self.allocation):
            raise InvariantError("question counts must be non-negative")
        if sum(c for _, c in self.allocation) != self.total:
            raise InvariantError("allocation does not sum to total")
        indices = [i for i, _ in self.allocation]
        if len(set(indices)) != len(indices):
            raise InvariantError("a section appears twice in the allocation")
        if self.difficulty not in DIFFICULTIES:
            raise InvariantError(f"unknown difficulty {self.difficulty!r}")

    @property
    def counts(self) -> list[int]:
        return [c for _, c in self.allocation]

    def count_for(self, section_index: int) -> int:
        return dict(self.allocation).get(section_index, 0)

    def targeted(self) -> list[tuple[int, int]]:
        return [(i, c) for i, c in self.allocation if c > 0]

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "mode": self.mode.value,
            "difficulty": self.difficulty,
            "total": self.total,
            "allocation": [{"section_index": i, "question_count": c} for i, c in self.allocation],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuizPlan":
        return cls(
            session_id=data["session_id"],
            mode=PlanMode(data["mode"]),
            allocation=tuple((a["section_index"], a["question_count"]) for a in data["allocation"]),
            difficulty=data.get("difficulty", "medium"),
            total=data["total"],
        )


@dataclass(frozen=True)
class QuizItem:
    id: str
    section_index: int
    kind: ItemKind
    stem: str
    answer_key: str
    options: tuple[str, ...] | None = None
    grounding_chunk_ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", ItemKind(self.kind))
        if not isinstance(self.stem, str) or not self.stem.strip():
            raise InvariantError("item stem is empty")
        if not isinstance(self.answer_key, str) or not self.answer_key.strip():
            raise InvariantError("item answer key is empty")
        if self.options is not None:
            if isinstance(self.options, str) or not all(isinstance(o, str) for o in self.options):
                raise InvariantError("options must be a list of strings")
            object.__setattr__(self, "options", tuple(self.options))
        if self.kind is ItemKind.MCQ:
            if self.options is None or len(self.options) < 2:
                raise InvariantError("MCQ needs at least two options")
            if self.answer_key not in self.options:
                raise InvariantError("MCQ answer key is not among the options")
        object.__setattr__(self, "grounding_chunk_ids", tuple(self.grounding_chunk_ids))

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "section_index": self.section_index,
            "kind": self.kind.value,
            "stem": self.stem,
        }
        if self.options is not None:
            out["options"] = list(self.options)
        out["answer_key"] = self.answer_key
        out["grounding_chunk_ids"] = list(self.grounding_chunk_ids)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "QuizItem":
        opts = data.get("options")
        return cls(
            id=str(data["id"]),
            section_index=int(data["section_index"]),
            kind=ItemKind(data["kind"]),
            stem=data["stem"],
            answer_key=data["answer_key"],
            options=None if opts is None else tuple(opts),
            grounding_chunk_ids=tuple(data.get("grounding_chunk_ids", ())),
        )


@dataclass(frozen=True)
class GradeResult:
    item_id: str
    correct: bool
    score: float
    rationale: str = ""

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvariantError("score must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"item_id": self.item_id, "correct": self.correct, "score": self.score, "rationale": self.rationale}


# --- apportionment -------------------------------------------------------------


def _exact(x) -> Fraction:
    # repr gives the shortest decimal that round-trips, so 0.9 -> 9/10 exactly
    return x if isinstance(x, Fraction) else Fraction(repr(float(x)))


def largest_remainder(weights: Sequence, total: int) -> list[int]:
    """Integer apportionment of ``total`` proportional to ``weights``.

    Floors of the exact quotas first, then one extra seat each by descending
    fractional remainder, lower position first on ties. All-zero weights
    apportion uniformly.
    """
    if total < 0:
        raise ValueError("total must be non-negative")
    w = [_exact(x) for x in weights]
    if not w:
        if total:
            raise ValueError("cannot apportion seats over no weights")
        return []
    if any(x < 0 for x in w):
        raise ValueError("weights must be non-negative")
    s = sum(w)
    if s == 0:
        w = [Fraction(1)] * len(w)
        s = Fraction(len(w))
    quotas = [total * x / s for x in w]
    seats = [q.numerator // q.denominator for q in quotas]
    leftover = total - sum(seats)
    order = sorted(range(len(w)), key=lambda i: (-(quotas[i] - seats[i]), i))
    for i in order[:leftover]:
        seats[i] += 1
    return seats


def allocate_by_weight(indices: Sequence[int], weights: Sequence, all_indices: Sequence[int], total: int) -> list[tuple[int, int]]:
    seats = dict(zip(indices, largest_remainder(weights, total)))
    return [(i, seats.get(i, 0)) for i in all_indices]


def allocate_questions(report: AttentionReport, config: EngineConfig | None = None, session_id: str | None = None) -> QuizPlan:
    """Attention-personalized plan: more questions where ``1 - adi`` is larger.

    Sections flagged invalid get no questions.
    """
    config = config or EngineConfig()
    valid = [s for s in report.sections if s.valid]
    if not valid:
        raise NoValidSectionError("report has no valid sections")
    deficits = [max(Fraction(0), 1 - _exact(s.adi)) for s in valid]
    allocation = allocate_by_weight(
        [s.index for s in valid], deficits, [s.index for s in report.sections], config.question_count
    )
    return QuizPlan(
        session_id=report.session_id if session_id is None else session_id,
        mode=PlanMode.ATTENTIVE,
        allocation=tuple(allocation),
        difficulty=config.quiz_difficulty,
        total=config.question_count,
    )


def allocate_random(timeline: LectureTimeline, config: EngineConfig | None = None, seed: int | None = None, session_id: str = "") -> QuizPlan:
    """Control-condition plan: each question goes to a uniformly random section."""
    config = config or EngineConfig()
    seed = config.rng_seed if seed is None else seed
    rng = np.random.default_rng(int(seed) & (2**64 - 1))
    n = len(timeline.sections)
    picks = rng.integers(0, n, size=config.question_count)
    counts = np.bincount(picks, minlength=n)
    return QuizPlan(
        session_id=session_id,
        mode=PlanMode.RANDOM,
        allocation=tuple((s.index, int(counts[k])) for k, s in enumerate(timeline.sections)),
        difficulty=config.quiz_difficulty,
        total=config.question_count,
    )


# --- prompts ---------------------------------------------------------------------


def _clock(ms: int) -> str:
    sec = ms // 1000
    return f"{sec // 60:02d}:{sec % 60:02d}"


OUTPUT_FORMAT = (
    'Respond with JSON only, shaped as {"items": [{"section_index": <int>, '
    '"kind": "MCQ" or "SHORT_ANSWER", "stem": <string>, "options": [<string>, ...], '
    '"answer_key": <string>}]}. "options" is required for MCQ and omitted otherwise; '
    "an MCQ answer_key must equal one of its options. Produce exactly the requested "
    "number of questions for each section and no others."
)


def build_quiz_prompt(
    plan: QuizPlan,
    descriptor: LectureDescriptor,
    grounding: Mapping[int, Sequence[Chunk]],
    config: EngineConfig | None = None,
) -> str:
    """Deterministic generation prompt for ``plan``.

    Each targeted section lists its title, time range, question count,
    difficulty and grounding excerpts (by chunk id). The trailing request
    line is machine-readable.
    """
    if plan.total == 0:
        raise EmptyPlanError("plan requests zero questions")
    targeted = plan.targeted()
    for index, _ in targeted:
        if not grounding.get(index):
            raise MissingGroundingError(index)
    lines = [
        f"Write {plan.total} post-lecture quiz questions for lecture {descriptor.lecture_id!r}.",
        f"Overall difficulty: {plan.difficulty}.",
        "Only use the lecture excerpts given for each section.",
        "",
    ]
    request = []
    for index, count in targeted:
        sec = descriptor.timeline.section(index)
        info = descriptor.section_info(index)
        title = info.title or f"Section {index}"
        lines.append(f"## Section {index}: {title} ({_clock(sec.start_ms)}-{_clock(sec.end_ms)})")
        lines.append(f"Questions requested: {count}")
        lines.append(f"Difficulty: {plan.difficulty}")
        lines.append("Excerpts:")
        for chunk in sorted(grounding[index], key=lambda c: c.id):
            lines.append(f"[{chunk.id}] {chunk.text}")
        lines.append("")
        request.append({"section_index": index, "count": count, "title": title})
    lines.append("## Output format")
    lines.append(OUTPUT_FORMAT)
    payload = {"difficulty": plan.difficulty, "total": plan.total, "sections": request}
    lines.append(f"{REQUEST_MARKER} {json.dumps(payload, sort_keys=True, ensure_ascii=False)}")
    return "\n".join(lines) + "\n"


def parse_quiz_request(prompt: str) -> dict:
    """Recover the machine-readable request line from a quiz prompt."""
    for line in reversed(prompt.splitlines()):
        if line.startswith(REQUEST_MARKER):
            return json.loads(line[len(REQUEST_MARKER):])
    raise ValueError("prompt has no quiz request line")


def grounding_for_plan(plan: QuizPlan, store, limit: int = 3) -> dict[int, list[Chunk]]:
    """First ``limit`` chunks (by id) of each targeted section in ``store``."""
    return {index: store.for_section(index)[:limit] for index, _ in plan.targeted()}


# --- generation and grading ----------------------------------------------------------


def _item_from_raw(raw, item_id: str, grounding_ids) -> QuizItem:
    if not isinstance(raw, dict):
        raise InvariantError("item is not an object")
    try:
        return QuizItem(
            id=item_id,
            section_index=int(raw["section_index"]),
            kind=ItemKind(raw["kind"]),
            stem=raw["stem"],
            answer_key=raw["answer_key"],
            options=raw.get("options"),
            grounding_chunk_ids=grounding_ids,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvariantError(f"malformed item: {exc}") from exc


def generate_quiz(
    plan: QuizPlan,
    adapter,
    prompt: str,
    grounding: Mapping[int, Sequence[Chunk]] | None = None,
    retries: int = 2,
) -> list[QuizItem]:
    """Ask ``adapter`` for items until every section's count is filled.

    Items that break :class:`QuizItem` invariants or target unplanned
    sections are discarded; after ``retries`` extra requests the shortfall
    raises :class:`MalformedGenerationError`.
    """
    need = {i: c for i, c in plan.targeted()}
    got: dict[int, list[QuizItem]] = {i: [] for i in need}
    grounding = grounding or {}
    rejected = 0
    for _attempt in range(retries + 1):
        response = adapter.generate(prompt, plan.total)
        raw_items = response.get("items") if isinstance(response, dict) else None
        if not isinstance(raw_items, list):
            rejected += 1
            continue
        for raw in raw_items:
            try:
                item = _item_from_raw(raw, "", ())
            except InvariantError:
                rejected += 1
                continue
            bucket = got.get(item.section_index)
            if bucket is not None and len(bucket) < need[item.section_index]:
                bucket.append(item)
        if all(len(got[i]) == need[i] for i in need):
            break
    else:
        short = {i: need[i] - len(got[i]) for i in need if len(got[i]) < need[i]}
        raise MalformedGenerationError(f"after {retries + 1} attempts still missing {short} ({rejected} items rejected)")
    items = []
    for index in sorted(got):
        chunk_ids = tuple(sorted(c.id for c in grounding.get(index, ())))
        for item in got[index]:
            items.append(replace(item, id=f"q{len(items) + 1}", grounding_chunk_ids=chunk_ids))
    return items


def normalize_answer(text: str) -> str:
    return " ".join(text.split()).casefold()


def grade(item: QuizItem, response: str, adapter=None) -> GradeResult:
    """MCQ answers are compared to the key locally; short answers go to ``adapter``."""
    if not isinstance(response, str) or not response.strip():
        raise ValueError("response is empty")
    if item.kind is ItemKind.MCQ:
        ok = normalize_answer(response) == normalize_answer(item.answer_key)
        why = "matches the answer key" if ok else f"expected {item.answer_key!r}"
        return GradeResult(item.id, ok, 1.0 if ok else 0.0, why)
    if adapter is None:
        raise AdapterError("short-answer grading needs an adapter")
    out = adapter.grade(item.stem, item.answer_key, response)
    try:
        score = float(out["score"])
        correct = out["correct"]
        if not isinstance(correct, bool) or not 0.0 <= score <= 1.0:
            raise ValueError("bad grading payload")
        return GradeResult(item.id, correct, score, str(out.get("rationale", "")))
    except (KeyError, TypeError, ValueError) as exc:
        raise AdapterError(f"malformed grading response: {exc}") from exc


@dataclass
class Quiz:
    plan: QuizPlan
    items: list[QuizItem] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"plan": self.plan.to_dict(), "items": [i.to_dict() for i in self.items]}

    @classmethod
    def from_dict(cls, data: dict) -> "Quiz":
        return cls(QuizPlan.from_dict(data["plan"]), [QuizItem.from_dict(i) for i in data["items"]])

    def item(self, item_id: str) -> QuizItem | None:
        return next((i for i in self.items if i.id == item_id), None)
