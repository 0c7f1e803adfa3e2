"""HTTP service: one directory per session, state derived from its files.

Session directory layout::

    session.json      id, lecture, group mode, creation time
    gaze.csv          uploaded log                 -> GAZE_UPLOADED
    metrics.json      attention report             -> METRICS_READY
    quiz_plan.json    allocation
    quiz.json         plan + generated items       -> QUIZ_READY
    chat.jsonl        chat log (append-only)
    chatquiz.json     confusion report + plan + items
    grades.jsonl      grading results (append-only)
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from fastapi.concurrency import run_in_threadpool

from .adapters import make_adapter
from .confusion import (
    DEFAULT_LEXICON,
    Author,
    ChatMessage,
    chatquiz_plan,
    confusion_report,
    load_lexicon,
    read_chat_log,
)
from .errors import (
    AdapterError,
    EmptyPlanError,
    EmptyTraceError,
    IngestError,
    MalformedGenerationError,
    MissingGroundingError,
    NoValidSectionError,
    UnknownLabelError,
)
from .metrics import AttentionReport, dumps_canonical
from .model import EngineConfig, LectureDescriptor, load_lecture
from .pipeline import analyze_csv, seed_from_session
from .quiz import (
    Quiz,
    allocate_questions,
    allocate_random,
    build_quiz_prompt,
    generate_quiz,
    grade,
    grounding_for_plan,
)
from .retrieval import HashEmbedder, KnowledgeStore, RemoteEmbedder, build_grounded_prompt, search, store_from_descriptor

log = logging.getLogger(__name__)

GROUP_MODES = ("ATTENTIVE", "RANDOM")
CHAT_TOP_K = 3


class State(IntEnum):
    CREATED = 0
    GAZE_UPLOADED = 1
    METRICS_READY = 2
    QUIZ_READY = 3


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail=None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail

    def body(self) -> dict:
        out = {"code": self.code, "message": self.message}
        if self.detail is not None:
            out["detail"] = self.detail
        return out


@dataclass
class ServiceConfig:
    lectures_dir: Path
    data_dir: Path
    listen: str = "127.0.0.1:8000"
    adapter: str = "mock"
    embedder: dict | str = "hash"
    engine: EngineConfig = field(default_factory=EngineConfig)
    lexicon: tuple[str, ...] = DEFAULT_LEXICON

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "ServiceConfig":
        base = base or Path.cwd()

        def path(key, default=None):
            value = data.get(key, default)
            if value is None:
                raise ValueError(f"config needs {key!r}")
            p = Path(value)
            return p if p.is_absolute() else base / p

        lexicon = load_lexicon(path("lexicon")) if data.get("lexicon") else DEFAULT_LEXICON
        return cls(
            lectures_dir=path("lectures_dir"),
            data_dir=path("data_dir", "data"),
            listen=data.get("listen", "127.0.0.1:8000"),
            adapter=data.get("adapter", "mock"),
            embedder=data.get("embedder", "hash"),
            engine=EngineConfig.from_dict(data.get("engine")),
            lexicon=lexicon,
        )

    @classmethod
    def load(cls, path: str | Path) -> "ServiceConfig":
        p = Path(path)
        return cls.from_dict(json.loads(p.read_text(encoding="utf-8")), p.parent)

    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        return host or "127.0.0.1", int(port)


def make_embedder(setting):
    if setting in (None, "hash"):
        return HashEmbedder()
    if isinstance(setting, dict) and "url" in setting:
        return RemoteEmbedder(setting["url"], int(setting["dimension"]))
    raise ValueError(f"unknown embedder {setting!r}")


def write_atomic(path: Path, data: bytes | str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def append_line(path: Path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


@dataclass
class SessionRecord:
    session_id: str
    lecture_id: str
    group_mode: str
    created_at: float
    directory: Path

    @property
    def state(self) -> State:
        d = self.directory
        if (d / "quiz.json").exists():
            return State.QUIZ_READY
        if (d / "metrics.json").exists():
            return State.METRICS_READY
        if (d / "gaze.csv").exists():
            return State.GAZE_UPLOADED
        return State.CREATED

    def artifacts(self) -> dict:
        names = ("gaze.csv", "metrics.json", "quiz_plan.json", "quiz.json", "chat.jsonl", "chatquiz.json", "grades.jsonl")
        return {n: str(self.directory / n) for n in names if (self.directory / n).exists()}

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "lecture_id": self.lecture_id,
            "group_mode": self.group_mode,
            "state": self.state.name,
            "artifacts": sorted(self.artifacts()),
        }


class SessionStore:
    """File-backed sessions; rebuilt from the directory tree on start."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, SessionRecord] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        for meta in sorted(self.root.glob("*/session.json")):
            try:
                data = json.loads(meta.read_text(encoding="utf-8"))
                rec = SessionRecord(data["session_id"], data["lecture_id"], data["group_mode"], data["created_at"], meta.parent)
            except (OSError, ValueError, KeyError) as exc:
                log.warning("skipping unreadable session %s: %s", meta.parent, exc)
                continue
            self._sessions[rec.session_id] = rec

    def __len__(self) -> int:
        return len(self._sessions)

    def create(self, lecture_id: str, group_mode: str) -> SessionRecord:
        sid = str(uuid.uuid4())
        d = self.root / sid
        d.mkdir()
        rec = SessionRecord(sid, lecture_id, group_mode, time.time(), d)
        meta = {"session_id": sid, "lecture_id": lecture_id, "group_mode": group_mode, "created_at": rec.created_at}
        write_atomic(d / "session.json", json.dumps(meta, indent=2) + "\n")
        with self._guard:
            self._sessions[sid] = rec
        return rec

    def get(self, session_id: str) -> SessionRecord:
        rec = self._sessions.get(session_id)
        if rec is None:
            raise ApiError(404, "SESSION_NOT_FOUND", f"no session {session_id!r}")
        return rec

    def lock(self, session_id: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def ids(self) -> list[str]:
        return sorted(self._sessions)


def _require(rec: SessionRecord, *allowed: State) -> None:
    state = rec.state
    if state not in allowed:
        names = " or ".join(s.name for s in allowed)
        raise ApiError(409, "INVALID_STATE", f"session is {state.name}, needs {names}", {"state": state.name})


async def _json_body(request: Request) -> dict:
    raw = await request.body()
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ApiError(400, "BAD_REQUEST", f"malformed JSON body: {exc}") from None
    if not isinstance(data, dict):
        raise ApiError(400, "BAD_REQUEST", "JSON body must be an object")
    return data


class Engine:
    """Everything request handlers need: lectures, knowledge bases, adapters, sessions."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.adapter = make_adapter(config.adapter)
        self.embedder = make_embedder(config.embedder)
        self.lectures: dict[str, LectureDescriptor] = {}
        self.stores: dict[str, KnowledgeStore] = {}
        lectures_dir = Path(config.lectures_dir)
        for path in sorted(lectures_dir.glob("*.json")):
            desc = load_lecture(path)
            self.lectures[desc.lecture_id] = desc
            self.stores[desc.lecture_id] = store_from_descriptor(desc, self.embedder)
        self.sessions = SessionStore(Path(config.data_dir) / "sessions")

    def lecture_for(self, rec: SessionRecord) -> LectureDescriptor:
        desc = self.lectures.get(rec.lecture_id)
        if desc is None:
            raise ApiError(404, "LECTURE_NOT_FOUND", f"lecture {rec.lecture_id!r} is not loaded")
        return desc

    def _generate(self, plan, desc: LectureDescriptor) -> Quiz:
        cfg = self.config.engine
        store = self.stores[desc.lecture_id]
        grounding = grounding_for_plan(plan, store, cfg.grounding_chunks_per_section)
        try:
            prompt = build_quiz_prompt(plan, desc, grounding, cfg)
            items = generate_quiz(plan, self.adapter, prompt, grounding, cfg.generation_retries)
        except MissingGroundingError as exc:
            raise ApiError(422, "MISSING_GROUNDING", str(exc), {"section_index": exc.section_index}) from exc
        except EmptyPlanError as exc:
            raise ApiError(422, "EMPTY_PLAN", str(exc)) from exc
        except (AdapterError, MalformedGenerationError) as exc:
            raise ApiError(502, "ADAPTER_ERROR", str(exc)) from exc
        return Quiz(plan, items)

    # -- handlers -------------------------------------------------------------

    def create_session(self, body: dict) -> dict:
        lecture_id = body.get("lecture_id")
        mode = body.get("group_mode")
        if not isinstance(lecture_id, str) or not isinstance(mode, str):
            raise ApiError(400, "BAD_REQUEST", "body needs string fields lecture_id and group_mode")
        mode = mode.upper()
        if mode not in GROUP_MODES:
            raise ApiError(400, "BAD_MODE", f"group_mode must be one of {GROUP_MODES}")
        if lecture_id not in self.lectures:
            raise ApiError(404, "LECTURE_NOT_FOUND", f"lecture {lecture_id!r} is not loaded")
        rec = self.sessions.create(lecture_id, mode)
        return {"session_id": rec.session_id}

    def upload_gaze(self, session_id: str, data: bytes) -> str:
        rec = self.sessions.get(session_id)
        with self.sessions.lock(session_id):
            # GAZE_UPLOADED only survives a crash between the two writes below; allow the retry
            _require(rec, State.CREATED, State.GAZE_UPLOADED)
            desc = self.lecture_for(rec)
            try:
                report = analyze_csv(data, desc, self.config.engine, session_id=session_id)
            except IngestError as exc:
                raise ApiError(422, "PARSE_ERROR", str(exc), exc.to_detail()) from exc
            except UnknownLabelError as exc:
                raise ApiError(422, "UNKNOWN_LABEL", str(exc), {"sample": exc.index, "label": exc.label}) from exc
            except EmptyTraceError as exc:
                raise ApiError(422, "EMPTY_TRACE", str(exc)) from exc
            text = report.to_json()
            write_atomic(rec.directory / "gaze.csv", data)
            write_atomic(rec.directory / "metrics.json", text)
            return text

    def make_quiz(self, session_id: str) -> dict:
        rec = self.sessions.get(session_id)
        with self.sessions.lock(session_id):
            _require(rec, State.METRICS_READY)
            desc = self.lecture_for(rec)
            cfg = self.config.engine
            report = AttentionReport.from_dict(json.loads((rec.directory / "metrics.json").read_text(encoding="utf-8")))
            if rec.group_mode == "ATTENTIVE":
                try:
                    plan = allocate_questions(report, cfg, session_id)
                except NoValidSectionError as exc:
                    raise ApiError(422, "NO_VALID_SECTION", str(exc)) from exc
            else:
                plan = allocate_random(desc.timeline, cfg, seed_from_session(session_id), session_id)
            quiz = self._generate(plan, desc)
            write_atomic(rec.directory / "quiz_plan.json", dumps_canonical(plan.to_dict()))
            write_atomic(rec.directory / "quiz.json", dumps_canonical(quiz.to_dict()))
            return quiz.to_dict()

    def grade(self, session_id: str, body: dict) -> dict:
        rec = self.sessions.get(session_id)
        item_id, response = body.get("item_id"), body.get("response")
        if not isinstance(item_id, str) or not isinstance(response, str) or not response.strip():
            raise ApiError(400, "BAD_REQUEST", "body needs item_id and a nonempty response")
        with self.sessions.lock(session_id):
            _require(rec, State.QUIZ_READY)
            quiz = Quiz.from_dict(json.loads((rec.directory / "quiz.json").read_text(encoding="utf-8")))
            item = quiz.item(item_id)
            if item is None:
                raise ApiError(404, "ITEM_NOT_FOUND", f"no quiz item {item_id!r}")
            try:
                result = grade(item, response, self.adapter)
            except AdapterError as exc:
                raise ApiError(502, "ADAPTER_ERROR", str(exc)) from exc
            append_line(rec.directory / "grades.jsonl", {**result.to_dict(), "response": response})
            return result.to_dict()

    def chat(self, session_id: str, body: dict) -> dict:
        rec = self.sessions.get(session_id)
        text = body.get("text")
        if not isinstance(text, str) or not text.strip():
            raise ApiError(400, "BAD_REQUEST", "body needs a nonempty text field")
        with self.sessions.lock(session_id):
            desc = self.lecture_for(rec)
            store = self.stores[desc.lecture_id]
            if len(store) == 0:
                raise ApiError(422, "EMPTY_KNOWLEDGE_BASE", f"lecture {desc.lecture_id!r} has no text to ground on")
            try:
                chunks = search(text, store, CHAT_TOP_K, self.embedder)
                answer = self.adapter.answer(build_grounded_prompt(text, chunks))
            except AdapterError as exc:
                raise ApiError(502, "ADAPTER_ERROR", str(exc)) from exc
            now = int((time.time() - rec.created_at) * 1000)
            log_path = rec.directory / "chat.jsonl"
            append_line(log_path, ChatMessage(now, Author.USER, text).to_dict())
            append_line(log_path, ChatMessage(now, Author.ASSISTANT, answer).to_dict())
            return {"answer": answer, "grounding_chunk_ids": [c.id for c in chunks]}

    def chatquiz(self, session_id: str) -> dict:
        rec = self.sessions.get(session_id)
        with self.sessions.lock(session_id):
            desc = self.lecture_for(rec)
            messages = read_chat_log(rec.directory / "chat.jsonl")
            report = confusion_report(messages, desc, self.embedder, self.config.lexicon, session_id)
            plan = chatquiz_plan(report, desc.timeline, self.config.engine)
            quiz = self._generate(plan, desc)
            out = {"confusion": report.to_dict(), **quiz.to_dict()}
            write_atomic(rec.directory / "chatquiz.json", dumps_canonical(out))
            return out


def create_app(config: ServiceConfig) -> FastAPI:
    engine = Engine(config)
    app = FastAPI(title="gazequiz", version="0.1.0")
    app.state.engine = engine

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError):
        return JSONResponse(exc.body(), status_code=exc.status)

    @app.post("/v1/sessions", status_code=201)
    async def create_session(request: Request):
        return await run_in_threadpool(engine.create_session, await _json_body(request))

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        return engine.sessions.get(session_id).to_dict()

    @app.post("/v1/sessions/{session_id}/gaze")
    async def upload_gaze(session_id: str, request: Request):
        data = await request.body()
        text = await run_in_threadpool(engine.upload_gaze, session_id, data)
        return Response(text, media_type="application/json")

    @app.post("/v1/sessions/{session_id}/quiz")
    def make_quiz(session_id: str):
        return engine.make_quiz(session_id)

    @app.post("/v1/sessions/{session_id}/quiz/grade")
    async def grade_item(session_id: str, request: Request):
        return await run_in_threadpool(engine.grade, session_id, await _json_body(request))

    @app.post("/v1/sessions/{session_id}/chat")
    async def chat(session_id: str, request: Request):
        return await run_in_threadpool(engine.chat, session_id, await _json_body(request))

    @app.get("/v1/sessions/{session_id}/chatquiz")
    def chatquiz(session_id: str):
        return engine.chatquiz(session_id)

    return app
