"""Knowledge-base chunking, embedding and exact cosine search."""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import AdapterError, DimensionMismatchError, EmptyDocumentError, EmptyStoreError

TOKEN_RE = re.compile(r"\w+", re.UNICODE)


@dataclass(frozen=True)
class Chunk:
    id: str
    text: str
    section_index: int | None = None
    embedding: tuple[float, ...] | None = None

    def to_dict(self) -> dict:
        out = {"id": self.id}
        if self.section_index is not None:
            out["section_index"] = self.section_index
        out["text"] = self.text
        out["embedding"] = list(self.embedding or ())
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Chunk":
        sec = data.get("section_index")
        return cls(
            id=str(data["id"]),
            text=str(data["text"]),
            section_index=None if sec is None else int(sec),
            embedding=tuple(float(x) for x in data.get("embedding", ())) or None,
        )


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_many(self, texts: Sequence[str]) -> np.ndarray: ...


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class HashEmbedder:
    """Deterministic bag-of-tokens embedder: token hashes bucketed, then L2-normalized.

    Needs no model or network; used by tests and as the offline default.
    """

    dimension: int = 64

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dimension

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dimension)
        for tok in tokenize(text):
            v[self._bucket(tok)] += 1.0
        norm = np.linalg.norm(v)
        return v / norm if norm > 0 else v

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        return np.array([self.embed(t) for t in texts]).reshape(len(texts), self.dimension)


@dataclass
class RemoteEmbedder:
    """Client for an embedding service speaking ``{texts}`` -> ``{vectors}``."""

    url: str
    dimension: int
    timeout: float = 30.0

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        import httpx

        try:
            resp = httpx.post(self.url, json={"texts": list(texts)}, timeout=self.timeout)
            resp.raise_for_status()
            vectors = resp.json()["vectors"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise AdapterError(f"embedder request failed: {exc}") from exc
        arr = np.asarray(vectors, dtype=float)
        if arr.shape != (len(texts), self.dimension):
            raise AdapterError(f"embedder returned shape {arr.shape}, expected ({len(texts)}, {self.dimension})")
        return arr

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def chunk_document(
    text: str,
    doc_id: str = "doc",
    target_tokens: int = 200,
    overlap_tokens: int = 40,
    section_index: int | None = None,
) -> list[Chunk]:
    """Split on whitespace into overlapping token windows (unembedded)."""
    if overlap_tokens >= target_tokens or target_tokens < 1 or overlap_tokens < 0:
        raise ValueError("need 0 <= overlap_tokens < target_tokens")
    tokens = text.split()
    if not tokens:
        raise EmptyDocumentError(f"document {doc_id!r} has no tokens")
    stride = target_tokens - overlap_tokens
    chunks = []
    start = 0
    while True:
        window = tokens[start : start + target_tokens]
        chunks.append(Chunk(f"{doc_id}#{len(chunks):04d}", " ".join(window), section_index))
        if start + target_tokens >= len(tokens):
            break
        start += stride
    return chunks


@dataclass
class KnowledgeStore:
    """In-memory chunk store with exhaustive cosine search.

    Mutations hold an exclusive lock; searches work on an immutable snapshot.
    """

    dimension: int
    _chunks: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _snapshot: tuple | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self._chunks)

    def add(self, chunks: Iterable[Chunk], embedder: Embedder | None = None) -> None:
        chunks = list(chunks)
        pending = [c for c in chunks if c.embedding is None]
        if pending:
            if embedder is None:
                raise ValueError("unembedded chunks need an embedder")
            vectors = embedder.embed_many([c.text for c in pending])
            lookup = {c.id: tuple(float(x) for x in v) for c, v in zip(pending, vectors)}
            chunks = [c if c.embedding is not None else Chunk(c.id, c.text, c.section_index, lookup[c.id]) for c in chunks]
        for c in chunks:
            if len(c.embedding) != self.dimension:
                raise DimensionMismatchError(f"chunk {c.id}: dimension {len(c.embedding)} != {self.dimension}")
        with self._lock:
            for c in chunks:
                if c.id in self._chunks:
                    raise ValueError(f"duplicate chunk id {c.id!r}")
            for c in chunks:
                self._chunks[c.id] = c
            self._snapshot = None

    def chunks(self) -> list[Chunk]:
        """All chunks ordered by id."""
        return list(self._view()[0])

    def for_section(self, index: int) -> list[Chunk]:
        return [c for c in self._view()[0] if c.section_index == index]

    def _view(self):
        snap = self._snapshot
        if snap is None:
            with self._lock:
                ordered = tuple(sorted(self._chunks.values(), key=lambda c: c.id))
                matrix = np.array([c.embedding for c in ordered], dtype=float).reshape(len(ordered), self.dimension)
                norms = np.linalg.norm(matrix, axis=1)
                snap = self._snapshot = (ordered, matrix, norms)
        return snap

    def save(self, path: str | Path) -> None:
        data = {"dimension": self.dimension, "chunks": [c.to_dict() for c in self.chunks()]}
        Path(path).write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeStore":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        store = cls(int(data["dimension"]))
        store.add(Chunk.from_dict(c) for c in data["chunks"])
        return store


def search_scored(query: str, store: KnowledgeStore, k: int, embedder: Embedder) -> list[tuple[Chunk, float]]:
    """Top-``k`` ``(chunk, cosine)`` pairs; ties go to the smaller id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    chunks, matrix, norms = store._view()
    if not chunks:
        raise EmptyStoreError("knowledge store is empty")
    q = np.asarray(embedder.embed(query), dtype=float)
    qn = np.linalg.norm(q)
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = (matrix @ q) / (norms * qn)
    # 12 digits: differences below that are summation-order noise, ranked as ties
    scores = np.round(np.where(np.isfinite(scores), scores, 0.0), 12)
    # chunks are id-sorted, so a stable sort on -score keeps id order on ties
    order = np.argsort(-scores, kind="stable")[:k]
    return [(chunks[i], float(scores[i])) for i in order]


def search(query: str, store: KnowledgeStore, k: int, embedder: Embedder) -> list[Chunk]:
    return [c for c, _ in search_scored(query, store, k, embedder)]


GROUNDED_TEMPLATE = (
    "You are a teaching assistant for a university lecture. Answer the student's "
    "question using only the lecture material below. If the material does not "
    "cover the question, say so.\n\n"
    "Lecture material:\n{excerpts}\n\n"
    "Question: {question}\n"
)


def build_grounded_prompt(question: str, chunks: Sequence[Chunk], template: str = GROUNDED_TEMPLATE) -> str:
    if not chunks:
        raise ValueError("grounded prompt needs at least one chunk")
    excerpts = "\n".join(f"[{c.id}] {c.text}" for c in chunks)
    return template.format(excerpts=excerpts, question=question)


def store_from_descriptor(descriptor, embedder: Embedder, target_tokens: int = 200, overlap_tokens: int = 40) -> KnowledgeStore:
    """Knowledge base built from each section's title and content text."""
    store = KnowledgeStore(embedder.dimension)
    chunks: list[Chunk] = []
    for sec in descriptor.timeline.sections:
        info = descriptor.section_info(sec.index)
        text = f"{info.title} {info.content_text}".strip()
        if not text:
            continue
        chunks += chunk_document(text, f"{descriptor.lecture_id}/s{sec.index:02d}", target_tokens, overlap_tokens, sec.index)
    store.add(chunks, embedder)
    return store
