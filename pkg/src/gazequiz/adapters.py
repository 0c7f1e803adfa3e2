"""Text-generation backends.

The engine never embeds a model. A backend is anything with ``generate``,
``grade`` and ``answer`` methods speaking the JSON shapes below;
:class:`MockAdapter` fills them deterministically for tests and offline runs.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Protocol

from .errors import AdapterError


class QuizAdapter(Protocol):
    def generate(self, prompt: str, max_items: int) -> dict:
        """``{prompt, max_items}`` -> ``{items: [{section_index, kind, stem, options?, answer_key}]}``"""

    def grade(self, stem: str, answer_key: str, response: str) -> dict:
        """``{stem, answer_key, response}`` -> ``{correct, score, rationale}``"""

    def answer(self, prompt: str) -> str:
        """``{prompt}`` -> ``{answer}``"""


def _stable_int(*parts) -> int:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


_EXCERPT_RE = re.compile(r"^\[([^\]]+)\] (.*)$")


@dataclass
class MockAdapter:
    """Template-filling stand-in for an LLM.

    ``mcq_option_count`` below 2 makes every MCQ malformed, which is useful
    for exercising retry handling.
    """

    mcq_option_count: int = 4

    def generate(self, prompt: str, max_items: int) -> dict:
        from .quiz import parse_quiz_request

        request = parse_quiz_request(prompt)
        letters = [chr(ord("A") + k) for k in range(max(self.mcq_option_count, 0))]
        items = []
        n = 0
        for sec in request["sections"]:
            index, title = sec["section_index"], sec.get("title", f"Section {sec['section_index']}")
            for j in range(sec["count"]):
                stem = f"({request['difficulty']}) {title}: question {j + 1}"
                if n % 2 == 0:
                    key = letters[_stable_int(index, j) % len(letters)] if letters else "A"
                    items.append({"section_index": index, "kind": "MCQ", "stem": stem, "options": letters, "answer_key": key})
                else:
                    items.append(
                        {"section_index": index, "kind": "SHORT_ANSWER", "stem": stem, "answer_key": f"key s{index} q{j + 1}"}
                    )
                n += 1
        return {"items": items[:max_items]}

    def grade(self, stem: str, answer_key: str, response: str) -> dict:
        ok = " ".join(response.split()).casefold() == " ".join(answer_key.split()).casefold()
        return {"correct": ok, "score": 1.0 if ok else 0.0, "rationale": "exact match" if ok else "does not match the key"}

    def answer(self, prompt: str) -> str:
        cited = []
        for line in prompt.splitlines():
            m = _EXCERPT_RE.match(line)
            if m:
                cited.append(m.group(1))
        if not cited:
            return "I could not find this in the lecture material."
        return "According to the lecture material (" + ", ".join(cited) + "), see the cited excerpts."


@dataclass
class HttpAdapter:
    """Remote backend: ``POST {base_url}/generate``, ``/grade`` and ``/answer``."""

    base_url: str
    timeout: float = 60.0

    def _post(self, path: str, body: dict) -> dict:
        import httpx

        url = self.base_url.rstrip("/") + path
        try:
            resp = httpx.post(url, json=body, timeout=self.timeout)
            resp.raise_for_status()
            data = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise AdapterError(f"{url}: {exc}") from exc
        if not isinstance(data, dict):
            raise AdapterError(f"{url}: expected a JSON object")
        return data

    def generate(self, prompt: str, max_items: int) -> dict:
        return self._post("/generate", {"prompt": prompt, "max_items": max_items})

    def grade(self, stem: str, answer_key: str, response: str) -> dict:
        return self._post("/grade", {"stem": stem, "answer_key": answer_key, "response": response})

    def answer(self, prompt: str) -> str:
        data = self._post("/answer", {"prompt": prompt})
        if not isinstance(data.get("answer"), str):
            raise AdapterError("answer response lacks an 'answer' string")
        return data["answer"]


def make_adapter(target) -> QuizAdapter:
    """``"mock"`` or an ``http(s)://`` base URL."""
    if target in (None, "mock"):
        return MockAdapter()
    if isinstance(target, str) and target.startswith(("http://", "https://")):
        return HttpAdapter(target)
    raise ValueError(f"unknown adapter {target!r}; use 'mock' or an http(s) URL")
