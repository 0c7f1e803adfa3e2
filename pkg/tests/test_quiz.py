import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import load_golden
from gazequiz import errors
from gazequiz.adapters import HttpAdapter, MockAdapter, make_adapter
from gazequiz.metrics import dumps_canonical, round6
from gazequiz.model import EngineConfig, equal_sections
from gazequiz.quiz import (
    ItemKind,
    PlanMode,
    Quiz,
    QuizItem,
    QuizPlan,
    allocate_questions,
    allocate_random,
    build_quiz_prompt,
    generate_quiz,
    grade,
    grounding_for_plan,
    largest_remainder,
    parse_quiz_request,
)
from gazequiz.retrieval import HashEmbedder, store_from_descriptor

from oracles import hamilton
from regen_golden import FIXTURE_ADIS, fixture_report, mock_quiz, random_plan


def _plan(counts, mode=PlanMode.ATTENTIVE):
    return QuizPlan("s", mode, tuple(enumerate(counts, start=1)), "medium", sum(counts))


def test_adi_fixture_allocation():
    plan = allocate_questions(fixture_report())
    assert plan.counts == [0, 1, 2, 1, 2, 0]
    assert plan.counts == hamilton([1 - a for a in FIXTURE_ADIS], 6)


def test_equal_adis_give_uniform_allocation():
    assert allocate_questions(fixture_report(adis=[0.5] * 6)).counts == [1] * 6


def test_perfect_attention_gives_uniform_allocation():
    assert allocate_questions(fixture_report(adis=[1.0] * 6)).counts == [1] * 6


def test_single_valid_section_takes_everything():
    rep = fixture_report(adis=[0.9, 0.2, 0.4])
    sections = tuple(s if s.index == 2 else type(s)(**{**s.__dict__, "valid": False}) for s in rep.sections)
    rep = type(rep)(rep.session_id, rep.lecture_id, rep.generated_at_ms, rep.per_minute_coverage, sections)
    assert allocate_questions(rep).counts == [0, 6, 0]


def test_no_valid_section():
    rep = fixture_report(adis=[0.5])
    rep = type(rep)(rep.session_id, rep.lecture_id, 0, (), (type(rep.sections[0])(**{**rep.sections[0].__dict__, "valid": False}),))
    with pytest.raises(errors.NoValidSectionError):
        allocate_questions(rep)


def test_remainder_ties_go_to_lower_index():
    assert largest_remainder([1, 1, 1, 1], 2) == [1, 1, 0, 0]
    assert largest_remainder([0, 0, 0], 4) == [2, 1, 1]


@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=10), st.integers(0, 40))
def test_largest_remainder_matches_textbook(weights, total):
    assert largest_remainder([w / 10**6 for w in weights], total) == hamilton([w / 10**6 for w in weights], total)


@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=10), st.integers(1, 12))
def test_allocation_total_and_monotonicity(raw, total):
    adis = [round6(x / 10**6) for x in raw]
    plan = allocate_questions(fixture_report(adis=adis), EngineConfig(question_count=total))
    assert sum(plan.counts) == total
    for i, a in enumerate(adis):
        for j, b in enumerate(adis):
            if a < b:
                assert plan.counts[i] >= plan.counts[j]


@given(st.lists(st.integers(0, 900_000), min_size=2, max_size=8), st.integers(0, 100_000))
def test_shifting_adis_keeps_allocation_order(raw, shift):
    adis = [round6(x / 10**6) for x in raw]
    shifted = [round6(a + shift / 10**6) for a in adis]
    if max(shifted) >= 1.0:
        return
    a = allocate_questions(fixture_report(adis=adis)).counts
    b = allocate_questions(fixture_report(adis=shifted)).counts
    for i in range(len(a)):
        for j in range(len(a)):
            if adis[i] < adis[j]:
                assert a[i] >= a[j] and b[i] >= b[j]


def test_random_allocation_golden():
    assert random_plan().to_dict() == load_golden("allocate_random_seed42.json")
    assert dumps_canonical(random_plan().to_dict()) == dumps_canonical(random_plan().to_dict())


def test_random_allocation_single_section():
    tl = equal_sections(1000, 1)
    for seed in range(20):
        assert allocate_random(tl, EngineConfig(), seed).counts == [6]


def test_random_allocation_monte_carlo():
    tl = equal_sections(1_200_000, 6)
    totals = np.zeros(6)
    for seed in range(10_000):
        totals += allocate_random(tl, EngineConfig(), seed).counts
    mean = totals / 10_000
    assert np.all(np.abs(mean - 1.0) <= 0.05), mean


def test_prompt_targets_exactly_the_planned_sections(lecture):
    plan = _plan([0, 1, 2, 1, 2, 0])
    store = store_from_descriptor(lecture, HashEmbedder())
    grounding = grounding_for_plan(plan, store)
    prompt = build_quiz_prompt(plan, lecture, grounding)
    assert "## Section 1:" not in prompt and "## Section 6:" not in prompt
    request = parse_quiz_request(prompt)
    assert [(s["section_index"], s["count"]) for s in request["sections"]] == [(2, 1), (3, 2), (4, 1), (5, 2)]
    assert "[net101/s03#0000]" in prompt and "Questions requested: 2" in prompt
    assert prompt == build_quiz_prompt(plan, lecture, grounding)


def test_prompt_contract_errors(lecture):
    empty = QuizPlan("s", PlanMode.ATTENTIVE, tuple((i, 0) for i in range(1, 7)), "medium", 0)
    with pytest.raises(errors.EmptyPlanError):
        build_quiz_prompt(empty, lecture, {})
    with pytest.raises(errors.MissingGroundingError) as info:
        build_quiz_prompt(_plan([0, 0, 6, 0, 0, 0]), lecture, {3: []})
    assert info.value.section_index == 3


def test_mock_generation_section_multiset(lecture):
    quiz = mock_quiz()
    assert sorted(i.section_index for i in quiz.items) == [2, 3, 3, 4, 5, 5]
    assert [i.id for i in quiz.items] == [f"q{k}" for k in range(1, 7)]


def test_mock_quiz_golden():
    assert mock_quiz().to_dict() == load_golden("mock_quiz_adi_fixture.json")
    assert Quiz.from_dict(load_golden("mock_quiz_adi_fixture.json")).to_dict() == load_golden("mock_quiz_adi_fixture.json")


def test_single_option_mcq_exhausts_retries(lecture):
    plan = _plan([6, 0, 0, 0, 0, 0])
    store = store_from_descriptor(lecture, HashEmbedder())
    grounding = grounding_for_plan(plan, store)
    prompt = build_quiz_prompt(plan, lecture, grounding)
    calls = []

    class OneOption(MockAdapter):
        def generate(self, prompt, max_items):
            calls.append(1)
            return {"items": [{"section_index": 1, "kind": "MCQ", "stem": "q", "options": ["A"], "answer_key": "A"}] * 6}

    with pytest.raises(errors.MalformedGenerationError):
        generate_quiz(plan, OneOption(), prompt, grounding, retries=2)
    assert len(calls) == 3


def test_generation_recovers_within_budget(lecture):
    plan = _plan([2, 0, 0, 0, 0, 0])
    prompt = build_quiz_prompt(plan, lecture, {1: store_from_descriptor(lecture, HashEmbedder()).for_section(1)})
    good = MockAdapter()
    state = {"n": 0}

    class Flaky:
        def generate(self, prompt, max_items):
            state["n"] += 1
            return {"items": "nope"} if state["n"] == 1 else good.generate(prompt, max_items)

    assert len(generate_quiz(plan, Flaky(), prompt)) == 2


def test_item_invariants():
    with pytest.raises(errors.InvariantError):
        QuizItem("q1", 1, ItemKind.MCQ, "stem", "E", ("A", "B"))
    with pytest.raises(errors.InvariantError):
        QuizItem("q1", 1, ItemKind.MCQ, "stem", "A", ("A",))
    with pytest.raises(errors.InvariantError):
        QuizPlan("s", PlanMode.ATTENTIVE, ((1, 2), (2, 1)), "medium", 4)


def test_grading():
    mcq = QuizItem("q1", 1, ItemKind.MCQ, "stem", "B", ("A", "B", "C"))
    assert grade(mcq, " b ").score == 1.0 and grade(mcq, " b ").correct
    assert grade(mcq, "C").score == 0.0
    short = QuizItem("q2", 1, ItemKind.SHORT_ANSWER, "stem", "key s1 q1")
    assert grade(short, "Key  S1 q1", MockAdapter()).score == 1.0
    assert grade(short, "something else", MockAdapter()).score == 0.0
    with pytest.raises(ValueError):
        grade(mcq, "   ")


class _Backend(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        mock = MockAdapter()
        if self.path == "/generate":
            out = mock.generate(body["prompt"], body["max_items"])
        elif self.path == "/grade":
            out = mock.grade(body["stem"], body["answer_key"], body["response"])
        elif self.path == "/answer":
            out = {"answer": mock.answer(body["prompt"])}
        else:
            self.send_error(404)
            return
        data = json.dumps(out).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def backend_url():
    server = HTTPServer(("127.0.0.1", 0), _Backend)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def test_http_adapter_speaks_the_wire_contract(backend_url, lecture):
    adapter = make_adapter(backend_url)
    assert isinstance(adapter, HttpAdapter)
    plan = _plan([0, 1, 2, 1, 2, 0])
    grounding = grounding_for_plan(plan, store_from_descriptor(lecture, HashEmbedder()))
    prompt = build_quiz_prompt(plan, lecture, grounding)
    remote = generate_quiz(plan, adapter, prompt, grounding)
    local = generate_quiz(plan, MockAdapter(), prompt, grounding)
    assert remote == local
    short = next(i for i in remote if i.kind is ItemKind.SHORT_ANSWER)
    assert grade(short, short.answer_key, adapter).correct
    assert "s02" in adapter.answer("[net101/s02#0000] text\nQuestion: why?")


def test_http_adapter_transport_failure():
    adapter = HttpAdapter("http://127.0.0.1:9", timeout=2.0)
    with pytest.raises(errors.AdapterError):
        adapter.generate("x", 1)
    with pytest.raises(ValueError):
        make_adapter("ftp://example")
