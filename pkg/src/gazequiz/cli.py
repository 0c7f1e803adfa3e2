"""Command-line entry points.

Exit codes: 0 success, 2 input/parse error, 3 state/contract error, 64 usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from . import errors
from .adapters import make_adapter
from .ingest import Mode
from .metrics import AttentionReport, dumps_canonical
from .model import EngineConfig, load_lecture
from .pipeline import analyze_csv
from .quiz import Quiz, allocate_questions, allocate_random, build_quiz_prompt, generate_quiz, grounding_for_plan
from .retrieval import HashEmbedder, KnowledgeStore, chunk_document, search_scored, store_from_descriptor
from .simulator import load_profile, simulate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONTRACT = 3
EXIT_USAGE = 64

log = logging.getLogger("gazequiz")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise errors.DescriptorError(f"{path}: invalid JSON ({exc})") from exc


def _engine_config(args) -> EngineConfig:
    if getattr(args, "config", None):
        return EngineConfig.from_dict(_read_json(args.config))
    return EngineConfig()


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_analyze(args) -> int:
    desc = load_lecture(args.lecture)
    data = Path(args.gaze).read_bytes()
    report = analyze_csv(data, desc, _engine_config(args), session_id=args.session_id, sort=args.sort)
    _write(report.to_json(), args.out)
    return EXIT_OK


def cmd_quiz(args) -> int:
    config = _engine_config(args)
    report = AttentionReport.from_dict(_read_json(args.report))
    lecture = args.lecture or Path(args.report).with_name(f"{report.lecture_id}.json")
    desc = load_lecture(lecture)
    if desc.lecture_id != report.lecture_id:
        raise errors.DescriptorError(f"report is for {report.lecture_id!r}, descriptor for {desc.lecture_id!r}")
    if args.mode == "attentive":
        plan = allocate_questions(report, config)
    else:
        seed = config.rng_seed if args.seed is None else args.seed
        plan = allocate_random(desc.timeline, config, seed, report.session_id)
    store = store_from_descriptor(desc, HashEmbedder())
    grounding = grounding_for_plan(plan, store, config.grounding_chunks_per_section)
    prompt = build_quiz_prompt(plan, desc, grounding, config)
    items = generate_quiz(plan, make_adapter(args.adapter), prompt, grounding, config.generation_retries)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "quiz_plan.json").write_text(dumps_canonical(plan.to_dict()), encoding="utf-8")
    (out_dir / "quiz.json").write_text(dumps_canonical(Quiz(plan, items).to_dict()), encoding="utf-8")
    return EXIT_OK


def cmd_simulate(args) -> int:
    profile = load_profile(args.profile)
    if args.seed is not None:
        profile = type(profile)(profile.sections, profile.sample_rate_hz, args.seed, profile.head)
    desc = load_lecture(args.lecture)
    sim = simulate(profile, desc.timeline, desc.aois, Mode(args.mode.upper()))
    Path(args.out).write_bytes(sim.csv)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig.load(args.config)
    host, port = config.host_port()
    uvicorn.run(create_app(config), host=host, port=port)
    return EXIT_OK


def cmd_kb_build(args) -> int:
    docs = sorted(p for p in Path(args.docs).iterdir() if p.suffix in (".txt", ".md") and p.is_file())
    if not docs:
        raise errors.EmptyDocumentError(f"no .txt or .md documents in {args.docs}")
    embedder = HashEmbedder()
    store = KnowledgeStore(embedder.dimension)
    for path in docs:
        section = _section_from_name(path.stem)
        store.add(chunk_document(path.read_text(encoding="utf-8"), path.stem, args.target_tokens, args.overlap_tokens, section), embedder)
    store.save(args.out)
    return EXIT_OK


def _section_from_name(stem: str) -> int | None:
    m = re.match(r"(?:section|s)[-_]?(\d+)(?![0-9])", stem, re.IGNORECASE)
    return int(m.group(1)) if m else None


def cmd_kb_search(args) -> int:
    store = KnowledgeStore.load(args.kb)
    embedder = HashEmbedder(store.dimension)
    for rank, (chunk, score) in enumerate(search_scored(args.query, store, args.k, embedder), start=1):
        sys.stdout.write(json.dumps({"rank": rank, "id": chunk.id, "score": round(score, 6), "section_index": chunk.section_index, "text": chunk.text}) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gazequiz", description="Gaze attention metrics and personalized quizzes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="gaze CSV -> attention report JSON")
    p.add_argument("--lecture", required=True, help="lecture descriptor JSON")
    p.add_argument("--gaze", required=True, help="gaze log CSV")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--session-id", default="", help="session id recorded in the report")
    p.add_argument("--sort", action="store_true", help="reorder out-of-order timestamps instead of failing")
    p.add_argument("--config", help="engine config overrides (JSON)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("quiz", help="attention report -> quiz_plan.json and quiz.json")
    p.add_argument("--report", required=True)
    p.add_argument("--lecture", help="lecture descriptor JSON (default: <lecture_id>.json next to the report)")
    p.add_argument("--mode", choices=("attentive", "random"), required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--adapter", default="mock", help="'mock' or a backend base URL")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--config")
    p.set_defaults(func=cmd_quiz)

    p = sub.add_parser("simulate", help="synthetic gaze CSV from an attention profile")
    p.add_argument("--profile", required=True)
    p.add_argument("--lecture", required=True)
    p.add_argument("--mode", choices=("labeled", "geometric"), default="labeled")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the profile seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_serve)

    kb = sub.add_parser("kb", help="knowledge-base tools")
    kb_sub = kb.add_subparsers(dest="kb_command", required=True, parser_class=_Parser)
    p = kb_sub.add_parser("build")
    p.add_argument("--docs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-tokens", type=int, default=200)
    p.add_argument("--overlap-tokens", type=int, default=40)
    p.set_defaults(func=cmd_kb_build)
    p = kb_sub.add_parser("search")
    p.add_argument("--kb", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("-k", type=int, default=5)
    p.set_defaults(func=cmd_kb_search)
    return parser


INPUT_ERRORS = (
    errors.IngestError,
    errors.DescriptorError,
    errors.InvariantError,
    errors.UnknownLabelError,
    errors.EmptyTraceError,
    errors.EmptyDocumentError,
    errors.EmptyStoreError,
    OSError,
    ValueError,
    KeyError,
)
CONTRACT_ERRORS = (
    errors.NoValidSectionError,
    errors.EmptyPlanError,
    errors.MissingGroundingError,
    errors.MalformedGenerationError,
    errors.AdapterError,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CONTRACT_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONTRACT
    except INPUT_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
