import json
from pathlib import Path

import pytest
from hypothesis import settings

from gazequiz.model import load_lecture

# fixed example generation keeps the suite reproducible run to run
settings.register_profile("repo", derandomize=True, deadline=None)
settings.load_profile("repo")

DATA = Path(__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def lecture_path() -> Path:
    return DATA / "net101.json"


@pytest.fixture(scope="session")
def lecture(lecture_path):
    return load_lecture(lecture_path)


@pytest.fixture(scope="session")
def low_s3_profile_path() -> Path:
    return DATA / "profile_low_s3.json"


def load_golden(name: str):
    return json.loads((GOLDEN / name).read_text(encoding="utf-8"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
