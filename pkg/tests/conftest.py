from __future__ import annotations

import json
from pathlib import Path

import pytest

from gdcr.entities import build_lexicon
from gdcr.graph import graph_from_dict
from gdcr.trajectory import parse_tagged_transcript

FIXTURES = Path(__file__).parent / "fixtures"


def load_case_graph_dict() -> dict:
    return json.loads((FIXTURES / "case_graph.json").read_text(encoding="utf-8"))


def load_transcript(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


@pytest.fixture
def case_graph_dict():
    return load_case_graph_dict()


@pytest.fixture
def case_graph():
    return graph_from_dict(load_case_graph_dict())


@pytest.fixture
def case_lexicon(case_graph):
    return build_lexicon(case_graph)


@pytest.fixture
def success_traj():
    return parse_tagged_transcript(load_transcript("case_success.txt"), "success", "roofing")


@pytest.fixture
def failure_traj():
    return parse_tagged_transcript(load_transcript("case_failure.txt"), "failure", "roofing")


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_RESULTS

    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda x: int(x.split()[0][3:])):
            terminalreporter.write_line(line)
