import shutil
from pathlib import Path

import pytest

from syndicate.lang import parse_program

CORPUS = Path(__file__).resolve().parents[1] / "src" / "syndicate" / "corpus"

# PASS/FAIL lines recorded by the acceptance suite, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def corpus_program(name: str):
    return parse_program((CORPUS / f"{name}.while").read_text())


def pytest_collection_modifyitems(config, items):
    if shutil.which("z3") is None:
        skip = pytest.mark.skip(reason="z3 not on PATH")
        for item in items:
            if "solver" in item.keywords:
                item.add_marker(skip)


def pytest_configure(config):
    config.addinivalue_line("markers", "solver: needs the z3 executable")
    config.addinivalue_line("markers", "slow: runs the engine on the whole corpus")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
