import json
from importlib import resources
from pathlib import Path

import pytest

from daproc import parser

FIXTURES = resources.files("daproc") / "fixtures"


@pytest.fixture(scope="session")
def travel_text():
    return (FIXTURES / "travel.dap").read_text()


@pytest.fixture(scope="session")
def travel_spec(travel_text):
    return parser.parse_spec(travel_text)


@pytest.fixture(scope="session")
def single_request():
    # one pending trip, as used throughout the engine and state-space tests
    return {"Pending": frozenset({(2, "Kriss", "Paris")})}


@pytest.fixture(scope="session")
def two_requests():
    return {"Pending": frozenset({(1, "Bob", "NY"), (2, "Kriss", "Paris")})}


@pytest.fixture(scope="session")
def mock_services_doc():
    return json.loads((FIXTURES / "travel_services.json").read_text())


@pytest.fixture(scope="session")
def trace_script_text():
    return (FIXTURES / "travel_trace.script").read_text()


def fixture_path(name: str) -> str:
    return str(FIXTURES / name)


def data_path(name: str) -> str:
    return str(Path(__file__).parent / "data" / name)


# One pass/fail line per acceptance criterion at the end of the run.

_acceptance: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if report.when == "call":
        _acceptance[name] = "PASS" if report.passed else "FAIL"
    elif report.when == "setup" and report.failed:
        _acceptance[name] = "ERROR"
    elif report.skipped:
        _acceptance.setdefault(name, "SKIP")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        terminalreporter.write_line(f"{name}: {_acceptance[name]}")
