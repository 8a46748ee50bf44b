import json
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

VERISIGN_WHOIS = "whois.verisign-grs.com"
VERISIGN_RDAP = "https://rdap.verisign.com/com/v1/"
MM_WHOIS = "whois.markmonitor.com"
MM_RDAP = "https://rdap.markmonitor.com/rdap/"


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text("utf-8")


def fixture_json(name: str):
    return json.loads(fixture_text(name))


def google_scenario_doc() -> dict:
    return {
        "version": 1,
        "tlds": {"com": {"whois": VERISIGN_WHOIS, "rdap": VERISIGN_RDAP}},
        "domains": {
            "google.com": {
                "whois": {
                    VERISIGN_WHOIS: fixture_text("google_registry.whois"),
                    MM_WHOIS: fixture_text("google_registrar.whois"),
                },
                "rdap": {
                    VERISIGN_RDAP: fixture_json("google_registry.rdap.json"),
                    MM_RDAP: fixture_json("google_registrar.rdap.json"),
                },
                "dns": {"ns": [f"ns{i}.google.com" for i in range(1, 5)], "a": ["192.0.2.10"]},
            }
        },
    }


@pytest.fixture
def google_doc():
    return google_scenario_doc()


# one pass/fail line per acceptance criterion, printed after the run
ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = "test_acceptance.py::test_ac"
    if marker not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    ac = name.split("_")[1].upper()
    prev = ACCEPTANCE_RESULTS.get(ac, "PASS")
    ACCEPTANCE_RESULTS[ac] = "PASS" if prev == "PASS" and report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for ac in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s[2:])):
        terminalreporter.write_line(f"{ac}: {ACCEPTANCE_RESULTS[ac]}")
