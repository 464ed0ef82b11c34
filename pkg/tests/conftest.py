"""Acceptance bookkeeping: tests marked ``criterion(n)`` are grouped and a
one-line verdict per criterion is printed at the end of the session."""
from collections import defaultdict

import pytest

CRITERIA = {
    1: "closed-form gradients match central differences",
    2: "pairwise and ensemble forms of the ACE loss agree",
    3: "SMOC trunk gradient equals the mean of K naive backprops",
    4: "lambda = 0 and single-head SMOC reduce to vanilla training",
    5: "MNIST ensemble sweep: lambda > 0 matches or beats lambda = 0",
    6: "SMOC on MNIST: K = 10 heads match or beat one head on CE",
    7: "NCL gradient forms, bias-variance-covariance split, synthetic sweep",
    8: "property suites",
}

_outcomes = defaultdict(list)
_notes = defaultdict(list)
_deselected = defaultdict(int)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion this test belongs to")


def pytest_deselected(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            _deselected[marker.args[0]] += 1


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes[n].append("skipped" if rep.skipped else ("passed" if rep.passed else "failed"))


@pytest.fixture
def note(request):
    """Attach a short measurement to the criterion of the requesting test."""
    marker = request.node.get_closest_marker("criterion")

    def add(text):
        _notes[marker.args[0]].append(text)
    return add


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            verdict = "NOT RUN"
        elif "failed" in results:
            verdict = "FAIL"
        elif all(r == "skipped" for r in results):
            verdict = "SKIP"
        elif "skipped" in results or _deselected.get(n):
            verdict = "PARTIAL"
        else:
            verdict = "PASS"
        detail = "; ".join(_notes.get(n, []))
        terminalreporter.write_line(f"criterion {n}: {verdict:<7} {title}" + (f" [{detail}]" if detail else ""))
