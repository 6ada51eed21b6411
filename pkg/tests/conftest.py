"""Acceptance bookkeeping: one PASS/FAIL line per criterion in the terminal summary."""

import re

CRITERIA = {
    1: "CTC loss and gradient vs brute force / finite differences",
    2: "finite-difference gradient checks for every recognizer layer",
    3: "Levenshtein oracle and corpus CER definition",
    4: "segment smoothing properties and worked example",
    5: "fusion identities and gating",
    6: "desk-scale end-to-end trends",
    7: "length-bin trend on the desk baseline",
    8: "reproducibility of two full desk runs",
}

_outcomes: dict[int, list[bool]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(n, []).append(report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n not in _outcomes:
            continue
        status = "PASS" if all(_outcomes[n]) else "FAIL"
        terminalreporter.write_line(f"{status} criterion {n}: {CRITERIA[n]}")
