import os
import time

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line[1])


class Criterion:
    """Collects checks for one acceptance criterion and times it against its budget."""

    def __init__(self, number, title, budget, sink):
        self.number, self.title, self.budget, self.sink = number, title, budget, sink
        self.failures = []
        self.notes = []

    def check(self, ok, what):
        if not ok:
            self.failures.append(what)
        return ok

    def note(self, text):
        self.notes.append(text)

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        if exc is not None:
            self.failures.append(f"{exc_type.__name__}: {exc}")
        if self.budget is not None and elapsed >= self.budget:
            self.failures.append(f"runtime {elapsed:.1f}s over budget")
        status = "PASS" if not self.failures else "FAIL"
        budget = f" / budget {self.budget:g}s" if self.budget is not None else ""
        detail = "; ".join(self.notes + self.failures[:3])
        line = f"[{status}] criterion {self.number}: {self.title} ({elapsed:.2f}s{budget}) {detail}".rstrip()
        self.sink.append((self.number, line))
        print(line)
        if exc is None and self.failures:
            raise AssertionError("; ".join(self.failures))
        return False


@pytest.fixture
def criterion(request):
    def make(number, title, budget=None):
        return Criterion(number, title, budget, request.config._acceptance_lines)

    return make
