import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance checks register ``(criterion, part, passed, detail)`` here; the
# terminal summary condenses them to one line per criterion.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted({c for c, *_ in ACCEPTANCE}):
        parts = [p for p in ACCEPTANCE if p[0] == n]
        ok = all(p[2] for p in parts)
        detail = "; ".join(f"{p[1]}: {'ok' if p[2] else 'FAILED'} ({p[3]})" for p in parts)
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    def add(criterion, part, passed, detail):
        ACCEPTANCE.append((criterion, part, bool(passed), detail))
    return add
