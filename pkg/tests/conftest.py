from __future__ import annotations

import pytest
from hypothesis import settings

from quasiattr.models.zoo import build_model

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def solenoid():
    return build_model({"name": "canonical_solenoid"})


@pytest.fixture(scope="session")
def plykin_realized():
    return build_model({"name": "realized", "params": {"disk": "plykin"}})


@pytest.fixture(scope="session")
def shear_realized():
    return build_model({"name": "realized", "params": {"disk": "shear"}})


ACCEPTANCE: dict = {}


@pytest.fixture()
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion; printed in the terminal summary."""
    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{label} {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[label] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE, key=lambda s: int(s[2:])):
        terminalreporter.write_line(ACCEPTANCE[label])
