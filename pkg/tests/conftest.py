import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from cape.inventory import Inventory, InventoryItem, load_builtin

settings.register_profile("ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def mpi():
    return load_builtin()


def make_toy(traits="OOCCEEAANN", keys=None):
    keys = keys or [1, -1] * (len(traits) // 2) + [1] * (len(traits) % 2)
    items = tuple(
        InventoryItem(id=f"i{n}", text=f"like thing number {n}", trait=t, key=k)
        for n, (t, k) in enumerate(zip(traits, keys), start=1)
    )
    return Inventory(name="toy", items=items)


@pytest.fixture
def toy():
    return make_toy()


ACCEPTANCE = {}
_START = {}


def record(n: int, desc: str, ok: bool, detail: str = "") -> None:
    """Store the one-line verdict for acceptance criterion ``n`` and fail on FAIL."""
    line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {desc}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE[n] = line
    assert ok, line


def pytest_sessionstart(session):
    import time

    _START["t"] = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    import time

    if not ACCEPTANCE:
        return
    total = time.perf_counter() - _START.get("t", time.perf_counter())
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, 11):
        tr.write_line(ACCEPTANCE.get(n, f"criterion {n:>2} FAIL  not run"))
    verdict = "PASS" if total < 600 else "FAIL"
    tr.write_line(f"criterion 10 {verdict}  total suite runtime {total:.1f} s (budget 600 s)")
