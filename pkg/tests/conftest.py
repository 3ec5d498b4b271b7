import numpy as np
import pytest

from adapod.config import load_preset
from adapod.pipeline import run_nonadaptive, run_pipeline

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Store one pass/fail line per acceptance criterion for the terminal summary."""

    def _record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def test3_runs(tmp_path_factory):
    cfg = load_preset("test3")
    base = tmp_path_factory.mktemp("test3")
    first = run_pipeline(cfg, base / "adaptive_a")
    second = run_pipeline(cfg, base / "adaptive_b")
    single = run_nonadaptive(cfg, base / "single")
    return first, second, single


@pytest.fixture(scope="session")
def test4_runs(tmp_path_factory):
    cfg = load_preset("test4")
    base = tmp_path_factory.mktemp("test4")
    return run_pipeline(cfg, base / "adaptive"), run_nonadaptive(cfg, base / "single")
