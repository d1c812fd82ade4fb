import sys
from pathlib import Path

import pytest

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

FIXTURES = HERE / "fixtures"
GOLDEN = HERE / "golden"


def pytest_addoption(parser):
    parser.addoption(
        "--bless",
        action="store_true",
        default=False,
        help="Regenerate golden files from the oracle pipeline before comparing.",
    )


@pytest.fixture(scope="session")
def bless(request) -> bool:
    return request.config.getoption("--bless")


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return GOLDEN


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="session")
def goldens(bless) -> Path:
    """Golden directory, regenerated from the oracle pipeline under ``--bless``."""
    if bless:
        from golden_pipeline import bless as regenerate

        regenerate(FIXTURES, GOLDEN)
    return GOLDEN
