import pytest

from d4prep.circuit import build_d4_protocol
from d4prep.lattice import build_honeycomb_torus


@pytest.fixture(scope="session")
def lat22():
    return build_honeycomb_torus(2, 2)


@pytest.fixture(scope="session")
def lat23():
    return build_honeycomb_torus(2, 3)


@pytest.fixture(scope="session")
def d4_22(lat22):
    return build_d4_protocol(lat22)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance():
    """Collects one (criterion, ok, detail) line per acceptance check."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {detail}")
