import pytest

from dirac_inverse import presets
from dirac_inverse.grid import Grid
from dirac_inverse.snode import similarity_path

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def path_cache():
    cache = {}

    def get(name: str, n: int):
        key = (name, n)
        if key not in cache:
            V = getattr(presets, name)(Grid(1.0, n))
            cache[key] = (V, similarity_path(V))
        return cache[key]

    return get


@pytest.fixture(scope="session")
def record_acceptance():
    def record(line: str):
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
