import shutil

import pytest

from vsdeval.fixtures import generate_fixtures


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    """Pristine fixa/fixb datasets plus exact-gt estimates; treat as read-only."""
    root = tmp_path_factory.mktemp("fixtures")
    generate_fixtures(root, seed=0)
    return root


@pytest.fixture
def fixture_copy(fixture_root, tmp_path):
    """A private, writable copy of the fixture tree."""
    dst = tmp_path / "fx"
    shutil.copytree(fixture_root, dst)
    return dst


_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_VERDICTS, {})

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        lines[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
