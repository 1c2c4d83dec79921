import json
from pathlib import Path

import pytest

from biharmonic_nest.cli import main as cli_main

_RESULTS: dict[int, tuple[bool, str]] = {}


class Acceptance:
    """Records one verdict per numbered criterion and fails the test on a miss."""

    def check(self, number: int, ok: bool, detail: str) -> None:
        prev = _RESULTS.get(number)
        if prev is not None and not prev[0]:
            ok, detail = False, prev[1]
        _RESULTS[number] = (bool(ok), detail)
        assert ok, f"criterion {number}: {detail}"


@pytest.fixture
def acceptance() -> Acceptance:
    return Acceptance()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        ok, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


class BuildCache:
    """CLI builds shared across tests; each loop count is built once per session."""

    def __init__(self, root: Path):
        self.root = root
        self._done: dict[int, tuple[int, float]] = {}

    def __call__(self, loops: int) -> Path:
        import time

        out = self.root / f"loops{loops}"
        if loops not in self._done:
            t0 = time.perf_counter()
            rc = cli_main(["build", "--loops", str(loops), "--out-dir", str(out)])
            self._done[loops] = (rc, time.perf_counter() - t0)
        rc, _ = self._done[loops]
        assert rc == 0, f"build --loops {loops} exited with {rc}"
        return out

    def seconds(self, loops: int) -> float:
        return self._done[loops][1]


@pytest.fixture(scope="session")
def builds(tmp_path_factory) -> BuildCache:
    return BuildCache(tmp_path_factory.mktemp("builds"))


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
