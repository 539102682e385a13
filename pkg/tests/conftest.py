import pytest
import torch

torch.set_num_threads(1)

_RESULTS: dict[int, tuple[bool, str]] = {}
_SEEN = {"acceptance": False}


@pytest.fixture
def record():
    """Store one acceptance line: ``record(criterion, passed, detail)``."""
    _SEEN["acceptance"] = True

    def _record(criterion: int, passed: bool, detail: str) -> None:
        _RESULTS[criterion] = (bool(passed), detail)
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _SEEN["acceptance"]:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        passed, detail = _RESULTS.get(n, (False, "not run (errored or deselected)"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
