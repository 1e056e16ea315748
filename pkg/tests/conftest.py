import contextlib

import pytest

_RESULTS: dict[str, tuple[str, str]] = {}


@pytest.fixture
def criterion():
    """``with criterion("C1 name"):`` records PASS/FAIL for the end-of-run summary."""

    @contextlib.contextmanager
    def record(name, detail=""):
        info = {"detail": detail}
        try:
            yield info
        except BaseException as exc:
            _RESULTS[name] = ("FAIL", f"{info['detail']} {type(exc).__name__}: {exc}".strip())
            raise
        _RESULTS[name] = ("PASS", info["detail"])

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_RESULTS, key=lambda n: int(n.split()[0][1:])):
        status, detail = _RESULTS[name]
        line = f"{status} {name}"
        if detail:
            line += f" | {detail.splitlines()[0][:300]}"
        terminalreporter.write_line(line)
