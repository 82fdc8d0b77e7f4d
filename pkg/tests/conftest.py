import pytest

# filled by tests/test_acceptance.py: criterion id -> (title, passed, detail)
ACCEPTANCE: dict[str, tuple[str, bool, str]] = {}


@pytest.fixture
def report():
    def record(cid: str, title: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE[cid] = (title, bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {cid}: {title} - {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: (int(c.rstrip("ab")), c)):
        title, passed, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {cid:>3s}  {title}: {detail}")
