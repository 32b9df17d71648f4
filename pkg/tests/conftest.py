import sys
from contextlib import contextmanager
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (title, "PASS" | "FAIL")
ACCEPTANCE: dict[int, tuple[str, str]] = {}


@contextmanager
def criterion(number: int, title: str):
    """Record one acceptance criterion; prints its line when the block exits."""
    ACCEPTANCE[number] = (title, "FAIL")
    try:
        yield
    except BaseException:
        print(f"criterion {number}: FAIL  {title}")
        raise
    ACCEPTANCE[number] = (title, "PASS")
    print(f"criterion {number}: PASS  {title}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, status = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {title}")
