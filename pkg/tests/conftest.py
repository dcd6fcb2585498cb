"""Collects one pass/fail line per acceptance criterion and prints them at the end of the run."""

import functools

ACCEPTANCE: dict[int, str] = {}


def criterion(number: int, title: str):
    """Record the outcome of an acceptance test under its criterion number.

    The wrapped test may return a short detail string; it is appended to the
    PASS line.  Any exception marks the criterion FAIL and is re-raised.
    """

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                ACCEPTANCE[number] = f"[FAIL] criterion {number}: {title} ({type(exc).__name__}: {exc})"
                raise
            suffix = f" ({detail})" if detail else ""
            ACCEPTANCE[number] = f"[PASS] criterion {number}: {title}{suffix}"

        return run

    return wrap


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n].splitlines()[0])
