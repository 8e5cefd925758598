import pytest
from hypothesis import settings

import sevgp  # noqa: F401  (enables 64-bit JAX before any test module imports jax)

settings.register_profile("default", deadline=None, max_examples=30, derandomize=True)
settings.load_profile("default")

_RESULTS = {}


@pytest.fixture
def record():
    """record(n, ok, detail): note an acceptance criterion outcome for the summary."""

    def _record(n, ok, detail):
        _RESULTS[n] = ("BLOCKED" if ok is None else "PASS" if ok else "FAIL", detail)
        print(f"criterion {n}: {_RESULTS[n][0]}  {detail}")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
