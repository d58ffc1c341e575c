import pytest

ACCEPTANCE = {
    1: "borehole accuracy",
    2: "dense-oracle equivalence",
    3: "interpolation",
    4: "precompute residual",
    5: "latency scaling",
    6: "speedup over MuyGPs",
    7: "MCMC inversion",
    8: "kernel identities",
    9: "sigma invariance",
    10: "serialization",
    11: "approximate index quality",
}

_results: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion for the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _results[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        ok, detail = _results[number]
        tag = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{tag}] {number}. {ACCEPTANCE[number]}: {detail}")
