import numpy as np
import pytest

from decoder_bcd import kernels

ACCEPTANCE_LINES: list[str] = []

BACKENDS = ["python"] + (["cython"] if kernels.compiled_rollout is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available rollout backend."""
    if request.param == "python":
        monkeypatch.setattr(kernels, "rollout", kernels.python_rollout)
        monkeypatch.setattr(kernels, "rollout_backward", kernels.python_rollout_backward)
    else:
        monkeypatch.setattr(kernels, "rollout", kernels.compiled_rollout)
        monkeypatch.setattr(kernels, "rollout_backward", kernels.compiled_rollout_backward)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    """Log a one-line pass/fail verdict for the acceptance summary."""

    def record(number: int, name: str, passed: bool, detail: str) -> None:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {name} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record
