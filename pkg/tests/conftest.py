import numpy as np
import pytest

from sactc.serialize import serialize_sot

# Shared 4-frame, 4-symbol instance (blank 0, words 1 and 2, speaker change 3).
TINY_LOGITS = np.array([
    [-1.07, 0.85, 0.03, 0.45],
    [0.94, -0.06, 0.92, 0.06],
    [0.26, 0.56, 0.81, -1.68],
    [-0.21, 0.95, -0.61, -0.96],
])


@pytest.fixture
def tiny():
    return TINY_LOGITS.copy(), serialize_sot([[1], [2]], sc_id=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _flipped_backward(beta, log_post, ext):
    # adds the stay-on-node suffixes instead of removing them
    pos = np.arange(1, ext.size, 2)
    out = np.full(beta.shape, -np.inf)
    out[-1, pos] = beta[-1, pos]
    out[:-1, pos] = np.logaddexp(beta[:-1, pos], beta[1:, pos] + log_post[:-1, ext[pos]])
    return out


@pytest.fixture
def sign_flipped(monkeypatch):
    """Patch the revised backward pass with a sign-flipped mutant."""
    from sactc import lattice

    monkeypatch.setattr(lattice, "backward_revised", _flipped_backward)


_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL verdict, echoed in the terminal summary."""

    def record(tag, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {tag}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
