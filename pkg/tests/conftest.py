import numpy as np
import pytest
from hypothesis import settings

from thrustwalk.crd import NetworkParams, forward, residual_from_outputs
from thrustwalk.features import N_FEATURES
from thrustwalk.trainer import Dataset

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")

_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture
def criterion(request, capsys):
    """Records and prints one pass/fail line for a numbered acceptance criterion."""
    def record(number, ok, detail):
        line = f"ACCEPTANCE {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_CRITERIA][number] = line
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])


def teacher_network():
    teacher = NetworkParams.init(123)
    for k in teacher.weights:
        teacher.weights[k] *= 0.5
    return teacher


def teacher_dataset(n=256, seed=0, inertia=np.diag([0.023, 0.046, 0.058])):
    """Samples labelled by a fixed random network of the same architecture."""
    rng = np.random.default_rng(seed)
    X, d = rng.normal(size=(n, 4, N_FEATURES)), rng.normal(scale=0.15, size=(n, 4, 3))
    out = forward(teacher_network(), X)
    rid = np.repeat(np.arange(8), -(-n // 8))[:n]
    return Dataset(rid, np.arange(n) * 0.01, X, d, residual_from_outputs(out, d, inertia), out.C > 0.5, n)
