import numpy as np
import pytest
import torch

from tppo.data import synth_generate, windows_from_scenes
from tppo.model import ModelConfig, build_params

torch.set_num_threads(1)

ACCEPTANCE_RESULTS = []


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at float64 tensor ``x``."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    g = grad.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + h
        fp = float(f(x))
        flat[i] = old - h
        fm = float(f(x))
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return grad


def rel_err(a, b):
    a, b = torch.as_tensor(a).flatten(), torch.as_tensor(b).flatten()
    scale = max(a.norm().item(), b.norm().item(), 1e-12)
    return (a - b).norm().item() / scale


@pytest.fixture
def small_config():
    return ModelConfig(pred_len=8)


@pytest.fixture
def params64(small_config):
    return build_params(small_config, seed=3, dtype=torch.float64)


@pytest.fixture(scope="session")
def cross_windows():
    return windows_from_scenes(synth_generate("cross2", 6, seed=11, n_frames=16), 8, 8)


@pytest.fixture(scope="session")
def group_windows():
    return windows_from_scenes(synth_generate("group3", 4, seed=5, n_frames=16), 8, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line)
