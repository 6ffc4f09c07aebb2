import numpy as np
import pytest

from occseg import synth
from occseg.sbm import SbmArchitecture, SbmParams, SbmTrainingConfig, train_sbm


def toy_dataset():
    return synth.toy_shapes(["cross", "square"], (16, 16), 200, seed=0)


def toy_arch():
    return SbmArchitecture.tiled(16, 16, 2, 2, 4, 25, 25)


@pytest.fixture(scope="session")
def toy_ds():
    return toy_dataset()


@pytest.fixture(scope="session")
def toy_model(toy_ds):
    """(arch, params) trained with the desk profile; about five seconds."""
    arch = toy_arch()
    params = train_sbm(toy_ds.train_shapes(), arch, SbmTrainingConfig.toy(seed=0))
    return arch, params


@pytest.fixture
def tiny_arch():
    # 4x4 visible, 2x2 patches of side 3 overlapping by 2; 8 h1 + 4 h2 = 12 hidden
    return SbmArchitecture.tiled(4, 4, 2, 2, 2, 2, 4)


@pytest.fixture
def tiny_params(tiny_arch):
    return SbmParams.random(tiny_arch, np.random.default_rng(7), std=0.7)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the summary."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
