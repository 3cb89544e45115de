import contextlib

import numpy as np
import pytest
import torch

from seaice_seg.dataset import SyntheticSceneSpec, synthesize_scene
from seaice_seg.model import ModelConfig


@pytest.fixture(scope="session")
def scene16():
    return synthesize_scene(SyntheticSceneSpec(seed=3, n_frames=16))


@pytest.fixture(scope="session")
def small_scene():
    return synthesize_scene(SyntheticSceneSpec(seed=5, n_frames=5, height=128, width=128, floe_axes=(4, 12)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig.tiny()


@pytest.fixture
def micro_config():
    """Below 10k parameters, for finite-difference checks."""
    return ModelConfig.tiny(
        base_width=1,
        flow_widths=(2, 2, 2, 2, 2, 2),
        estimator_width=4,
        cv_radius=1,
        fusion_channels=4,
        ppm_bins=(1, 2),
    )


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion.

    Usage: ``with criterion("name") as note: ...; note("detail")``.
    """
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    @contextlib.contextmanager
    def record(name):
        details = []
        try:
            yield details.append
        except BaseException as exc:
            line = f"FAIL {name}: {'; '.join(details + [repr(exc)])}"
            lines.append(line)
            print(line)
            raise
        line = f"PASS {name}: {'; '.join(details)}"
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
