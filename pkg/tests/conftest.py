from __future__ import annotations

import numpy as np
import pytest

from aoiaseg import shapes
from aoiaseg.objectness import RecomposeParams, recompose_scene
from aoiaseg.pcio import Clustering, default_config


def make_scene(seed: int, n_instances: int = 9, density: float = 600.0, gap=(0.3, 0.5), kinds=None):
    """Recomposed scene of procedural furniture plus its ground-truth clustering."""
    rng = np.random.default_rng(seed)
    samples = [shapes.random_sample(rng, density, kinds) for _ in range(n_instances)]
    scene = recompose_scene(samples, RecomposeParams(min_gap_range=gap), rng)
    cfg = default_config()
    gt = Clustering.from_labels(scene.cloud.instance, scene.cloud.semantic, cfg.foreground)
    return scene, gt


@pytest.fixture
def config():
    return default_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
