import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fedview.features import Sample, default_registry
from fedview.model import ModelConfig, init_params, preset


@pytest.fixture(scope="session")
def desk_config():
    return preset("desk", seed=3)


@pytest.fixture(scope="session")
def registry(desk_config):
    return default_registry(desk_config)


def micro_config(seed=0):
    """A few-hundred-parameter config for hand checks and finite differences."""
    return ModelConfig(n_binary=1, n_numerical=2, n_categorical=2, hash_buckets=4,
                       embedding_dim=2, numeric_dense_dim=3, hidden_dims=(4, 4, 3, 3, 2),
                       seed=seed)


def random_samples(config: ModelConfig, n: int, seed: int = 0, registry_hash: int = 1):
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        samples.append(Sample(
            binary=[int(b) for b in rng.integers(0, 2, size=config.n_binary)],
            numerical=[float(x) for x in rng.uniform(0, 1, size=config.n_numerical)],
            categorical=[int(c) for c in rng.integers(0, config.hash_buckets,
                                                      size=config.n_categorical)],
            label_viewable=int(rng.integers(0, 2)), ad_id=f"ad{i}",
            registry_hash=registry_hash, timestamp=float(i)))
    return samples


def planted_samples(config: ModelConfig, n: int, seed: int = 0):
    """Linearly separable labels: positive iff the first numerical feature > 0.5."""
    samples = random_samples(config, n, seed=seed)
    for s in samples:
        s.label_viewable = int(s.numerical[0] > 0.5)
    return samples


@pytest.fixture
def micro_params():
    return init_params(micro_config(seed=1), dtype=np.float64)


def pytest_terminal_summary(terminalreporter):
    """Surface the acceptance PASS lines even under output capture."""
    try:
        from test_acceptance import REPORT_LINES
    except ImportError:
        return
    if REPORT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in REPORT_LINES:
            terminalreporter.write_line(line)
