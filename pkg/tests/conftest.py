import numpy as np
import pytest

from ifedrec.data import SyntheticConfig, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    cfg = SyntheticConfig(n_users=20, n_items=60, latent_dim=4, attr_dim=8, noise=0.1,
                          interactions_per_user=6, cold_relevant_per_user=3)
    return generate_synthetic(cfg, seed=7)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
