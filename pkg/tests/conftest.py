import functools

import pytest

from tfdyn.training import TrainConfig, train

# name -> TrainConfig overrides; everything else is the paper configuration
CONFIGS = {
    "ep": dict(task="even_pairs"),
    "parity": dict(task="parity_cot"),
    "ep_lam10": dict(task="even_pairs", lam=10.0),
    "ep_lam18": dict(task="even_pairs", lam=18.0),
    "ep_vanilla": dict(task="even_pairs", schedule="vanilla"),
    "parity_lam10": dict(task="parity_cot", lam=10.0),
    "parity_lam18": dict(task="parity_cot", lam=18.0),
    "parity_vanilla": dict(task="parity_cot", schedule="vanilla"),
}


@functools.lru_cache(maxsize=None)
def full_run(name):
    return train(TrainConfig(**CONFIGS[name]))


@pytest.fixture(scope="session")
def run():
    return full_run


def pytest_collection_modifyitems(items):
    for item in items:
        if "run" in getattr(item, "fixturenames", ()):
            item.add_marker(pytest.mark.slow)
