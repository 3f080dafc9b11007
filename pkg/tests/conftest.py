import pytest

from fracgraph.config import desk_preset, save_config, tiny_preset
from fracgraph.dataset import generate_dataset
from fracgraph.simulator import build_realization_grid


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A complete tiny dataset (6 realizations, 4/1/1 split) generated once
    per session, laid out exactly as the datagen command leaves it."""
    root = tmp_path_factory.mktemp("tinydata")
    cfg = tiny_preset()
    save_config(root / "config.json", cfg)
    generate_dataset(str(root), cfg.sim, cfg.n_realizations, cfg.split_sizes,
                     seed=cfg.seed)
    return root


@pytest.fixture(scope="session")
def tiny_config():
    return tiny_preset()


@pytest.fixture(scope="session")
def fractured_grid():
    """One 20 x 20 realization with a handful of fractures."""
    return build_realization_grid(seed=7, cfg=desk_preset().sim)
