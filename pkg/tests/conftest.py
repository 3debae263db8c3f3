import numpy as np
import pytest

from beamasr import scene as sc


@pytest.fixture(scope="session")
def tiny_scene_config():
    """Small steering grid and short utterances for fast pipeline tests."""
    return sc.SceneConfig(
        az_grid_deg=tuple(float(a) for a in range(-180, 180, 45)),
        el_grid_deg=(0.0,),
        num_mics=2,
        num_words=(1, 1),
        word_length=(2, 3),
    )


@pytest.fixture(scope="session")
def tiny_field(tiny_scene_config):
    return tiny_scene_config.build_field()


@pytest.fixture(scope="session")
def tiny_scenes(tiny_scene_config, tiny_field):
    return [sc.synthesize_scene(tiny_scene_config, s, field=tiny_field)
            for s in sc.scene_seeds(42, 4)]


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
