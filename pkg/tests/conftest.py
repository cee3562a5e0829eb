import numpy as np
import pytest

from restopipe.image import ImageBuffer, save_image
from restopipe.synthetic import clean_image
from restopipe.toolbox import default_catalog


@pytest.fixture(scope="session")
def registry():
    return default_catalog().freeze()


@pytest.fixture(scope="session")
def registry_desnow():
    return default_catalog(include_desnow=True).freeze()


@pytest.fixture()
def clean64():
    return clean_image(11, 64, 64)


@pytest.fixture()
def clean128():
    return clean_image(11, 128, 128)


@pytest.fixture()
def png_pair(tmp_path):
    """A (degraded, reference) PNG pair on disk for CLI-style tests."""
    from restopipe.degrade import apply_recipe, sample_recipe

    ref = clean_image(3, 96, 96)
    recipe = sample_recipe({"denoise", "dejpeg"}, rng_seed=5, profile="mixed")
    deg = apply_recipe(ref, recipe)
    ref_path = tmp_path / "ref.png"
    deg_path = tmp_path / "deg.png"
    save_image(ref, ref_path)
    save_image(deg, deg_path)
    return deg_path, ref_path


def constant_image(value: float, side: int = 32) -> ImageBuffer:
    return ImageBuffer.from_array(np.full((side, side, 3), value, dtype=np.float64))


@pytest.fixture()
def const():
    return constant_image
