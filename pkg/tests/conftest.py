import numpy as np
import pytest

from nirpatch.image import BinaryMask, NirImage


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid_image(width, height, rng=None, quantized=False):
    """Random image helper; quantized=True keeps pixels on the k/255 grid so
    PGM round trips are exact."""
    gen = rng or np.random.default_rng(0)
    if quantized:
        return NirImage.from_array(gen.integers(0, 256, (height, width)) / 255.0)
    return NirImage.from_array(gen.random((height, width)))


def full_mask(width, height):
    return BinaryMask.from_array(np.ones((height, width), dtype=np.uint8))


def empty_mask(width, height):
    return BinaryMask.from_array(np.zeros((height, width), dtype=np.uint8))
