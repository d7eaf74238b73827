import numpy as np
import pytest

from glyphforge.imaging import GrayRaster
from glyphforge.toydata import make_toy_corpus, make_toy_lexicon


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture(scope="session")
def small_corpus():
    """4 labels x 2 variants at 32x32: enough for rendering tests."""
    return make_toy_corpus("abcd", variants=2, seed=5, glyph_size=(32, 32))


@pytest.fixture(scope="session")
def small_lexicon():
    return make_toy_lexicon("abcd", 12, seed=6, min_len=2, max_len=3)


def random_inked_raster(rng: np.random.Generator, max_side: int = 24) -> GrayRaster:
    """Random raster guaranteed to contain at least one ink pixel."""
    h = int(rng.integers(1, max_side + 1))
    w = int(rng.integers(1, max_side + 1))
    px = rng.random((h, w))
    py, pxx = int(rng.integers(h)), int(rng.integers(w))
    px[py, pxx] = 0.0
    return GrayRaster(px)
