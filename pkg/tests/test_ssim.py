import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lim3d import ShapeError, ssim
from ssim_reference import ssim_reference


class TestSsim:
    def test_self_similarity_is_exactly_one(self, rng):
        img = rng.integers(0, 256, size=(16, 16)).astype(np.float64)
        assert ssim(img, img) == 1.0

    def test_constant_offset_strictly_below_one(self):
        img = np.full((12, 12), 100.0)
        assert ssim(img, img + 10.0) < 1.0

    def test_matches_reference_on_fixed_pair(self, rng):
        a = rng.integers(0, 256, size=(16, 16)).astype(np.float64)
        b = rng.integers(0, 256, size=(16, 16)).astype(np.float64)
        assert ssim(a, b) == pytest.approx(ssim_reference(a, b), abs=1e-6)

    def test_matches_reference_many_pairs(self, rng):
        for _ in range(20):
            h, w = int(rng.integers(8, 25)), int(rng.integers(8, 33))
            a = rng.integers(0, 256, size=(h, w)).astype(np.float64)
            b = np.clip(a + rng.normal(scale=30.0, size=(h, w)), 0, 255)
            assert ssim(a, b) == pytest.approx(ssim_reference(a, b), abs=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            ssim(np.zeros((8, 8)), np.zeros((8, 9)))

    def test_small_images_clip_window(self):
        a = np.arange(16, dtype=np.float64).reshape(4, 4)
        assert ssim(a, a) == 1.0

    def test_value_range(self, rng):
        for _ in range(10):
            a = rng.integers(0, 256, size=(10, 10)).astype(float)
            b = rng.integers(0, 256, size=(10, 10)).astype(float)
            assert -1.0 <= ssim(a, b) <= 1.0 + 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, (9, 12), elements=st.integers(0, 255)),
       arrays(np.uint8, (9, 12), elements=st.integers(0, 255)))
def test_ssim_symmetric_and_self_unit(a, b):
    assert ssim(a, a) == 1.0
    assert ssim(a, b) == ssim(b, a)
