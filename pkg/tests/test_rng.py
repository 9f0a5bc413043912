import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qhjb import rng


def test_same_address_same_numbers():
    a = rng.normals(3, 0, 100, 5, rng.TAG_NOISE, 2)
    b = rng.normals(3, 0, 100, 5, rng.TAG_NOISE, 2)
    assert np.array_equal(a, b)
    assert a.shape == (100, 2)


def test_addresses_are_independent():
    base = rng.normals(3, 0, 1000, 0, rng.TAG_NOISE)
    for other in (rng.normals(4, 0, 1000, 0, rng.TAG_NOISE),
                  rng.normals(3, 0, 1000, 1, rng.TAG_NOISE),
                  rng.normals(3, 0, 1000, 0, rng.TAG_SAMPLE)):
        assert not np.array_equal(base, other)
        # uncorrelated streams: |corr| well inside 5 standard errors
        assert abs(np.corrcoef(base[:, 0], other[:, 0])[0, 1]) < 5 / np.sqrt(1000)


@settings(max_examples=30, deadline=None)
@given(split=st.integers(1, 3 * rng.BLOCK - 1))
def test_split_ranges_concatenate(split):
    whole = rng.uniforms(9, 0, 3 * rng.BLOCK, 2, rng.TAG_KERNEL)
    parts = np.concatenate([rng.uniforms(9, 0, split, 2, rng.TAG_KERNEL),
                            rng.uniforms(9, split, 3 * rng.BLOCK, 2, rng.TAG_KERNEL)])
    assert np.array_equal(whole, parts)


def test_distribution_moments():
    z = rng.normals(1, 0, 200_000, 0, rng.TAG_NOISE)[:, 0]
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01
    u = rng.uniforms(1, 0, 200_000, 0, rng.TAG_NOISE)[:, 0]
    assert u.min() >= 0 and u.max() < 1 and abs(u.mean() - 0.5) < 0.005


def test_empty_and_negative_seed():
    assert rng.normals(0, 5, 5, 0, 1).shape == (0, 1)
    with pytest.raises(ValueError):
        rng.generator(-1, 0, 0, 0)
