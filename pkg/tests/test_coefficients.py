import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from periodic_sde import CoefficientPath, fundamental_product, make_unit_multiplier_path, multiplier, window_bound
from periodic_sde.errors import DimensionError, NonScalarProductError

factor_values = st.floats(min_value=-0.5, max_value=1.0, allow_nan=False)


@st.composite
def paths(draw, max_dim=3, max_period=5):
    d = draw(st.integers(1, max_dim))
    K = draw(st.integers(1, max_period))
    seed = draw(st.integers(0, 2**32))
    if d == 1:
        return CoefficientPath.from_scalars(draw(st.lists(factor_values, min_size=K, max_size=K)))
    rng = np.random.default_rng(seed)
    return CoefficientPath(rng.uniform(-0.3, 0.3, size=(K, d, d)))


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def test_identity_on_empty_window():
    path = CoefficientPath.from_scalars([0.3, -0.2, 0.7])
    assert fundamental_product(path, 5, 5) == 1.0
    mpath = CoefficientPath(np.full((2, 2, 2), 0.1))
    np.testing.assert_array_equal(fundamental_product(mpath, 5, 5), np.eye(2))


def test_two_block_products():
    path = CoefficientPath.from_scalars([1.0, -0.5])
    assert fundamental_product(path, 0, 2) == 1.0
    assert fundamental_product(path, 0, 1) == 2.0
    assert fundamental_product(path, 1, 2) == 0.5


@pytest.mark.parametrize(
    "a, expected",
    [([0.0], 1.0), ([0.0] * 4, 1.0), ([1.0, -0.5], 1.0), ([-0.1, -0.1], 0.81)],
)
def test_multiplier_values(a, expected):
    assert multiplier(CoefficientPath.from_scalars(a)) == pytest.approx(expected, rel=1e-15)


def test_reversed_order_is_rejected():
    with pytest.raises(ValueError):
        fundamental_product(CoefficientPath.from_scalars([0.1]), 3, 2)


def test_matrix_order_puts_later_factors_on_the_left():
    a0 = np.array([[0.0, 1.0], [0.0, 0.0]])
    a1 = np.array([[0.0, 0.0], [1.0, 0.0]])
    path = CoefficientPath(np.stack([a0, a1]))
    expected = (np.eye(2) + a1) @ (np.eye(2) + a0)
    np.testing.assert_array_equal(fundamental_product(path, 0, 2), expected)


def test_non_scalar_product_raises():
    path = CoefficientPath(np.array([[[0.5, 0.0], [0.0, 0.0]]]))
    with pytest.raises(NonScalarProductError, match="non-scalar period product"):
        multiplier(path)


def test_near_scalar_product_is_accepted_within_tolerance():
    path = CoefficientPath(np.array([[[1e-10, 0.0], [0.0, 0.0]]]))
    assert multiplier(path) == pytest.approx(1.0)


def test_bad_shapes():
    with pytest.raises(DimensionError):
        CoefficientPath(np.zeros((2, 2, 3)))


def test_blocks_are_read_only():
    path = CoefficientPath.from_scalars([0.1, 0.2])
    with pytest.raises(ValueError):
        path.blocks[0, 0, 0] = 1.0


def test_singular_detection():
    assert CoefficientPath.from_scalars([-1.0, 0.5]).is_singular()
    assert not CoefficientPath.from_scalars([1.0, -0.5]).is_singular()
    assert CoefficientPath(np.array([[[-1.0, 0.0], [0.0, 0.0]]])).is_singular()


def test_window_bound_covers_partial_products():
    path = CoefficientPath.from_scalars([1.0, -0.5])
    assert window_bound(path) == 2.0
    assert window_bound(CoefficientPath.from_scalars([-0.5, -0.5])) == 1.0


@settings(max_examples=60, deadline=None)
@given(paths(), st.data())
def test_cocycle(path, data):
    n = data.draw(st.integers(0, 60))
    m = data.draw(st.integers(0, n))
    k = data.draw(st.integers(0, m))
    left = fundamental_product(path, k, n)
    right = np.atleast_2d(fundamental_product(path, m, n)) @ np.atleast_2d(fundamental_product(path, k, m))
    assert rel_err(left, right) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5), st.integers(0, 2**40), st.floats(0.5, 1.5), st.data())
def test_period_shift(d, K, seed, target, data):
    path = make_unit_multiplier_path(d, K, seed, target)
    L = multiplier(path)
    n = data.draw(st.integers(0, 500))
    k = data.draw(st.integers(0, n))
    shifted = fundamental_product(path, k, n + K)
    base = np.asarray(fundamental_product(path, k, n))
    assert rel_err(shifted, L * base) <= 1e-10


def test_scalar_path_matches_one_by_one_matrix_path():
    a = [0.3, -0.25, 0.8]
    s = CoefficientPath.from_scalars(a)
    m = CoefficientPath(np.array(a).reshape(3, 1, 1))
    for k, n in [(0, 7), (2, 11), (4, 4)]:
        assert fundamental_product(s, k, n) == fundamental_product(m, k, n)
