import numpy as np
import pytest

from kaleido.errors import ShapeError
from kaleido.tensor import ActivationKind, activation_derivative, apply_activation, as_matrix, gemm, matmul

from oracles import triple_loop_matmul


def test_matmul_matches_triple_loop_exactly():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 7))
    b = rng.normal(size=(7, 3))
    np.testing.assert_array_equal(matmul(a, b), triple_loop_matmul(a, b))


@pytest.mark.parametrize("seed", range(5))
def test_matmul_bit_exact_on_awkward_values(seed):
    rng = np.random.default_rng(seed)
    scales = 10.0 ** rng.integers(-150, 150, size=(4, 9))
    a = rng.normal(size=(4, 9)) * scales
    b = rng.normal(size=(9, 6))
    np.testing.assert_array_equal(matmul(a, b), triple_loop_matmul(a, b))


def test_gemm_agrees_with_matmul():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(30, 40))
    b = rng.normal(size=(40, 20))
    np.testing.assert_allclose(gemm(a, b), matmul(a, b), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("fn", [matmul, gemm])
def test_shape_mismatch_names_both_shapes(fn):
    with pytest.raises(ShapeError) as info:
        fn(np.zeros((5, 7)), np.zeros((6, 3)))
    msg = str(info.value)
    assert "(5, 7)" in msg and "(6, 3)" in msg


def test_as_matrix_promotes_vectors():
    assert as_matrix([1.0, 2.0]).shape == (1, 2)
    with pytest.raises(ShapeError):
        as_matrix(np.zeros((2, 2, 2)))


def test_activation_values():
    x = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_array_equal(apply_activation("relu", x), [0.0, 0.0, 3.0])
    np.testing.assert_allclose(apply_activation("sigmoid", x), 1 / (1 + np.exp(-x)), rtol=1e-15)
    np.testing.assert_allclose(apply_activation("tanh", x), np.tanh(x), rtol=1e-15)


def test_saturated_heads_stay_inside_open_range():
    x = np.array([-1e308, -800.0, -40.0, 40.0, 800.0, 1e308])
    s = apply_activation("sigmoid", x)
    t = apply_activation("tanh", x)
    assert np.all((s > 0) & (s < 1))
    assert np.all((t > -1) & (t < 1))


def test_relu_derivative_at_zero_is_zero():
    assert activation_derivative("relu", np.array([0.0]))[0] == 0.0
    np.testing.assert_array_equal(activation_derivative("relu", np.array([-1.0, 2.0])), [0.0, 1.0])


@pytest.mark.parametrize("kind", ["sigmoid", "tanh"])
def test_derivative_matches_central_difference(kind):
    rng = np.random.default_rng(2)
    x = rng.uniform(-4, 4, size=200)
    h = 1e-5
    fd = (apply_activation(kind, x + h) - apply_activation(kind, x - h)) / (2 * h)
    np.testing.assert_allclose(activation_derivative(kind, x), fd, atol=1e-8)


def test_activation_bounds():
    assert ActivationKind.SIGMOID.bounds == (0.0, 1.0)
    assert ActivationKind.TANH.bounds == (-1.0, 1.0)
    assert not ActivationKind.RELU.bounded
