import numpy as np
import pytest
import torch

from genrecmr.numerics import NonFiniteError, Rng, check_finite, conv2d_same, fft2c, ifft2c


def random_complex(rng, *shape):
    return torch.complex(torch.as_tensor(rng.normal(0, 1, size=shape)),
                         torch.as_tensor(rng.normal(0, 1, size=shape)))


# ---------------------------------------------------------------- fft pair

def test_fft2c_centered_impulse_becomes_flat_constant():
    x = torch.zeros(64, 64, dtype=torch.complex128)
    x[32, 32] = 1.0  # impulse at the grid center
    k = fft2c(x)
    torch.testing.assert_close(k, torch.full_like(k, 1.0 / 64), atol=1e-12, rtol=0)


def test_ifft2c_constant_kspace_becomes_centered_impulse():
    c = 0.7 - 0.2j
    k = torch.full((32, 48), c, dtype=torch.complex128)
    img = ifft2c(k)
    expected = torch.zeros_like(img)
    expected[16, 24] = c * np.sqrt(32 * 48)
    torch.testing.assert_close(img, expected, atol=1e-10, rtol=0)


def test_fft_round_trips_both_ways():
    rng = np.random.default_rng(0)
    x = random_complex(rng, 31, 45)
    assert (ifft2c(fft2c(x)) - x).abs().max() < 1e-10
    assert (fft2c(ifft2c(x)) - x).abs().max() < 1e-10


def test_fft_preserves_l2_norm():
    rng = np.random.default_rng(1)
    for shape in [(16, 16), (17, 23), (64, 64)]:
        x = random_complex(rng, *shape)
        nx = torch.linalg.vector_norm(x)
        nk = torch.linalg.vector_norm(fft2c(x))
        assert abs(float(nx - nk)) / float(nx) < 1e-10


def test_fft_adjoint_is_inverse_transform():
    # <fft2c(x), y> == <x, ifft2c(y)> for a unitary transform
    rng = np.random.default_rng(2)
    x = random_complex(rng, 24, 24)
    y = random_complex(rng, 24, 24)
    lhs = torch.sum(fft2c(x) * y.conj())
    rhs = torch.sum(x * ifft2c(y).conj())
    assert abs(complex(lhs - rhs)) < 1e-10


def test_fft_rejects_non_finite_input():
    x = torch.zeros(8, 8, dtype=torch.complex128)
    x[0, 0] = complex(np.nan, 0.0)
    with pytest.raises(NonFiniteError):
        fft2c(x)
    with pytest.raises(NonFiniteError):
        ifft2c(x)


def test_fft_rejects_degenerate_sizes():
    with pytest.raises(ValueError):
        fft2c(torch.zeros(1, 8, dtype=torch.complex128))


# -------------------------------------------------------------- convolution

def test_conv_identity_kernel():
    rng = np.random.default_rng(3)
    x = torch.as_tensor(rng.normal(0, 1, size=(13, 17)))
    out = conv2d_same(x, torch.ones(1, 1, dtype=torch.float64))
    torch.testing.assert_close(out, x, atol=0, rtol=0)


def test_conv_sobel_on_vertical_step():
    # x is 0 left of column 8 and 1 from column 8 on. Correlating with the
    # horizontal Sobel kernel [[-1,0,1],[-2,0,2],[-1,0,1]] gives
    # (1+2+1) * (x[:, j+1] - x[:, j-1]) = 4 on interior rows at the two
    # columns whose 3-wide window straddles the step (j = 7 and j = 8).
    x = torch.zeros(12, 16, dtype=torch.float64)
    x[:, 8:] = 1.0
    sx = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]],
                      dtype=torch.float64)
    g = conv2d_same(x, sx)
    interior = g[1:-1, :]
    assert torch.all(interior[:, 7] == 4.0)
    assert torch.all(interior[:, 8] == 4.0)
    assert torch.all(interior[:, 1:7] == 0.0)
    assert torch.all(interior[:, 9:15] == 0.0)


def test_conv_averaging_kernel_keeps_constant_interior():
    c = 2.5
    x = torch.full((11, 11), c, dtype=torch.float64)
    kern = torch.full((5, 5), 1.0 / 25.0, dtype=torch.float64)
    out = conv2d_same(x, kern)
    torch.testing.assert_close(out[2:-2, 2:-2], x[2:-2, 2:-2], atol=1e-12, rtol=0)
    # zero padding shows at the borders
    assert float(out[0, 0]) < c


def test_conv_matches_brute_force_loops():
    rng = np.random.default_rng(4)
    x = rng.normal(0, 1, size=(9, 11))
    k = rng.normal(0, 1, size=(3, 5))
    want = np.zeros_like(x)
    for i in range(9):
        for j in range(11):
            acc = 0.0
            for di in range(-1, 2):
                for dj in range(-2, 3):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < 9 and 0 <= jj < 11:
                        acc += k[di + 1, dj + 2] * x[ii, jj]
            want[i, j] = acc
    got = conv2d_same(torch.as_tensor(x), torch.as_tensor(k)).numpy()
    assert np.abs(got - want).max() < 1e-12


def test_conv_is_linear():
    rng = np.random.default_rng(5)
    x = torch.as_tensor(rng.normal(0, 1, size=(8, 8)))
    y = torch.as_tensor(rng.normal(0, 1, size=(8, 8)))
    k = torch.as_tensor(rng.normal(0, 1, size=(3, 3)))
    lhs = conv2d_same(1.7 * x - 0.3 * y, k)
    rhs = 1.7 * conv2d_same(x, k) - 0.3 * conv2d_same(y, k)
    assert (lhs - rhs).abs().max() < 1e-12


def test_conv_rejects_even_kernel():
    x = torch.zeros(8, 8, dtype=torch.float64)
    with pytest.raises(ValueError):
        conv2d_same(x, torch.ones(2, 3, dtype=torch.float64))


# ---------------------------------------------------------------- rng

def test_rng_same_seed_same_stream():
    a = Rng(123).normal(0, 1, size=100)
    b = Rng(123).normal(0, 1, size=100)
    assert np.array_equal(a, b)


def test_rng_different_seeds_differ():
    a = Rng(123).normal(0, 1, size=100)
    b = Rng(124).normal(0, 1, size=100)
    assert not np.array_equal(a, b)


def test_rng_split_streams_are_independent_and_reproducible():
    base = Rng(9)
    a1 = base.split("mask", 0).normal(0, 1, size=16)
    a2 = Rng(9).split("mask", 0).normal(0, 1, size=16)
    b = Rng(9).split("mask", 1).normal(0, 1, size=16)
    c = Rng(9).split("coils", 0).normal(0, 1, size=16)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, c)


def test_rng_key_order_matters():
    a = Rng(5, ("x", 1)).integers(0, 1 << 30, size=8)
    b = Rng(5, (1, "x")).integers(0, 1 << 30, size=8)
    assert not np.array_equal(a, b)


def test_rng_draw_sequence_is_stateful_within_an_instance():
    r = Rng(11)
    first = r.normal(0, 1, size=4)
    second = r.normal(0, 1, size=4)
    assert not np.array_equal(first, second)


def test_check_finite_passes_through_and_rejects():
    x = torch.ones(3, 3)
    assert check_finite(x) is x
    bad = torch.tensor([1.0, float("inf")])
    with pytest.raises(NonFiniteError):
        check_finite(bad, "k-space")
