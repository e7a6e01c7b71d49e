"""Bicubic resampling against an independently coded direct-evaluation oracle.

The oracle below evaluates the piecewise Catmull-Rom kernel formula per
output pixel with explicit loops; the library path goes through separable
tap weights. Agreement validates both.
"""

import numpy as np
import pytest

from epimisr.tensor import Tensor, backward, bicubic_sample_at, bicubic_upsample, tsum


def _kernel(x, a=-0.5):
    x = abs(x)
    if x <= 1.0:
        return (a + 2.0) * x**3 - (a + 3.0) * x**2 + 1.0
    if x < 2.0:
        return a * x**3 - 5.0 * a * x**2 + 8.0 * a * x - 4.0 * a
    return 0.0


def _oracle_sample(img, x, y):
    h, w, c = img.shape
    ix, iy = int(np.floor(x)), int(np.floor(y))
    out = np.zeros(c)
    for j in range(iy - 1, iy + 3):
        wy = _kernel(y - j)
        jc = min(max(j, 0), h - 1)
        for i in range(ix - 1, ix + 3):
            wx = _kernel(x - i)
            ic = min(max(i, 0), w - 1)
            out += wy * wx * img[jc, ic]
    return out


def _oracle_upsample(img, s):
    h, w, c = img.shape
    out = np.zeros((s * h, s * w, c))
    for v in range(s * h):
        for u in range(s * w):
            out[v, u] = _oracle_sample(img, (u + 0.5) / s - 0.5, (v + 0.5) / s - 0.5)
    return out


def test_upsample_identity_scale(rng):
    x = rng.random((5, 7, 3))
    out = bicubic_upsample(Tensor(x), 1)
    np.testing.assert_array_equal(out.data, x)


def test_upsample_constant(rng):
    x = np.full((4, 4, 2), 0.37)
    out = bicubic_upsample(Tensor(x), 3)
    np.testing.assert_allclose(out.data, 0.37, atol=1e-12)


def test_upsample_ramp_matches_oracle():
    img = np.arange(4.0).reshape(2, 2, 1)
    out = bicubic_upsample(Tensor(img), 2)
    np.testing.assert_allclose(out.data, _oracle_upsample(img, 2), atol=1e-6)


@pytest.mark.parametrize("s", [2, 3, 4])
def test_upsample_random_matches_oracle(rng, s):
    img = rng.random((5, 4, 3))
    out = bicubic_upsample(Tensor(img), s)
    np.testing.assert_allclose(out.data, _oracle_upsample(img, s), atol=1e-10)


def test_sample_at_integer_coords(rng):
    img = rng.random((6, 5, 2))
    coords = np.array([[0.0, 0.0], [4.0, 5.0], [2.0, 3.0]])
    out = bicubic_sample_at(Tensor(img), coords)
    np.testing.assert_array_equal(out.data[0], img[0, 0])
    np.testing.assert_array_equal(out.data[1], img[5, 4])
    np.testing.assert_array_equal(out.data[2], img[3, 2])


def test_sample_at_constant(rng):
    img = np.full((5, 5, 1), 0.8)
    coords = rng.uniform(-2.0, 7.0, size=(30, 2))
    out = bicubic_sample_at(Tensor(img), coords)
    np.testing.assert_allclose(out.data, 0.8, atol=1e-12)


def test_sample_at_half_pixel_closed_form():
    # separable Catmull-Rom weights at t = 0.5 are (-1/16, 9/16, 9/16, -1/16)
    img = np.arange(16.0).reshape(4, 4, 1)
    out = bicubic_sample_at(Tensor(img), np.array([[1.5, 1.5]]))
    wt = np.array([-1 / 16, 9 / 16, 9 / 16, -1 / 16])
    expect = wt @ img[0:4, 0:4, 0] @ wt
    assert out.data[0, 0] == pytest.approx(expect, abs=1e-7)


def test_sample_at_matches_oracle(rng):
    img = rng.random((7, 6, 3))
    coords = rng.uniform(-1.5, 8.0, size=(40, 2))
    out = bicubic_sample_at(Tensor(img), coords)
    ref = np.stack([_oracle_sample(img, x, y) for x, y in coords])
    np.testing.assert_allclose(out.data, ref, atol=1e-10)


def test_sample_at_gradient_is_weights(rng):
    # the op is linear in f, so grad(sum) scatters the interpolation weights
    img = Tensor(rng.random((5, 5, 1)), requires_grad=True)
    coords = np.array([[2.0, 2.0]])
    backward(tsum(bicubic_sample_at(img, coords)))
    g = img.grad[:, :, 0]
    assert g[2, 2] == pytest.approx(1.0)  # integer coord: weight 1 at the node
    assert abs(g.sum() - 1.0) < 1e-12


def test_sample_at_rejects_nonfinite():
    img = Tensor(np.zeros((4, 4, 1)))
    with pytest.raises(ValueError):
        bicubic_sample_at(img, np.array([[np.nan, 1.0]]))


def test_upsample_gradient_fd(rng):
    from epimisr.tensor import finite_diff_check, l1_loss

    x0 = rng.random((3, 3, 2))
    tgt = Tensor(rng.random((6, 6, 2)))

    def fn(params):
        return l1_loss(bicubic_upsample(params["x"], 2), tgt)

    assert finite_diff_check(fn, {"x": Tensor(x0, requires_grad=True)}) < 1e-6
