from __future__ import annotations

import numpy as np
import pytest

from olm_tools.metrics import (
    SSIMWindow,
    gaussian_window,
    psnr,
    psnr_per_image,
    ssim,
    ssim_ops,
    ssim_per_image,
    window_matrix,
)
from olm_tools.ndgrad import Graph, finite_diff_grad, value_and_grad


def test_psnr() -> None:
    x = np.zeros((2, 4))
    assert psnr(x, x) == float("inf")
    assert psnr(x, x + 0.1) == pytest.approx(20.0)
    with pytest.raises(ValueError, match="Cannot compare"):
        psnr(x, np.zeros(8))


def test_psnr_per_image() -> None:
    x = np.zeros((2, 4))
    xhat = np.array([[0.0] * 4, [0.01] * 4])
    out = psnr_per_image(x, xhat)
    assert out[0] == np.inf
    assert out[1] == pytest.approx(40.0)


def test_gaussian_window_is_normalized() -> None:
    kernel = gaussian_window(7, 1.5)
    assert kernel.shape == (7, 7)
    assert kernel.sum() == pytest.approx(1.0)
    assert kernel[3, 3] == kernel.max()


@pytest.mark.parametrize("shape, positions", [((8, 8), 4), ((10, 7), 4), ((4, 4), 1)])
def test_window_matrix(shape: tuple[int, int], positions: int) -> None:
    w = window_matrix(shape)
    assert w.shape == (shape[0] * shape[1], positions)
    assert np.allclose(w.sum(axis=0), 1.0)


def test_window_validation() -> None:
    with pytest.raises(ValueError, match="Window size"):
        SSIMWindow(size=0)


def test_ssim_of_identical_images_is_one() -> None:
    image = np.random.default_rng(0).random((9, 9))
    assert ssim(image, image) == pytest.approx(1.0)


def test_ssim_drops_with_noise() -> None:
    rng = np.random.default_rng(1)
    image = rng.random((12, 12))
    slight = ssim(image, image + 0.02 * rng.standard_normal((12, 12)))
    heavy = ssim(image, image + 0.3 * rng.standard_normal((12, 12)))
    assert 1.0 > slight > heavy


def test_ssim_on_flattened_batches() -> None:
    rng = np.random.default_rng(2)
    x = rng.random((3, 64))
    y = rng.random((3, 64))
    per_image = ssim_per_image(x, y, (8, 8))
    assert per_image.shape == (3,)
    assert ssim(x, y, (8, 8)) == pytest.approx(per_image.mean())
    with pytest.raises(ValueError, match="`shape` is required"):
        ssim(x[0], y[0])
    with pytest.raises(ValueError, match="Cannot read"):
        ssim(x, y, (4, 4))


def test_ssim_on_graph_matches_eager_and_finite_differences() -> None:
    rng = np.random.default_rng(3)
    x = rng.random((2, 64))
    y = rng.random((2, 64))
    graph = Graph()
    leaf = graph.leaf("y", y)
    graph.set_root(ssim_ops(graph, graph.constant(x), leaf, (8, 8)))
    value, grads = value_and_grad(graph, {"y": y}, wrt=["y"])
    assert value == pytest.approx(ssim(x, y, (8, 8)))
    expected = finite_diff_grad(lambda v: ssim(x, v, (8, 8)), y)
    assert np.allclose(grads["y"], expected, atol=1e-6)
