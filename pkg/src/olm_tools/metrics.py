"""
Image quality: PSNR, and single-scale SSIM expressed as matrix products so the
same code evaluates eagerly or on a recorded `Graph`.

Images are rows of a flat n x (height * width) array. The SSIM window is a
d x P matrix whose columns hold the window weights at each of the P valid
window positions, so local means are a single matmul.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Any

import numpy as np

from olm_tools.ndgrad import numpy_ops

if TYPE_CHECKING:
    import numpy.typing as npt

    from olm_tools.type import Tensor


def psnr(x: npt.ArrayLike, xhat: npt.ArrayLike) -> float:
    """
    Peak signal-to-noise ratio in dB for signals with a dynamic range of 1.
    An exact match returns `inf`.
    """
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        msg = f"Cannot compare arrays of shape {x.shape} and {xhat.shape}"
        raise ValueError(msg)
    mse = float(np.mean((x - xhat) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def psnr_per_image(x: npt.ArrayLike, xhat: npt.ArrayLike) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape or x.ndim != 2:
        msg = f"Expected two n x d arrays of equal shape, got {x.shape} and {xhat.shape}"
        raise ValueError(msg)
    mse = np.mean((x - xhat) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        return np.where(mse == 0, np.inf, 10.0 * np.log10(1.0 / np.where(mse == 0, 1.0, mse)))


@dataclass(frozen=True)
class SSIMWindow:
    size: int = 7
    sigma: float = 1.5
    c1: float = 0.01**2
    c2: float = 0.03**2

    def __post_init__(self) -> None:
        if self.size < 1 or self.sigma <= 0:
            msg = f"Window size must be >= 1 and sigma > 0, got {self.size} and {self.sigma}"
            raise ValueError(msg)


def gaussian_window(size: int, sigma: float) -> Tensor:
    """
    A normalized `size` x `size` Gaussian kernel.
    """
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2
    profile = np.exp(-(offsets**2) / (2 * sigma**2))
    kernel = np.outer(profile, profile)
    return kernel / kernel.sum()


@lru_cache(maxsize=16)
def _window_matrix(height: int, width: int, size: int, sigma: float) -> Tensor:
    if height < size or width < size:
        matrix = np.full((height * width, 1), 1.0 / (height * width))
    else:
        kernel = gaussian_window(size, sigma)
        rows, cols = height - size + 1, width - size + 1
        matrix = np.zeros((height, width, rows * cols))
        for i in range(rows):
            for j in range(cols):
                matrix[i : i + size, j : j + size, i * cols + j] = kernel
        matrix = matrix.reshape(height * width, rows * cols)
    matrix.setflags(write=False)
    return matrix


def window_matrix(shape: tuple[int, int], window: SSIMWindow = SSIMWindow()) -> Tensor:
    """
    The d x P matrix of window weights over all valid positions in an image of
    `shape`. Images smaller than the window on either side get a single uniform
    window over the whole image.
    """
    height, width = shape
    if height < 1 or width < 1:
        msg = f"Image shape must be positive, got {shape}"
        raise ValueError(msg)
    return _window_matrix(height, width, window.size, window.sigma)


def ssim_map(ops: Any, x: Any, y: Any, weights: Tensor, window: SSIMWindow) -> Any:
    """
    SSIM at every window position, shape (n, P).
    """
    w = ops.constant(weights)
    ux = ops.matmul(x, w)
    uy = ops.matmul(y, w)
    uxx = ops.square(ux)
    uyy = ops.square(uy)
    uxy = ops.mul(ux, uy)
    var_x = ops.sub(ops.matmul(ops.square(x), w), uxx)
    var_y = ops.sub(ops.matmul(ops.square(y), w), uyy)
    cov = ops.sub(ops.matmul(ops.mul(x, y), w), uxy)
    a1 = ops.add(ops.scale(uxy, 2.0), window.c1)
    b1 = ops.add(ops.add(uxx, uyy), window.c1)
    a2 = ops.add(ops.scale(cov, 2.0), window.c2)
    b2 = ops.add(ops.add(var_x, var_y), window.c2)
    return ops.div(ops.mul(a1, a2), ops.mul(b1, b2))


def ssim_ops(
    ops: Any, x: Any, y: Any, shape: tuple[int, int], window: SSIMWindow = SSIMWindow()
) -> Any:
    """
    Mean SSIM over images and window positions, on either backend.
    """
    return ops.mean(ssim_map(ops, x, y, window_matrix(shape, window), window))


def _as_batch(x: npt.ArrayLike, shape: tuple[int, int]) -> Tensor:
    array = np.asarray(x, dtype=np.float64)
    d = shape[0] * shape[1]
    if array.shape == shape:
        return array.reshape(1, d)
    if array.ndim == 1 and array.size == d:
        return array.reshape(1, d)
    if array.ndim == 2 and array.shape[1] == d:
        return array
    msg = f"Cannot read an array of shape {array.shape} as images of shape {shape}"
    raise ValueError(msg)


def ssim(
    x: npt.ArrayLike,
    xhat: npt.ArrayLike,
    shape: tuple[int, int] | None = None,
    window: SSIMWindow = SSIMWindow(),
) -> float:
    """
    Single-scale SSIM between two images (or two equal batches of flattened
    images), averaged over window positions and images.

    Parameters
    ----------
    x, xhat: array-like
        2-D images, or flattened images when `shape` is given.
    shape: (height, width), optional
        Image shape. Defaults to the shape of `x` when `x` is 2-D and `shape`
        is not given.
    window: SSIMWindow
        Gaussian window size, width and stabilizing constants.
    """
    x_arr = np.asarray(x, dtype=np.float64)
    if shape is None:
        if x_arr.ndim != 2:
            msg = "`shape` is required for flattened images"
            raise ValueError(msg)
        shape = (x_arr.shape[0], x_arr.shape[1])
    a = _as_batch(x_arr, shape)
    b = _as_batch(xhat, shape)
    if a.shape != b.shape:
        msg = f"Cannot compare image batches of shape {a.shape} and {b.shape}"
        raise ValueError(msg)
    return float(ssim_ops(numpy_ops, a, b, shape, window))


def ssim_per_image(
    x: npt.ArrayLike, xhat: npt.ArrayLike, shape: tuple[int, int], window: SSIMWindow = SSIMWindow()
) -> Tensor:
    a = _as_batch(x, shape)
    b = _as_batch(xhat, shape)
    if a.shape != b.shape:
        msg = f"Cannot compare image batches of shape {a.shape} and {b.shape}"
        raise ValueError(msg)
    return np.mean(ssim_map(numpy_ops, a, b, window_matrix(shape, window), window), axis=1)
