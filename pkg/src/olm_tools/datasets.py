"""
Synthetic 2-D distributions, IDX image archives, and train/test splits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from xarray import DataArray

from olm_tools.io.core import read, write
from olm_tools.io.sidecar import parse_ints, read_sidecar, sidecar_path, write_sidecar
from olm_tools.ndgrad import as_tensor
from olm_tools.rng import counter_normal, derive_seed, generator
from olm_tools.type import DatasetKind  # noqa: TCH001

if TYPE_CHECKING:
    import numpy.typing as npt

    from olm_tools.type import PathLike, Tensor

logger = logging.getLogger(__name__)

GAUSSIAN_COV = np.array([[1.0, 0.8], [0.8, 1.0]])
# standard deviations of the horizontal and vertical axis components
KSPARSE_SCALES = (1.0, 0.8)
ELLIPSE_AXES = (1.0, 0.5)
ELLIPSE_ANGLE = np.pi / 6
ELLIPSE_JITTER = 0.05


@dataclass(frozen=True)
class PointCloud2D:
    points: Tensor
    seed: int

    def __post_init__(self) -> None:
        points = as_tensor(self.points)
        if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 1:
            msg = f"Expected an n x 2 array of points with n >= 1, got shape {points.shape}"
            raise ValueError(msg)
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return 2

    @property
    def data(self) -> Tensor:
        return self.points

    def subset(self, indices: npt.ArrayLike) -> PointCloud2D:
        return PointCloud2D(self.points[np.asarray(indices)], self.seed)


@dataclass(frozen=True)
class ImageDataset:
    """
    Greyscale images flattened row-major into an n x (height * width) array
    with values in [0, 1].
    """

    images: Tensor
    height: int
    width: int
    labels: npt.NDArray[np.uint8] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        images = as_tensor(self.images)
        if images.ndim != 2 or images.shape[1] != self.height * self.width:
            msg = (
                f"Expected images of shape (n, {self.height * self.width}) for "
                f"{self.height}x{self.width} pixels, got {images.shape}"
            )
            raise ValueError(msg)
        if images.size and (images.min() < 0 or images.max() > 1):
            msg = f"Pixel values must lie in [0, 1], got range [{images.min()}, {images.max()}]"
            raise ValueError(msg)
        if self.labels is not None and len(self.labels) != len(images):
            msg = f"Got {len(self.labels)} labels for {len(images)} images"
            raise ValueError(msg)
        object.__setattr__(self, "images", images)

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def d(self) -> int:
        return self.height * self.width

    @property
    def data(self) -> Tensor:
        return self.images

    def subset(self, indices: npt.ArrayLike) -> ImageDataset:
        indices = np.asarray(indices)
        labels = None if self.labels is None else self.labels[indices]
        return ImageDataset(self.images[indices], self.height, self.width, labels)


Dataset = PointCloud2D | ImageDataset


def as_matrix(data: Dataset | npt.ArrayLike) -> Tensor:
    """
    The n x d array behind a dataset, or `data` itself as a float64 array.
    """
    if isinstance(data, (PointCloud2D, ImageDataset)):
        return data.data
    array = as_tensor(data)
    if array.ndim != 2:
        msg = f"Expected an n x d data matrix, got shape {array.shape}"
        raise ValueError(msg)
    return array


def image_shape(data: Dataset | npt.ArrayLike) -> tuple[int, int] | None:
    if isinstance(data, ImageDataset):
        return (data.height, data.width)
    return None


class SplitSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_test: int = Field(default=512, ge=0)
    seed: int = Field(ge=0)


def _check_count(n: int) -> None:
    if n < 1:
        msg = f"Sample count must be at least 1, got {n}"
        raise ValueError(msg)


def _draws(n: int, seed: int, width: int) -> Tensor:
    # row i depends on (seed, i) only, so a larger sample extends a smaller one
    return counter_normal(seed, np.arange(n, dtype=np.uint64), 0, width)


def sample_gaussian2d(n: int, seed: int, cov: npt.ArrayLike = GAUSSIAN_COV) -> PointCloud2D:
    """
    Zero-mean Gaussian samples with covariance `cov`.
    """
    _check_count(n)
    chol = np.linalg.cholesky(np.asarray(cov, dtype=np.float64))
    z = _draws(n, seed, 2)
    return PointCloud2D(z @ chol.T, seed)


def sample_ksparse2d(
    n: int, seed: int, scales: tuple[float, float] = KSPARSE_SCALES
) -> PointCloud2D:
    """
    Points on exactly one coordinate axis, chosen with equal probability, with
    a Gaussian position of standard deviation `scales[axis]` along it.
    """
    _check_count(n)
    z = _draws(n, seed, 2)
    horizontal = z[:, 0] < 0
    s = z[:, 1]
    points = np.zeros((n, 2))
    points[horizontal, 0] = s[horizontal] * scales[0]
    points[~horizontal, 1] = s[~horizontal] * scales[1]
    return PointCloud2D(points, seed)


def ellipse_rotation(angle: float = ELLIPSE_ANGLE) -> Tensor:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def sample_manifold2d(
    n: int,
    seed: int,
    *,
    axes: tuple[float, float] = ELLIPSE_AXES,
    angle: float = ELLIPSE_ANGLE,
    jitter: float = ELLIPSE_JITTER,
) -> PointCloud2D:
    """
    Points on a rotated ellipse at a uniform parameter angle, displaced along
    the ellipse normal by Gaussian jitter of standard deviation `jitter`.
    """
    _check_count(n)
    z = _draws(n, seed, 3)
    # the direction of a standard normal pair is uniform on the circle
    t = np.arctan2(z[:, 1], z[:, 0])
    offset = z[:, 2] * jitter
    a, b = axes
    on_curve = np.stack([a * np.cos(t), b * np.sin(t)], axis=1)
    normal = np.stack([b * np.cos(t), a * np.sin(t)], axis=1)
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    local = on_curve + offset[:, None] * normal
    return PointCloud2D(local @ ellipse_rotation(angle).T, seed)


def load_idx_images(path: PathLike) -> ImageDataset:
    """
    Load an IDX image archive (optionally gzip-compressed), scaling bytes to
    [0, 1].
    """
    raw = read(path, rank=3)
    n, height, width = raw.shape
    logger.info("Loaded %d images of %dx%d pixels from %s", n, height, width, path)
    return ImageDataset(raw.reshape(n, height * width) / 255.0, height, width)


def load_idx_labels(path: PathLike) -> npt.NDArray[np.uint8]:
    return np.array(read(path, rank=1))


def preprocess(ds: ImageDataset, target: tuple[int, int]) -> ImageDataset:
    """
    Block-average `ds` down to `target` = (height, width) pixels.
    """
    height, width = target
    if (height, width) == (ds.height, ds.width):
        return ds
    if height < 1 or width < 1 or ds.height % height or ds.width % width:
        msg = (
            f"Target size {height}x{width} must evenly divide the source size "
            f"{ds.height}x{ds.width}"
        )
        raise ValueError(msg)
    stack = DataArray(ds.images.reshape(len(ds), ds.height, ds.width), dims=("sample", "y", "x"))
    coarse = stack.coarsen(y=ds.height // height, x=ds.width // width).mean()
    return ImageDataset(coarse.values.reshape(len(ds), height * width), height, width, ds.labels)


def split_indices(n: int, spec: SplitSpec) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.int64]]:
    """
    Sorted train and test indices of a seeded partition of `range(n)`.
    """
    if spec.n_test >= n:
        msg = f"Cannot hold out {spec.n_test} test items from a dataset of {n}"
        raise ValueError(msg)
    order = generator(spec.seed).permutation(n)
    return np.sort(order[spec.n_test :]), np.sort(order[: spec.n_test])


def split(ds: Dataset, spec: SplitSpec) -> tuple[Any, Any]:
    train, test = split_indices(len(ds), spec)
    return ds.subset(train), ds.subset(test)


def cache_dataset(ds: ImageDataset, path: PathLike) -> None:
    """
    Store `ds` as an OLMT tensor with a sidecar giving the image size.
    """
    write(path, ds.images)
    write_sidecar(sidecar_path(path), {"height": ds.height, "width": ds.width})


def load_cached(path: PathLike) -> ImageDataset:
    meta = read_sidecar(sidecar_path(path))
    (height,) = parse_ints(meta["height"])
    (width,) = parse_ints(meta["width"])
    return ImageDataset(read(path), height, width)


class DatasetConfig(BaseModel):
    """
    Which data an experiment runs on.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: DatasetKind
    n: int = Field(default=20_000, ge=1)
    path: Path | None = None
    target: tuple[int, int] | None = None
    limit: int | None = Field(default=None, ge=2)
    seed: int = Field(ge=0)
    split: SplitSpec

    @model_validator(mode="before")
    @classmethod
    def _derive_split_seed(cls, data: Any) -> Any:
        seed = data.get("seed") if isinstance(data, dict) else None
        if isinstance(seed, int) and seed >= 0:
            split_cfg = dict(data.get("split") or {})
            split_cfg.setdefault("seed", derive_seed(data["seed"], 0) >> 1)
            data = {**data, "split": split_cfg}
        return data

    @field_validator("path")
    @classmethod
    def _path_exists(cls, path: Path | None) -> Path | None:
        if path is not None and "://" not in str(path) and not path.exists():
            msg = f"Dataset file {path} does not exist"
            raise ValueError(msg)
        return path

    @model_validator(mode="after")
    def _check_source(self) -> DatasetConfig:
        if self.kind == "idx" and self.path is None:
            msg = "An idx dataset needs a `path`"
            raise ValueError(msg)
        return self

    @property
    def is_image(self) -> bool:
        return self.kind == "idx"


def load_dataset(cfg: DatasetConfig) -> Dataset:
    """
    Build the dataset `cfg` describes.
    """
    if cfg.kind == "gaussian2d":
        return sample_gaussian2d(cfg.n, cfg.seed)
    if cfg.kind == "ksparse2d":
        return sample_ksparse2d(cfg.n, cfg.seed)
    if cfg.kind == "manifold2d":
        return sample_manifold2d(cfg.n, cfg.seed)
    assert cfg.path is not None
    ds = load_idx_images(cfg.path)
    if cfg.target is not None:
        ds = preprocess(ds, cfg.target)
    if cfg.limit is not None and cfg.limit < len(ds):
        keep = np.sort(generator(cfg.seed).permutation(len(ds))[: cfg.limit])
        ds = ds.subset(keep)
    return ds
