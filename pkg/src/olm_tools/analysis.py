"""
Diagnostics of measurement matrices: distances between the subspaces they
span, and the statistics of the measurements they produce on a dataset.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from itertools import combinations
from typing import TYPE_CHECKING

import fsspec
import numpy as np
from scipy import stats
from xarray import DataArray, Dataset

from olm_tools.datasets import as_matrix
from olm_tools.measurement import MeasurementMatrix
from olm_tools.parallel import parallel_map
from olm_tools.rng import generator

if TYPE_CHECKING:
    from collections.abc import Mapping

    import numpy.typing as npt

    from olm_tools.datasets import Dataset as DataSource
    from olm_tools.type import PathLike, Tensor

logger = logging.getLogger(__name__)

MI_BINS = 16


def _matrix(m: MeasurementMatrix | npt.ArrayLike) -> Tensor:
    return m.matrix if isinstance(m, MeasurementMatrix) else np.asarray(m, dtype=np.float64)


def principal_angles(
    a: MeasurementMatrix | npt.ArrayLike, b: MeasurementMatrix | npt.ArrayLike
) -> Tensor:
    """
    Principal angles between the column spans of two orthonormal d x k
    matrices, ascending.

    Angles whose cosine exceeds 1/√2 are taken from the sines (the singular
    values of B − AAᵀB) rather than the cosines, so that nearly identical
    subspaces give angles at rounding level instead of √eps.
    """
    ma, mb = _matrix(a), _matrix(b)
    if ma.shape != mb.shape:
        msg = f"Cannot compare subspaces spanned by matrices of shape {ma.shape} and {mb.shape}"
        raise ValueError(msg)
    # a fixed argument order makes the result exactly symmetric
    if ma.tobytes() > mb.tobytes():
        ma, mb = mb, ma
    cosines = np.clip(np.linalg.svd(ma.T @ mb, compute_uv=False), 0.0, 1.0)
    sines = np.clip(np.sort(np.linalg.svd(mb - ma @ (ma.T @ mb), compute_uv=False)), 0.0, 1.0)
    return np.where(cosines**2 > 0.5, np.arcsin(sines), np.arccos(cosines))


def grassmann_distance(
    a: MeasurementMatrix | npt.ArrayLike, b: MeasurementMatrix | npt.ArrayLike
) -> float:
    """
    The Euclidean norm of the principal angles between span(a) and span(b).
    """
    return float(np.linalg.norm(principal_angles(a, b)))


def distance_matrix(matrices: Mapping[str, MeasurementMatrix]) -> DataArray:
    """
    Pairwise Grassmann distances between named measurement matrices, as a
    labelled square array with zero diagonal.
    """
    names = list(matrices)
    pairs = list(combinations(range(len(names)), 2))
    distances = parallel_map(
        lambda ij: grassmann_distance(matrices[names[ij[0]]], matrices[names[ij[1]]]), pairs
    )
    result = np.zeros((len(names), len(names)))
    for (i, j), value in zip(pairs, distances):
        result[i, j] = result[j, i] = value
    return DataArray(result, dims=("a", "b"), coords={"a": names, "b": names}, name="grassmann_distance")


def measurement_variance_spectrum(
    M: MeasurementMatrix | npt.ArrayLike, data: DataSource | npt.ArrayLike
) -> Tensor:
    """
    The variance (1/N normalization) of each measurement Mᵀx over `data`,
    sorted descending.
    """
    y = as_matrix(data) @ _matrix(M)
    return np.sort(y.var(axis=0))[::-1]


def _skewness(y: Tensor) -> tuple[Tensor, npt.NDArray[np.bool_]]:
    degenerate = np.ptp(y, axis=0) == 0
    skew = np.zeros(y.shape[1])
    if not np.all(degenerate):
        skew[~degenerate] = stats.skew(y[:, ~degenerate], axis=0, bias=True)
    bad = ~np.isfinite(skew)
    skew[bad] = 0.0
    return skew, degenerate | bad


def skewness_profile(
    M: MeasurementMatrix | npt.ArrayLike, data: DataSource | npt.ArrayLike
) -> Tensor:
    """
    |skewness| of each measurement Mᵀx over `data`, sorted descending.

    Skewness is the biased third standardized moment. Columns without variance
    are reported as 0, with a warning.
    """
    skew, degenerate = _skewness(as_matrix(data) @ _matrix(M))
    if np.any(degenerate):
        msg = f"Measurements {np.flatnonzero(degenerate).tolist()} have no variance; their skewness is reported as 0"
        warnings.warn(msg, stacklevel=2)
    return np.sort(np.abs(skew))[::-1]


def _edges(column: Tensor, bins: int) -> Tensor:
    return np.linspace(column.min(), column.max(), bins + 1)


def _pair_information(x: Tensor, y: Tensor, edges_x: Tensor, edges_y: Tensor) -> float:
    joint, _, _ = np.histogram2d(x, y, bins=(edges_x, edges_y))
    p = joint / joint.sum()
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nonzero = p > 0
    return float(np.sum(p[nonzero] * np.log(p[nonzero] / (px @ py)[nonzero])))


def mutual_information_matrix(
    y: npt.ArrayLike, bins: int = MI_BINS
) -> tuple[Tensor, npt.NDArray[np.bool_]]:
    """
    Plug-in mutual information in nats between every pair of columns of `y`,
    from histograms with `bins` equal-width bins spanning each column's range.
    The diagonal holds the binned entropy of each column.

    Returns
    -------
    The symmetric k x k information matrix, and a mask of columns with a
    single value, whose rows and columns are 0.
    """
    values = np.asarray(y, dtype=np.float64)
    if values.ndim != 2:
        msg = f"Expected an n x k array of measurements, got shape {values.shape}"
        raise ValueError(msg)
    if bins < 1:
        msg = f"Need at least one bin, got {bins}"
        raise ValueError(msg)
    k = values.shape[1]
    degenerate = np.ptp(values, axis=0) == 0
    edges = [_edges(values[:, i], bins) for i in range(k)]
    pairs = [(i, j) for i in range(k) for j in range(i, k) if not (degenerate[i] or degenerate[j])]
    information = parallel_map(
        lambda ij: _pair_information(values[:, ij[0]], values[:, ij[1]], edges[ij[0]], edges[ij[1]]),
        pairs,
    )
    result = np.zeros((k, k))
    for (i, j), value in zip(pairs, information):
        result[i, j] = result[j, i] = value
    return result, degenerate


def pairwise_mutual_information(
    M: MeasurementMatrix | npt.ArrayLike, data: DataSource | npt.ArrayLike, bins: int = MI_BINS
) -> Tensor:
    """
    The k x k mutual information matrix (nats) of the measurements Mᵀx over
    `data`; see `mutual_information_matrix`. Measurements with a single value
    are reported as 0, with a warning.
    """
    result, degenerate = mutual_information_matrix(as_matrix(data) @ _matrix(M), bins)
    if np.any(degenerate):
        msg = f"Measurements {np.flatnonzero(degenerate).tolist()} take a single value; their mutual information is reported as 0"
        warnings.warn(msg, stacklevel=2)
    return result


@dataclass(frozen=True)
class MeasurementStats:
    """
    Per-column statistics of the measurements of a dataset, in column order.
    """

    variance: Tensor
    skewness: Tensor
    mutual_information: Tensor
    zero_variance: npt.NDArray[np.bool_]
    degenerate_mi: npt.NDArray[np.bool_]

    @property
    def k(self) -> int:
        return len(self.variance)

    @property
    def flagged(self) -> bool:
        return bool(np.any(self.zero_variance) or np.any(self.degenerate_mi))


def measurement_stats(
    M: MeasurementMatrix | npt.ArrayLike, data: DataSource | npt.ArrayLike, bins: int = MI_BINS
) -> MeasurementStats:
    y = as_matrix(data) @ _matrix(M)
    skew, zero_variance = _skewness(y)
    mi, degenerate = mutual_information_matrix(y, bins)
    result = MeasurementStats(
        variance=y.var(axis=0),
        skewness=skew,
        mutual_information=mi,
        zero_variance=zero_variance,
        degenerate_mi=degenerate,
    )
    if result.flagged:
        msg = f"Degenerate measurement columns: {np.flatnonzero(zero_variance | degenerate).tolist()}"
        warnings.warn(msg, stacklevel=2)
    return result


def stats_table(summary: MeasurementStats) -> Dataset:
    """
    One row per measurement column: variance, skewness, |skewness|, mean
    off-diagonal mutual information and the degeneracy flags.
    """
    k = summary.k
    off_diagonal = ~np.eye(k, dtype=bool)
    mean_mi = (
        np.array([summary.mutual_information[i][off_diagonal[i]].mean() for i in range(k)])
        if k > 1
        else np.zeros(k)
    )
    coords = {"component": np.arange(k)}
    return Dataset(
        {
            "variance": DataArray(summary.variance, dims="component", coords=coords),
            "skewness": DataArray(summary.skewness, dims="component", coords=coords),
            "abs_skewness": DataArray(np.abs(summary.skewness), dims="component", coords=coords),
            "mean_mi": DataArray(mean_mi, dims="component", coords=coords),
            "zero_variance": DataArray(summary.zero_variance, dims="component", coords=coords),
            "degenerate_mi": DataArray(summary.degenerate_mi, dims="component", coords=coords),
        }
    )


def write_stats(summary: MeasurementStats, path: PathLike) -> None:
    frame = stats_table(summary).to_dataframe().reset_index()
    with fsspec.open(str(path), mode="w") as fh:
        frame.to_csv(fh, index=False)
    logger.info("Wrote measurement statistics to %s", path)


@dataclass(frozen=True)
class PairedComparison:
    """
    Paired t-test of `a` against `b`; `mean_diff` is mean(a − b).
    """

    n: int
    mean_a: float
    mean_b: float
    mean_diff: float
    statistic: float
    pvalue: float

    def to_dict(self) -> dict[str, float]:
        return {
            "n": self.n,
            "mean_a": self.mean_a,
            "mean_b": self.mean_b,
            "mean_diff": self.mean_diff,
            "statistic": self.statistic,
            "pvalue": self.pvalue,
        }


def _paired(a: npt.ArrayLike, b: npt.ArrayLike) -> tuple[Tensor, Tensor]:
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.shape != y.shape:
        msg = f"Paired samples must have equal length, got {len(x)} and {len(y)}"
        raise ValueError(msg)
    if len(x) < 2:
        msg = f"Need at least two pairs, got {len(x)}"
        raise ValueError(msg)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        msg = "Paired samples must be finite"
        raise ValueError(msg)
    return x, y


def paired_comparison(a: npt.ArrayLike, b: npt.ArrayLike) -> PairedComparison:
    x, y = _paired(a, b)
    result = stats.ttest_rel(x, y)
    return PairedComparison(
        n=len(x),
        mean_a=float(x.mean()),
        mean_b=float(y.mean()),
        mean_diff=float(np.mean(x - y)),
        statistic=float(result.statistic),
        pvalue=float(result.pvalue),
    )


@dataclass(frozen=True)
class BootstrapInterval:
    mean_diff: float
    low: float
    high: float
    level: float

    def to_dict(self) -> dict[str, float]:
        return {"mean_diff": self.mean_diff, "low": self.low, "high": self.high, "level": self.level}


def paired_bootstrap(
    a: npt.ArrayLike, b: npt.ArrayLike, n_boot: int = 2000, seed: int = 0, level: float = 0.95
) -> BootstrapInterval:
    """
    Percentile bootstrap interval of mean(a − b), resampling pairs.
    """
    if n_boot < 1 or not 0 < level < 1:
        msg = f"Need n_boot >= 1 and 0 < level < 1, got {n_boot} and {level}"
        raise ValueError(msg)
    x, y = _paired(a, b)
    diff = x - y
    idx = generator(seed).integers(0, len(diff), size=(n_boot, len(diff)))
    means = diff[idx].mean(axis=1)
    tail = (1.0 - level) / 2
    low, high = np.quantile(means, [tail, 1.0 - tail])
    return BootstrapInterval(float(diff.mean()), float(low), float(high), level)
