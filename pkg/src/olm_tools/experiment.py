"""
The experiment pipeline.

An experiment directory is filled by stages that each read and write files,
so any stage can be re-run on its own:

    train-denoiser  model/ (checkpoint and loss history)
    sweep2d         curves.csv, sweep.json (2-D datasets only)
    optimize-olm    measurements/<variant>_k<k>.olmt
    baselines       measurements/<method>_k<k>.olmt
    evaluate        metrics.json, reconstructions/
    analyze         stats/<method>_k<k>.csv, analysis.json
    report          *.svg, *.pgm, summary.txt, report.json

`manifest.json` records the config hash, the status and wall-clock time of
every stage and the sha256 of every other file in the directory. It is
written even when a stage fails.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Any, Literal

import fsspec
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from xarray import DataArray, Dataset

from olm_tools._version import version
from olm_tools.analysis import (
    MI_BINS,
    distance_matrix,
    measurement_stats,
    paired_bootstrap,
    paired_comparison,
    write_stats,
)
from olm_tools.artifacts import (
    ANALYSIS_FILE,
    CONFIG_FILE,
    CURVES_FILE,
    DATA_DIR,
    MANIFEST,
    MEASUREMENT_DIR,
    METRICS_FILE,
    MODEL_DIR,
    RECONSTRUCTION_DIR,
    STATS_DIR,
    SWEEP_FILE,
    collect_checksums,
    load_measurements,
    measurement_path,
    write_json,
)
from olm_tools.baselines import (
    fast_ica,
    pca,
    principal_components,
    projection_loss,
    random_orthonormal,
)
from olm_tools.config import (
    ExperimentConfig,
    SweepConfig,
    config_hash,
    dump_config,
    load_config,
    reseed,
    with_output,
)
from olm_tools.datasets import (
    GAUSSIAN_COV,
    as_matrix,
    cache_dataset,
    image_shape,
    load_cached,
    load_dataset,
    split,
)
from olm_tools.denoiser import (
    denoising_mse,
    fit_denoiser,
    gaussian_denoising_mse,
    load_model,
    oracle_prior,
    save_model,
)
from olm_tools.io.core import write
from olm_tools.measurement import MeasurementMatrix, fingerprint, save_measurement
from olm_tools.metrics import psnr_per_image, ssim_per_image
from olm_tools.optimize import Objective, olm_noise_robust, olm_optimize, olm_sequential
from olm_tools.parallel import parallel_map
from olm_tools.report import render_report
from olm_tools.rng import chain_keys, counter_normal, derive_seed, generator
from olm_tools.sampler import SamplerConfig, mmse_estimate, parameter_study, project

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    import numpy.typing as npt

    from olm_tools.type import Denoiser, PathLike, Tensor

logger = logging.getLogger(__name__)

STAGES = (
    "train-denoiser",
    "sweep2d",
    "optimize-olm",
    "baselines",
    "evaluate",
    "analyze",
    "report",
)
BASELINE_STREAM = 4
EVAL_STREAM = 5
NOISE_STREAM = 6
ANALYSIS_STREAM = 7
DENOISER_SIGMAS = (0.1, 0.3, 0.5, 1.0)
EVAL_CHUNK = 32
STUDY_ITEMS = 64
N_PREVIEW = 16

StageStatus = Literal["ok", "failed", "skipped"]


class StageRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    status: StageStatus
    seconds: float
    error: str | None = None


class RunManifest(BaseModel):
    """
    Provenance of an experiment directory. Timings live in `stages` and are
    not part of any checksum.
    """

    model_config = ConfigDict(extra="forbid")

    config_hash: str
    version: str
    stages: dict[str, StageRecord] = Field(default_factory=dict)
    checksums: dict[str, str] = Field(default_factory=dict)

    @classmethod
    def load(cls, directory: PathLike) -> RunManifest | None:
        path = Path(directory) / MANIFEST
        if not path.exists():
            return None
        return cls.model_validate_json(path.read_text())

    def save(self, directory: PathLike) -> None:
        with fsspec.open(str(Path(directory) / MANIFEST), mode="w") as fh:
            fh.write(self.model_dump_json(indent=2))


def unit_measurement(theta: float) -> Tensor:
    """
    The 2 x 1 measurement along the unit vector at angle `theta`.
    """
    return np.array([[np.cos(theta)], [np.sin(theta)]])


def wrap_angle(theta: float) -> float:
    """
    The angle in [−π/2, π/2) spanning the same line as `theta`.
    """
    return float((theta + np.pi / 2) % np.pi - np.pi / 2)


def projection_mse(theta: float, data: npt.ArrayLike) -> float:
    """
    Mean squared norm E‖x − vvᵀx‖² of the residual of projecting the
    mean-subtracted rows of `data` onto the unit vector v at angle `theta`.
    """
    return projection_loss(unit_measurement(theta), data)


def prior_mse(
    model: Denoiser, theta: float, data: npt.ArrayLike, sampler_cfg: SamplerConfig, n_samples: int
) -> float:
    """
    Mean squared norm of the error of MMSE reconstructions through the
    denoiser prior from measurements along the unit vector at angle `theta`.
    """
    x = np.asarray(data, dtype=np.float64)
    v = unit_measurement(theta)
    xhat = mmse_estimate(model, v, x @ v, n_samples, sampler_cfg)
    return float(np.mean(np.sum((xhat - x) ** 2, axis=1)))


def sweep_2d(
    model: Denoiser, data: npt.ArrayLike, sweep_cfg: SweepConfig, sampler_cfg: SamplerConfig
) -> Dataset:
    """
    Reconstruction error of every unit measurement vector on a grid of angles
    `linspace(−π/2, π/2, n_theta, endpoint=False)`, for linear projection and
    for reconstruction through the denoiser prior.

    All angles share the sampler seed, so the prior curve compares angles
    under common noise.
    """
    x = as_matrix(data)
    if x.shape[1] != 2:
        msg = f"The angle sweep needs 2-D data, got dimension {x.shape[1]}"
        raise ValueError(msg)
    thetas = np.linspace(-np.pi / 2, np.pi / 2, sweep_cfg.n_theta, endpoint=False)
    projection = [projection_mse(theta, x) for theta in thetas]
    prior = parallel_map(
        lambda theta: prior_mse(model, theta, x, sampler_cfg, sweep_cfg.n_samples), list(thetas)
    )
    coords = {"theta": thetas}
    return Dataset(
        {
            "projection_mse": DataArray(projection, dims="theta", coords=coords),
            "prior_mse": DataArray(prior, dims="theta", coords=coords),
        }
    )


def sweep_optimum(curves: Dataset, data: npt.ArrayLike) -> dict[str, Any]:
    """
    The argmin of each sweep curve, and the angle of the leading principal
    component of `data`.
    """
    _, vectors = principal_components(data)
    leading = vectors[:, 0]
    thetas = curves["theta"].values
    record: dict[str, Any] = {
        "pc_theta": wrap_angle(float(np.arctan2(leading[1], leading[0]))),
        "grid_step": float(thetas[1] - thetas[0]),
    }
    for name in ("projection_mse", "prior_mse"):
        values = curves[name].values
        best = int(np.argmin(values))
        record[name.removesuffix("_mse")] = {"theta": float(thetas[best]), "mse": float(values[best])}
    return record


def curves_to_csv(curves: Dataset, path: PathLike) -> None:
    frame = curves.to_dataframe().reset_index()
    with fsspec.open(str(path), mode="w") as fh:
        frame.to_csv(fh, index=False)


def reconstruct(
    model: Denoiser,
    M: MeasurementMatrix,
    x: Tensor,
    sampler_cfg: SamplerConfig,
    n_samples: int,
    *,
    noise: Tensor | None = None,
) -> Tensor:
    """
    MMSE reconstructions of the rows of `x` from `x @ M` (plus `noise`), in
    parallel chunks keyed by item position.
    """
    measurements = M.measure(x)
    if noise is not None:
        measurements = measurements + noise
    spans = [(a, min(a + EVAL_CHUNK, len(x))) for a in range(0, len(x), EVAL_CHUNK)]
    parts = parallel_map(
        lambda span: mmse_estimate(
            model, M, measurements[span[0] : span[1]], n_samples, sampler_cfg, item_offset=span[0]
        ),
        spans,
    )
    return np.concatenate(parts, axis=0)


def image_scores(x: Tensor, xhat: Tensor, shape: tuple[int, int] | None) -> dict[str, Tensor]:
    scores = {"psnr": psnr_per_image(x, xhat), "mse": np.mean((x - xhat) ** 2, axis=1)}
    if shape is not None:
        scores["ssim"] = ssim_per_image(x, xhat, shape)
    return scores


def _finite_mean(values: Tensor) -> float:
    finite = values[np.isfinite(values)]
    return float(finite.mean()) if finite.size else float("inf")


def _summary(scores: dict[str, Tensor]) -> dict[str, Any]:
    entry: dict[str, Any] = {name: values for name, values in scores.items()}
    entry.update({f"mean_{name}": _finite_mean(values) for name, values in scores.items()})
    return entry


def _compare(a: Tensor, b: Tensor, n_boot: int, seed: int) -> dict[str, Any] | None:
    keep = np.isfinite(a) & np.isfinite(b)
    if keep.sum() < 2:
        return None
    result: dict[str, Any] = paired_comparison(a[keep], b[keep]).to_dict()
    result["bootstrap"] = paired_bootstrap(a[keep], b[keep], n_boot, seed).to_dict()
    return result


@dataclass
class Run:
    """
    An experiment directory and the config it is run with.
    """

    cfg: ExperimentConfig
    out: Path

    @cached_property
    def data(self) -> tuple[Any, Any]:
        cfg = self.cfg.dataset
        if cfg.is_image:
            key = hashlib.sha256(cfg.model_dump_json().encode()).hexdigest()[:12]
            cache = self.out / DATA_DIR / f"dataset-{key}.olmt"
            if cache.exists():
                ds = load_cached(cache)
            else:
                ds = load_dataset(cfg)
                cache.parent.mkdir(parents=True, exist_ok=True)
                cache_dataset(ds, cache)
        else:
            ds = load_dataset(cfg)
        return split(ds, cfg.split)

    @cached_property
    def prior(self) -> Denoiser:
        if self.cfg.prior == "oracle":
            return oracle_prior(self.cfg.dataset.kind)
        directory = self.out / MODEL_DIR
        if not (directory / "model.txt").exists():
            msg = f"No denoiser checkpoint in {directory}; run train-denoiser first"
            raise FileNotFoundError(msg)
        return load_model(directory)

    def save(self, m: MeasurementMatrix, method: str, k: int) -> None:
        path = measurement_path(self.out, method, k)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_measurement(m.with_attrs(method=method), path)


def train_stage(run: Run) -> StageStatus:
    if run.cfg.prior == "oracle":
        logger.info("Reconstructing with the analytic prior; no denoiser to train")
        return "skipped"
    train, _ = run.data
    model, history = fit_denoiser(train, run.cfg.denoiser)
    save_model(model, run.out / MODEL_DIR)
    write_json(run.out / MODEL_DIR / "history.json", {"loss": history})
    return "ok"


def sweep_stage(run: Run) -> StageStatus:
    if run.cfg.dataset.is_image:
        logger.info("The angle sweep applies to 2-D datasets only")
        return "skipped"
    _, test = run.data
    x = as_matrix(test)[: run.cfg.sweep.n_items]
    curves = sweep_2d(run.prior, x, run.cfg.sweep, run.cfg.sampler)
    curves_to_csv(curves, run.out / CURVES_FILE)
    write_json(run.out / SWEEP_FILE, sweep_optimum(curves, x))
    return "ok"


def optimize_stage(run: Run) -> StageStatus:
    cfg = run.cfg
    if cfg.optimize.epochs == 0:
        logger.info("Measurement optimization has zero epochs; skipping")
        return "skipped"
    train, _ = run.data
    shape = image_shape(train)
    objective = Objective(cfg.objective, shape)
    model = run.prior
    for variant in cfg.variants:
        if variant == "olm_seq":
            nested = olm_sequential(model, train, cfg.k[-1], objective, cfg.optimize, cfg.sampler)
            for k in cfg.k:
                run.save(nested[k - 1], variant, k)
            continue
        for k in cfg.k:
            logger.info("Optimizing %s with k=%d", variant, k)
            if variant == "olm":
                m = olm_optimize(model, train, k, objective, cfg.optimize, cfg.sampler)
            elif variant == "olm_ssim":
                m = olm_optimize(model, train, k, Objective("ssim", shape), cfg.optimize, cfg.sampler)
            else:
                m = olm_noise_robust(
                    model, train, k, cfg.train_noise, objective, cfg.optimize, cfg.sampler
                )
            run.save(m, variant, k)
    return "ok"


def baselines_stage(run: Run) -> StageStatus:
    cfg = run.cfg
    train, _ = run.data
    data = as_matrix(train)
    digest = fingerprint(data)
    for k in cfg.k:
        seed = derive_seed(cfg.seed, BASELINE_STREAM, k)
        for method in cfg.baselines:
            if method == "pca":
                m = pca(data, k)
            elif method == "random":
                m = random_orthonormal(data.shape[1], k, seed)
            else:
                m = fast_ica(data, k, seed)
            run.save(m.with_attrs(fingerprint=digest), method, k)
    return "ok"


def _denoiser_report(run: Run, x: Tensor) -> dict[str, Any]:
    report: dict[str, Any] = {}
    for i, sigma in enumerate(DENOISER_SIGMAS):
        entry = {"model_mse": denoising_mse(run.prior, x, sigma, derive_seed(run.cfg.seed, EVAL_STREAM, i))}
        if run.cfg.dataset.kind == "gaussian2d":
            entry["oracle_mse"] = gaussian_denoising_mse(GAUSSIAN_COV, sigma)
        report[str(sigma)] = entry
    return report


def evaluate_stage(run: Run) -> StageStatus:
    cfg, ecfg = run.cfg, run.cfg.evaluate
    train, test = run.data
    x = as_matrix(test)[: ecfg.n_items]
    center = as_matrix(train).mean(axis=0)
    shape = image_shape(test)
    measurements = load_measurements(run.out)
    if not measurements:
        msg = f"No measurement matrices in {run.out / MEASUREMENT_DIR}; run optimize-olm or baselines first"
        raise FileNotFoundError(msg)
    model = run.prior
    sampler_cfg = cfg.sampler.model_copy(update={"seed": derive_seed(cfg.seed, EVAL_STREAM)})

    scores: dict[str, dict[int, dict[str, Tensor]]] = {}
    previews = run.out / RECONSTRUCTION_DIR
    if shape is not None:
        previews.mkdir(parents=True, exist_ok=True)
        write(previews / "original.olmt", x[:N_PREVIEW])
    for (method, k), m in measurements.items():
        logger.info("Evaluating %s with k=%d on %d items", method, k, len(x))
        xhat = reconstruct(model, m, x, sampler_cfg, ecfg.n_samples)
        scores.setdefault(method, {})[k] = image_scores(x, xhat, shape)
        if shape is not None:
            write(previews / f"{method}_k{k}.olmt", xhat[:N_PREVIEW])
        if method == "pca":
            scores.setdefault("pca_projection", {})[k] = image_scores(x, project(m, x, center), shape)

    comparisons: dict[str, dict[str, Any]] = {}
    for k in cfg.k:
        entry: dict[str, Any] = {}
        reference = scores.get("pca", {}).get(k)
        for method, by_k in scores.items():
            if method == "pca" or k not in by_k or reference is None:
                continue
            result = _compare(by_k[k]["psnr"], reference["psnr"], ecfg.n_boot, cfg.seed)
            if result is not None:
                entry[f"{method}-vs-pca"] = result
        if shape is not None and k in scores.get("olm_ssim", {}) and k in scores.get("olm", {}):
            result = _compare(scores["olm_ssim"][k]["ssim"], scores["olm"][k]["ssim"], ecfg.n_boot, cfg.seed)
            if result is not None:
                entry["olm_ssim-vs-olm:ssim"] = result
        comparisons[str(k)] = entry

    metrics: dict[str, Any] = {
        "name": cfg.name,
        "k": list(cfg.k),
        "n_items": len(x),
        "methods": {
            method: {str(k): _summary(s) for k, s in by_k.items()} for method, by_k in scores.items()
        },
        "comparisons": comparisons,
        "noise": _noise_robustness(run, measurements, x, sampler_cfg),
        "sample_counts": _sample_counts(run, measurements, x, sampler_cfg),
        "parameter_study": _parameter_study(run, measurements, x, sampler_cfg),
    }
    if cfg.prior == "trained":
        metrics["denoiser"] = _denoiser_report(run, x)
    write_json(run.out / METRICS_FILE, metrics)
    return "ok"


def _reference_method(measurements: dict[tuple[str, int], MeasurementMatrix], k: int) -> str | None:
    for method in ("olm", "pca"):
        if (method, k) in measurements:
            return method
    return None


def _noise_robustness(
    run: Run,
    measurements: dict[tuple[str, int], MeasurementMatrix],
    x: Tensor,
    sampler_cfg: SamplerConfig,
) -> dict[str, Any]:
    """
    Mean PSNR of the noise-trained and noise-free optimized measurements under
    each test-time measurement noise level, or of PCA when neither exists.
    All methods see identical noise.
    """
    cfg = run.cfg
    methods = [m for m in ("olm", "olm_noise") if any(key[0] == m for key in measurements)]
    if not methods:
        methods = ["pca"]
    result: dict[str, Any] = {}
    for k in cfg.k:
        noise_unit = counter_normal(derive_seed(cfg.seed, NOISE_STREAM, k), chain_keys(len(x), 1), 0, k)
        by_level: dict[str, Any] = {}
        for level in cfg.evaluate.noise_levels:
            psnrs = {}
            for method in methods:
                if (method, k) not in measurements:
                    continue
                xhat = reconstruct(
                    run.prior, measurements[(method, k)], x, sampler_cfg, cfg.evaluate.n_samples,
                    noise=level * noise_unit,
                )
                psnrs[method] = psnr_per_image(x, xhat)
            entry: dict[str, Any] = {f"mean_psnr_{m}": _finite_mean(v) for m, v in psnrs.items()}
            if len(psnrs) == 2:
                entry["olm_noise-vs-olm"] = _compare(
                    psnrs["olm_noise"], psnrs["olm"], cfg.evaluate.n_boot, cfg.seed
                )
            by_level[str(level)] = entry
        result[str(k)] = by_level
    return result


def _sample_counts(
    run: Run,
    measurements: dict[tuple[str, int], MeasurementMatrix],
    x: Tensor,
    sampler_cfg: SamplerConfig,
) -> dict[str, Any]:
    """
    Per-image MSE of MMSE estimates averaged over each configured number of
    conditional samples, at the largest k.
    """
    counts = run.cfg.evaluate.sample_counts
    k = run.cfg.k[-1]
    method = _reference_method(measurements, k)
    if method is None or not counts:
        return {}
    mse = {
        n: np.mean((reconstruct(run.prior, measurements[(method, k)], x, sampler_cfg, n) - x) ** 2, axis=1)
        for n in counts
    }
    result: dict[str, Any] = {
        "method": method,
        "k": k,
        "mse": {str(n): values for n, values in mse.items()},
        "mean_mse": {str(n): float(values.mean()) for n, values in mse.items()},
    }
    if len(counts) > 1:
        result["comparison"] = _compare(mse[counts[-1]], mse[counts[0]], run.cfg.evaluate.n_boot, run.cfg.seed)
    return result


def _parameter_study(
    run: Run,
    measurements: dict[tuple[str, int], MeasurementMatrix],
    x: Tensor,
    sampler_cfg: SamplerConfig,
) -> dict[str, Any]:
    grid = run.cfg.evaluate.parameter_grid
    k = run.cfg.k[0]
    method = _reference_method(measurements, k)
    if method is None or not grid:
        return {}
    records = parameter_study(
        run.prior, measurements[(method, k)], x[:STUDY_ITEMS], sampler_cfg, grid,
        n_samples=run.cfg.evaluate.n_samples,
    )
    spread = {}
    for name in grid:
        values = [float(r["psnr"]) for r in records if r["param"] == name]
        spread[name] = max(values) - min(values)
    return {"method": method, "k": k, "records": records, "psnr_range": spread}


def analyze_stage(run: Run) -> StageStatus:
    cfg = run.cfg
    train, test = run.data
    x = as_matrix(test)
    measurements = load_measurements(run.out)
    if not measurements:
        msg = f"No measurement matrices in {run.out / MEASUREMENT_DIR}; run optimize-olm or baselines first"
        raise FileNotFoundError(msg)
    (run.out / STATS_DIR).mkdir(parents=True, exist_ok=True)
    summary: dict[str, Any] = {"measurements": {}, "distances": {}}
    for (method, k), m in measurements.items():
        stats = measurement_stats(m, x, MI_BINS)
        write_stats(stats, run.out / STATS_DIR / f"{method}_k{k}.csv")
        off_diagonal = stats.mutual_information[~np.eye(k, dtype=bool)]
        summary["measurements"][f"{method}_k{k}"] = {
            "variance_spectrum": np.sort(stats.variance)[::-1],
            "abs_skewness": np.sort(np.abs(stats.skewness))[::-1],
            "mean_abs_skewness": float(np.mean(np.abs(stats.skewness))),
            "mean_mi": float(off_diagonal.mean()) if off_diagonal.size else 0.0,
            "flagged": stats.flagged,
        }

    data = as_matrix(train)
    order = generator(cfg.seed, ANALYSIS_STREAM).permutation(len(data))
    halves = data[np.sort(order[: len(data) // 2])], data[np.sort(order[len(data) // 2 :])]
    for k in cfg.k:
        named = {method: m for (method, kk), m in measurements.items() if kk == k}
        if k < data.shape[1] and min(len(h) for h in halves) > k:
            named["pc_half1"] = pca(halves[0], k)
            named["pc_half2"] = pca(halves[1], k)
        if len(named) < 2:
            continue
        distances = distance_matrix(named)
        summary["distances"][str(k)] = {
            "names": list(distances["a"].values),
            "matrix": distances.values,
        }
    write_json(run.out / ANALYSIS_FILE, summary)
    return "ok"


def report_stage(run: Run) -> StageStatus:
    render_report(run.out)
    return "ok"


STAGE_FUNCTIONS: dict[str, Callable[[Run], StageStatus]] = {
    "train-denoiser": train_stage,
    "sweep2d": sweep_stage,
    "optimize-olm": optimize_stage,
    "baselines": baselines_stage,
    "evaluate": evaluate_stage,
    "analyze": analyze_stage,
    "report": report_stage,
}


def _run_stage(run: Run, name: str, manifest: RunManifest) -> None:
    logger.info("Stage %s started in %s", name, run.out)
    start = time.perf_counter()
    try:
        status = STAGE_FUNCTIONS[name](run)
    except Exception as e:
        manifest.stages[name] = StageRecord(
            status="failed", seconds=time.perf_counter() - start, error=f"{type(e).__name__}: {e}"
        )
        logger.error("Stage %s failed: %s", name, e)
        raise
    manifest.stages[name] = StageRecord(status=status, seconds=time.perf_counter() - start)
    logger.info("Stage %s finished (%s) in %.1f s", name, status, manifest.stages[name].seconds)


def run_stages(cfg: ExperimentConfig, stages: Sequence[str]) -> Path:
    """
    Run `stages` in order in the output directory of `cfg`, then record the
    manifest. A manifest left by a different config is replaced.
    """
    unknown = [name for name in stages if name not in STAGE_FUNCTIONS]
    if unknown:
        msg = f"Unknown stages {unknown}; expected a subset of {STAGES}"
        raise ValueError(msg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / CONFIG_FILE)
    digest = config_hash(cfg)
    manifest = RunManifest.load(out)
    if manifest is None or manifest.config_hash != digest:
        if manifest is not None:
            logger.warning("Config of %s changed since its last run; starting a new manifest", out)
        manifest = RunManifest(config_hash=digest, version=version)
    run = Run(cfg, out)
    try:
        for name in stages:
            _run_stage(run, name, manifest)
    finally:
        manifest.checksums = collect_checksums(out)
        manifest.save(out)
    return out


def prepare_config(
    config_path: PathLike, out: PathLike | None = None, seed: int | None = None
) -> ExperimentConfig:
    """
    Load a config and apply command-line overrides of the output directory
    and master seed.
    """
    cfg = load_config(config_path)
    if seed is not None:
        cfg = reseed(cfg, seed)
    if out is not None:
        cfg = with_output(cfg, out)
    return cfg


def run_experiment(
    config_path: PathLike, out: PathLike | None = None, seed: int | None = None
) -> Path:
    """
    Run every stage of the experiment described by the TOML file at
    `config_path` and return the output directory.
    """
    return run_stages(prepare_config(config_path, out, seed), STAGES)
