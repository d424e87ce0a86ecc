"""
Experiment recipes: a TOML file describing the dataset, the denoiser, the
sampler, the measurement optimizer and the evaluation, validated into an
`ExperimentConfig`.

Every random choice of an experiment flows from the single master `seed`.
Sub-configurations that do not set their own seed get one derived from it.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Any

import fsspec
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from olm_tools.datasets import DatasetConfig
from olm_tools.denoiser import TrainConfig
from olm_tools.optimize import OptRunConfig
from olm_tools.rng import derive_seed
from olm_tools.sampler import SamplerConfig
from olm_tools.type import BaselineMethod, ObjectiveTag, OLMVariant, PriorKind  # noqa: TCH001

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

if TYPE_CHECKING:
    from olm_tools.type import PathLike

DENOISER_STREAM = 1
SAMPLER_STREAM = 2
OPTIMIZE_STREAM = 3
STUDY_PARAMS = ("h", "beta", "sigma_end")
# sampler start value of unmeasured directions
IMAGE_FILL = 0.5
POINT_FILL = 0.0


class ConfigError(ValueError):
    pass


def child_seed(seed: int, stream: int) -> int:
    # TOML integers are signed 64-bit
    return derive_seed(seed, stream) >> 1


def _usable_seed(seed: Any) -> bool:
    # invalid seeds are left for field validation to report
    return isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0


class SweepConfig(BaseModel):
    """
    Dense sweep over 2-D unit measurement vectors at angles in [−π/2, π/2).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_theta: int = Field(default=181, ge=2)
    n_items: int = Field(default=256, ge=1)
    n_samples: int = Field(default=4, ge=1)


class EvaluateConfig(BaseModel):
    """
    How measurement matrices are scored on the test split.

    `sample_counts` are the conditional-sample counts compared for MMSE
    averaging, `noise_levels` the measurement noise levels of the noise
    robustness evaluation and `parameter_grid` the sampler parameters varied
    one at a time in the parameter study.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_items: int = Field(default=256, ge=2)
    n_samples: int = Field(default=2, ge=1)
    sample_counts: tuple[int, ...] = (2, 16)
    noise_levels: tuple[float, ...] = (0.0, 0.4)
    parameter_grid: dict[str, tuple[float, ...]] = Field(
        default_factory=lambda: {"h": (0.05, 0.1, 0.2)}
    )
    n_boot: int = Field(default=2000, ge=1)

    @field_validator("sample_counts")
    @classmethod
    def _positive_counts(cls, counts: tuple[int, ...]) -> tuple[int, ...]:
        if any(c < 1 for c in counts):
            msg = f"Sample counts must be positive, got {counts}"
            raise ValueError(msg)
        return counts

    @field_validator("noise_levels")
    @classmethod
    def _nonnegative_noise(cls, levels: tuple[float, ...]) -> tuple[float, ...]:
        if any(level < 0 for level in levels):
            msg = f"Noise levels must be non-negative, got {levels}"
            raise ValueError(msg)
        return levels

    @field_validator("parameter_grid")
    @classmethod
    def _known_params(cls, grid: dict[str, tuple[float, ...]]) -> dict[str, tuple[float, ...]]:
        unknown = set(grid) - set(STUDY_PARAMS)
        if unknown:
            msg = f"Parameter study can vary {STUDY_PARAMS}, got {sorted(unknown)}"
            raise ValueError(msg)
        return grid


class ExperimentConfig(BaseModel):
    """
    One reproducible experiment.

    Attributes
    ----------
    name: str
        Label used in reports.
    seed: int
        Master seed. `dataset`, `denoiser`, `sampler` and `optimize` seeds
        default to values derived from it.
    out: Path
        Output directory, relative paths taken relative to the config file.
    prior: "trained" | "oracle"
        Reconstruct with the trained denoiser, or with the analytic blind
        denoiser of the 2-D dataset kind.
    k: tuple of int
        Measurement counts, strictly increasing.
    objective: "mse" | "ssim"
        Loss of the `olm` and `olm_seq` variants.
    variants: tuple
        Which optimized measurements to compute. `olm_noise` trains with
        measurement noise of standard deviation `train_noise`; `olm_ssim`
        optimizes 1 − SSIM regardless of `objective`.
    baselines: tuple
        Which classical measurements to compute.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "olm"
    seed: int = Field(ge=0, lt=2**63)
    out: Path = Path("olm-run")
    prior: PriorKind = "trained"
    k: tuple[int, ...] = Field(min_length=1)
    objective: ObjectiveTag = "mse"
    variants: tuple[OLMVariant, ...] = ("olm",)
    baselines: tuple[BaselineMethod, ...] = ("pca", "random", "ica")
    train_noise: float = Field(default=0.4, ge=0)
    dataset: DatasetConfig
    denoiser: TrainConfig
    sampler: SamplerConfig
    optimize: OptRunConfig
    sweep: SweepConfig = SweepConfig()
    evaluate: EvaluateConfig = EvaluateConfig()

    @model_validator(mode="before")
    @classmethod
    def _derive_seeds(cls, data: Any) -> Any:
        if not isinstance(data, dict) or not _usable_seed(data.get("seed")):
            return data
        seed = data["seed"]
        data = dict(data)
        streams = {
            "denoiser": DENOISER_STREAM,
            "sampler": SAMPLER_STREAM,
            "optimize": OPTIMIZE_STREAM,
        }
        dataset = data.get("dataset")
        if isinstance(dataset, dict):
            data["dataset"] = {"seed": seed, **dataset}
        for key, stream in streams.items():
            section = data.get(key, {})
            if isinstance(section, dict):
                data[key] = {"seed": child_seed(seed, stream), **section}
        sampler = data["sampler"]
        if isinstance(sampler, dict) and "fill" not in sampler and isinstance(dataset, dict):
            fill = IMAGE_FILL if dataset.get("kind") == "idx" else POINT_FILL
            data["sampler"] = {**sampler, "fill": fill}
        return data

    @field_validator("k")
    @classmethod
    def _increasing(cls, k: tuple[int, ...]) -> tuple[int, ...]:
        if any(v < 1 for v in k) or any(b <= a for a, b in zip(k, k[1:])):
            msg = f"k must be positive and strictly increasing, got {k}"
            raise ValueError(msg)
        return k

    @model_validator(mode="after")
    def _check_dataset_fit(self) -> ExperimentConfig:
        if self.dataset.is_image:
            if self.dataset.target is not None:
                d = self.dataset.target[0] * self.dataset.target[1]
                if self.k[-1] >= d:
                    msg = f"k must stay below the image dimension {d}, got {self.k[-1]}"
                    raise ValueError(msg)
        else:
            if self.k != (1,):
                msg = f"2-D datasets support k = (1,) only, got {self.k}"
                raise ValueError(msg)
            if self.objective == "ssim" or "olm_ssim" in self.variants:
                msg = "The SSIM objective needs an image dataset"
                raise ValueError(msg)
        if self.prior == "oracle" and self.dataset.is_image:
            msg = f"The analytic prior exists for 2-D datasets only, got {self.dataset.kind}"
            raise ValueError(msg)
        return self


def _describe(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        where = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{where}: {item['msg']}")
    return "; ".join(lines)


def validate_config(raw: dict[str, Any]) -> ExperimentConfig:
    """
    Validate a parsed config, reporting failures as `ConfigError` with the
    offending field paths.
    """
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        msg = f"Invalid config: {_describe(e)}"
        raise ConfigError(msg) from e


def _resolve(raw: dict[str, Any], base: Path) -> dict[str, Any]:
    raw = dict(raw)
    if "out" in raw and not Path(raw["out"]).is_absolute():
        raw["out"] = str(base / raw["out"])
    elif "out" not in raw:
        raw["out"] = str(base / ExperimentConfig.model_fields["out"].default)
    dataset = raw.get("dataset")
    if isinstance(dataset, dict) and "path" in dataset:
        path = str(dataset["path"])
        if "://" not in path and not Path(path).is_absolute():
            raw["dataset"] = {**dataset, "path": str(base / path)}
    return raw


def load_config(path: PathLike) -> ExperimentConfig:
    """
    Read and validate a TOML experiment config. Relative paths inside it are
    taken relative to the directory holding the file.
    """
    try:
        with fsspec.open(str(path), mode="rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as e:
        msg = f"Config file {path} does not exist"
        raise ConfigError(msg) from e
    except tomllib.TOMLDecodeError as e:
        msg = f"Config file {path} is not valid TOML: {e}"
        raise ConfigError(msg) from e
    return validate_config(_resolve(raw, Path(path).resolve().parent))


def config_document(cfg: ExperimentConfig) -> dict[str, Any]:
    return cfg.model_dump(mode="json", exclude_none=True)


def dump_config(cfg: ExperimentConfig, path: PathLike) -> None:
    with fsspec.open(str(path), mode="wb") as fh:
        tomli_w.dump(config_document(cfg), fh)


def config_hash(cfg: ExperimentConfig) -> str:
    """
    sha256 of the canonical JSON form of `cfg`, without the output directory.
    """
    document = config_document(cfg)
    document.pop("out", None)
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def reseed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """
    The same experiment under a new master seed. All sub-configuration seeds,
    explicit or not, are derived again from `seed`.
    """
    raw = config_document(cfg)
    raw["seed"] = seed
    for key in ("denoiser", "sampler", "optimize"):
        raw[key].pop("seed", None)
    raw["dataset"].pop("seed", None)
    raw["dataset"].get("split", {}).pop("seed", None)
    return validate_config(raw)


def with_output(cfg: ExperimentConfig, out: PathLike) -> ExperimentConfig:
    return cfg.model_copy(update={"out": Path(out)})
