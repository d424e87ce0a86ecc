from __future__ import annotations

from pathlib import Path

import pytest

from olm_tools.config import (
    IMAGE_FILL,
    ConfigError,
    EvaluateConfig,
    config_hash,
    dump_config,
    load_config,
    reseed,
    validate_config,
    with_output,
)
from tests.conftest import gaussian_recipe, write_recipe


def test_load_resolves_relative_paths(tmp_path, recipe_path) -> None:
    cfg = load_config(recipe_path)
    assert cfg.out == tmp_path.resolve() / "run"
    assert cfg.name == "tiny"
    assert cfg.sampler.fill == 0.0


def test_load_resolves_the_dataset_path(tmp_path, idx_archive) -> None:
    recipe = gaussian_recipe(
        prior="trained",
        k=[2, 4],
        dataset={"kind": "idx", "path": idx_archive.name, "target": [4, 4], "split": {"n_test": 8}},
    )
    cfg = load_config(write_recipe(tmp_path, recipe))
    assert cfg.dataset.path == tmp_path.resolve() / idx_archive.name
    assert cfg.sampler.fill == IMAGE_FILL


def test_missing_file(tmp_path) -> None:
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "absent.toml")


def test_invalid_toml(tmp_path) -> None:
    path = tmp_path / "broken.toml"
    path.write_text("seed = [1,\n")
    with pytest.raises(ConfigError, match="not valid TOML"):
        load_config(path)


@pytest.mark.parametrize(
    "overrides, match",
    [
        ({"k": [1, 2]}, "k = \\(1,\\) only"),
        ({"k": [2, 1]}, "strictly increasing"),
        ({"sampler": {"gamma": 1.0}}, "sampler.gamma"),
        ({"objective": "ssim"}, "needs an image dataset"),
        ({"evaluate": {"parameter_grid": {"t_max": [10.0]}}}, "Parameter study can vary"),
        ({"seed": -1}, "seed"),
    ],
)
def test_invalid_configs(overrides, match: str) -> None:
    with pytest.raises(ConfigError, match=match):
        validate_config(gaussian_recipe(**overrides))


def test_analytic_prior_needs_a_2d_dataset(idx_archive) -> None:
    recipe = gaussian_recipe(
        dataset={"kind": "idx", "path": str(idx_archive), "target": [4, 4], "split": {"n_test": 8}},
    )
    with pytest.raises(ConfigError, match="2-D datasets only"):
        validate_config(recipe)
    for kind in ("ksparse2d", "manifold2d"):
        assert validate_config(gaussian_recipe(dataset={"kind": kind})).prior == "oracle"


def test_image_k_must_stay_below_the_dimension(idx_archive) -> None:
    recipe = gaussian_recipe(
        prior="trained",
        k=[16],
        dataset={"kind": "idx", "path": str(idx_archive), "target": [4, 4], "split": {"n_test": 8}},
    )
    with pytest.raises(ConfigError, match="below the image dimension 16"):
        validate_config(recipe)


def test_seeds_derive_from_the_master_seed() -> None:
    cfg = validate_config(gaussian_recipe())
    seeds = {cfg.dataset.seed, cfg.denoiser.seed, cfg.sampler.seed, cfg.optimize.seed}
    assert len(seeds) == 4
    assert cfg.dataset.seed == 11
    assert validate_config(gaussian_recipe()) == cfg
    explicit = validate_config(gaussian_recipe(sampler={"seed": 5}))
    assert explicit.sampler.seed == 5
    assert explicit.optimize.seed == cfg.optimize.seed


def test_reseed_rederives_every_seed() -> None:
    cfg = validate_config(gaussian_recipe(sampler={"seed": 5}))
    other = reseed(cfg, 12)
    assert other.seed == 12
    assert other.sampler.seed != 5
    assert other.dataset.split.seed != cfg.dataset.split.seed
    assert other.optimize.seed != cfg.optimize.seed
    assert reseed(other, 11) == validate_config(gaussian_recipe())


def test_config_hash_ignores_the_output_directory(tmp_path) -> None:
    cfg = validate_config(gaussian_recipe())
    assert config_hash(with_output(cfg, tmp_path / "elsewhere")) == config_hash(cfg)
    assert config_hash(reseed(cfg, 12)) != config_hash(cfg)


def test_dump_round_trip(tmp_path, recipe_path) -> None:
    cfg = load_config(recipe_path)
    path = tmp_path / "dumped" / "config.toml"
    path.parent.mkdir()
    dump_config(cfg, path)
    assert load_config(path) == cfg


def test_evaluate_config_validation() -> None:
    with pytest.raises(ValueError, match="Sample counts must be positive"):
        EvaluateConfig(sample_counts=(0, 2))
    with pytest.raises(ValueError, match="non-negative"):
        EvaluateConfig(noise_levels=(-0.1,))


def test_with_output() -> None:
    cfg = validate_config(gaussian_recipe())
    assert with_output(cfg, "somewhere").out == Path("somewhere")


@pytest.mark.parametrize("name", ["gaussian2d", "ksparse2d", "manifold2d"])
def test_shipped_configs_validate(name: str) -> None:
    path = Path(__file__).parents[1] / "configs" / f"{name}.toml"
    cfg = load_config(path)
    assert cfg.dataset.kind == name
    assert cfg.out.name == name
