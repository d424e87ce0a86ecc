from __future__ import annotations

from click.testing import CliRunner

from olm_tools.cli.olm import olm
from tests.conftest import gaussian_recipe, write_recipe


def test_stage_command(recipe_path) -> None:
    result = CliRunner().invoke(olm, ["baselines", "--config", str(recipe_path)])
    assert result.exit_code == 0, result.output
    out = recipe_path.parent.resolve() / "run"
    assert str(out) in result.output
    assert (out / "measurements" / "pca_k1.olmt").exists()


def test_run_with_overrides(tmp_path, recipe_path) -> None:
    target = tmp_path / "override"
    args = ["-v", "run", "--config", str(recipe_path), "--out", str(target), "--seed", "5", "--stages", "baselines,analyze"]
    result = CliRunner().invoke(olm, args)
    assert result.exit_code == 0, result.output
    assert (target / "analysis.json").exists()
    assert "seed = 5" in (target / "config.toml").read_text()


def test_invalid_config_exits_with_one(tmp_path) -> None:
    path = write_recipe(tmp_path, gaussian_recipe(k=[3]))
    result = CliRunner().invoke(olm, ["run", "--config", str(path)])
    assert result.exit_code == 1
    assert "Invalid config" in result.output


def test_missing_config_exits_with_one(tmp_path) -> None:
    result = CliRunner().invoke(olm, ["evaluate", "--config", str(tmp_path / "absent.toml")])
    assert result.exit_code == 1
    assert "does not exist" in result.output


def test_stage_failure_exits_with_two(recipe_path) -> None:
    result = CliRunner().invoke(olm, ["evaluate", "--config", str(recipe_path)])
    assert result.exit_code == 2
    assert "FileNotFoundError" in result.output


def test_bad_stage_list(recipe_path) -> None:
    result = CliRunner().invoke(olm, ["run", "--config", str(recipe_path), "--stages", "train,plot"])
    assert result.exit_code == 2
    assert "--stages" in result.output


def test_bad_seed(recipe_path) -> None:
    result = CliRunner().invoke(olm, ["run", "--config", str(recipe_path), "--seed", "-3"])
    assert result.exit_code == 2
