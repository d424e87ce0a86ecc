from __future__ import annotations

import logging
from typing import TYPE_CHECKING

import click

from olm_tools.config import ConfigError
from olm_tools.experiment import STAGES, prepare_config, run_stages

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence
    from typing import Any

logger = logging.getLogger(__name__)

EXIT_CONFIG_ERROR = 1
EXIT_RUNTIME_ERROR = 2
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)
    logging.captureWarnings(True)


def parse_stages(stages: str) -> tuple[str, ...]:
    """
    convert a comma-separated list of stage names into a tuple, checking each
    """
    if stages == "all":
        return STAGES
    parsed = tuple(part.strip() for part in stages.split(",") if part.strip())
    unknown = [name for name in parsed if name not in STAGES]
    if unknown or not parsed:
        msg = f"Stages must be a comma-separated subset of {STAGES}, got {stages!r}"
        raise ValueError(msg)
    return parsed


def experiment_options(func: Callable[..., Any]) -> Callable[..., Any]:
    func = click.option(
        "--seed",
        type=click.IntRange(min=0, max=2**63 - 1),
        default=None,
        help="override the master seed of the config",
    )(func)
    func = click.option(
        "--out",
        type=click.Path(file_okay=False),
        default=None,
        help="output directory (default: `out` from the config)",
    )(func)
    return click.option(
        "--config",
        "config_path",
        type=click.Path(dir_okay=False),
        required=True,
        help="path to the TOML experiment config",
    )(func)


def execute(stages: Sequence[str], config_path: str, out: str | None, seed: int | None) -> None:
    """
    Run `stages` for the config at `config_path`, exiting with status 1 for an
    invalid config and 2 for a failure while running.
    """
    try:
        cfg = prepare_config(config_path, out, seed)
    except ConfigError as e:
        click.echo(f"error: {e}", err=True)
        raise click.exceptions.Exit(EXIT_CONFIG_ERROR) from e
    try:
        directory = run_stages(cfg, stages)
    except Exception as e:
        logger.debug("Stage failure", exc_info=True)
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        raise click.exceptions.Exit(EXIT_RUNTIME_ERROR) from e
    click.echo(str(directory))
