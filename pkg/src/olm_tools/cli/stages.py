from __future__ import annotations

import click

from olm_tools.cli.base import execute, experiment_options, parse_stages


def _stage_command(stage: str, summary: str) -> click.Command:
    @click.command(stage, help=summary)
    @experiment_options
    def command(config_path: str, out: str | None, seed: int | None) -> None:
        execute((stage,), config_path, out, seed)

    return command


train_denoiser_cli = _stage_command(
    "train-denoiser", "Train the blind denoiser on the training split."
)
sweep2d_cli = _stage_command(
    "sweep2d", "Sweep unit measurement vectors of a 2-D dataset over all angles."
)
optimize_olm_cli = _stage_command(
    "optimize-olm", "Optimize measurement matrices through the denoiser prior."
)
baselines_cli = _stage_command(
    "baselines", "Compute PCA, random and ICA measurement matrices."
)
evaluate_cli = _stage_command(
    "evaluate", "Score every stored measurement matrix on the test split."
)
analyze_cli = _stage_command(
    "analyze", "Measurement statistics and subspace distances."
)
report_cli = _stage_command("report", "Render figures and the summary table.")


@click.command("run")
@experiment_options
@click.option(
    "--stages",
    type=click.STRING,
    default="all",
    help="comma-separated stages to run in order (default: all)",
)
def run_cli(config_path: str, out: str | None, seed: int | None, stages: str) -> None:
    """
    Run the experiment pipeline.
    """
    try:
        selected = parse_stages(stages)
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint="--stages") from e
    execute(selected, config_path, out, seed)
