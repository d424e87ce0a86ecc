import click

from olm_tools.cli.base import configure_logging
from olm_tools.cli.stages import (
    analyze_cli,
    baselines_cli,
    evaluate_cli,
    optimize_olm_cli,
    report_cli,
    run_cli,
    sweep2d_cli,
    train_denoiser_cli,
)


@click.group("olm")
@click.option("-v", "--verbose", is_flag=True, help="log debug messages")
def olm(verbose: bool) -> None:
    configure_logging(verbose)


olm.add_command(train_denoiser_cli, "train-denoiser")
olm.add_command(sweep2d_cli, "sweep2d")
olm.add_command(optimize_olm_cli, "optimize-olm")
olm.add_command(baselines_cli, "baselines")
olm.add_command(evaluate_cli, "evaluate")
olm.add_command(analyze_cli, "analyze")
olm.add_command(report_cli, "report")
olm.add_command(run_cli, "run")
