# iss_lab/main.py

import functools
import logging
import sys
from pathlib import Path

import click

from iss_lab import __version__
from iss_lab.acceptance import reproduce_all
from iss_lab.config import SETTINGS
from iss_lab.exceptions import LabError
from iss_lab.schemas import GenericResponse
from iss_lab.service import ScenarioService

logger = logging.getLogger(__name__)

# Shared instance, replaced in tests.
service = ScenarioService(SETTINGS)


def _emit(response: GenericResponse, err: bool = False) -> None:
    click.echo(response.model_dump_json(by_alias=True, indent=2), err=err)


def reports_errors(command):
    """Turn a LabError into an error document on stderr and the error's exit code."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except LabError as e:
            logger.debug(f"{command.__name__} failed: {e.message}")
            _emit(GenericResponse.get_error_response(e.error_code, e.message, debug_info=e.debug_info), err=True)
            sys.exit(e.exit_code)
    return wrapper


@click.group()
@click.version_option(__version__, prog_name="iss-lab")
@click.option("--log-level", default=SETTINGS.LOG_LEVEL, show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level: str):
    """Numerical laboratory for input-to-state stability of boundary control systems."""
    logging.basicConfig(level=log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@reports_errors
def validate(config_path: str):
    """Parse CONFIG_PATH strictly and echo the normalized config."""
    config = service.load_config(config_path)
    _emit(GenericResponse.get_success_response(
        f"{config_path} is a valid {config.scenario.value} config",
        info={"config": config.model_dump(mode="json", by_alias=True)},
    ))


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@reports_errors
def run(config_path: str):
    """Simulate the scenario of CONFIG_PATH, check its certificate and write the artifacts."""
    config = service.load_config(config_path)
    result = service.run(config)
    _emit(GenericResponse.get_success_response(
        f"{result.scenario}: {result.outcome}",
        info=result.model_dump(mode="json", by_alias=True),
    ))


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@reports_errors
def scan(config_path: str):
    """Estimate the input-to-state gains over the qList x NList ladder of CONFIG_PATH."""
    config = service.load_config(config_path)
    result = service.scan(config)
    _emit(GenericResponse.get_success_response(
        f"{result.scenario}: scanned {len(result.cells)} cells",
        info={"flags": result.flags,
              "outputDir": str(service.output_dir(config))},
    ))


@cli.command("reproduce-all")
@click.option("--jobs", default=SETTINGS.JOBS, show_default=True, type=click.IntRange(min=1),
              help="Criteria evaluated in parallel.")
@click.option("--seed", default=0, show_default=True, type=click.IntRange(min=0))
@click.option("--check-determinism", is_flag=True, help="Run every criterion twice and compare the measurements.")
@reports_errors
def reproduce_all_command(jobs: int, seed: int, check_determinism: bool):
    """Run the acceptance criteria and write summary.csv."""
    out = Path(service.settings.OUT) / "reproduce-all"
    table = reproduce_all(out, jobs=jobs, seed=seed, check_determinism=check_determinism)
    _emit(GenericResponse.get_success_response(
        f"{len(table)} acceptance criteria passed",
        info={"summary": str(out / "summary.csv"), "rows": table[["id", "measured", "passed"]].to_dict(orient="records")},
    ))


if __name__ == "__main__":
    cli()
