from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError

from pwe.exceptions import ConfigurationError, ConstructionError
from pwe.pipeline import TracerOptions
from pwe.scenario import Scenario
from pwe.serializers import load_scenario

INPUT_ERROR = 1
NOT_CONVERGED = 2


def default_scenario_path() -> Path:
    return Path(getattr(settings, "PWE_DEFAULT_SCENARIO"))


def add_scenario_argument(parser) -> None:
    parser.add_argument(
        "scenario",
        nargs="?",
        default=str(default_scenario_path()),
        help="Scenario JSON file (default: the bundled reconstructed floorplan)",
    )


def add_output_argument(parser) -> None:
    parser.add_argument(
        "--out",
        type=str,
        default=None,
        help="Output directory (default: PWE_OUTPUT_DIR/<scenario name>)",
    )


def output_dir(option: str | None, scenario: Scenario) -> Path:
    if option:
        return Path(option)
    return Path(getattr(settings, "PWE_OUTPUT_DIR")) / scenario.name


def input_error(message: str) -> CommandError:
    return CommandError(message, returncode=INPUT_ERROR)


def scenario_or_error(path: str) -> Scenario:
    """Load and validate a scenario, turning every problem into an input error."""
    try:
        scenario = load_scenario(path)
        scenario.validate()
    except ConfigurationError as e:
        raise input_error(str(e)) from e
    return scenario


def construction_error(error: ConstructionError) -> CommandError:
    return input_error(f"Cannot build the layered net: {error}")


def tracer_options() -> TracerOptions:
    return TracerOptions(
        max_live_rays=getattr(settings, "PWE_MAX_LIVE_RAYS", 64),
        min_route_cosine=getattr(settings, "PWE_ROUTE_MIN_COSINE", 0.9),
    )
