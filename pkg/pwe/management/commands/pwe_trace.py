from pathlib import Path

from django.core.management.base import BaseCommand

from pwe.exceptions import ConfigurationError
from pwe.exporters import write_floorplan_svg, write_segments_csv
from pwe.management.utils import (
    add_output_argument,
    add_scenario_argument,
    input_error,
    output_dir,
    scenario_or_error,
    tracer_options,
)
from pwe.pipeline import scenario_rays
from pwe.raytracer import format_dbm, trace
from pwe.serializers import load_environment_config


class Command(BaseCommand):
    help = "Ray-trace a scenario under a stored environment config."

    def add_arguments(self, parser):
        add_scenario_argument(parser)
        parser.add_argument(
            "--config",
            type=str,
            required=True,
            help="Environment config JSON, as written by pwe_compare",
        )
        add_output_argument(parser)

    def handle(self, *args, **options):
        scenario = scenario_or_error(options["scenario"])
        try:
            config = load_environment_config(options["config"])
        except ConfigurationError as e:
            raise input_error(str(e)) from e
        missing = config.missing_tiles(scenario)
        if missing:
            raise input_error(
                f"{options['config']}: no entry for {len(missing)} coated tile(s), "
                f"first {missing[0]}"
            )

        tracer = tracer_options()
        result = trace(
            scenario,
            config,
            scenario_rays(scenario),
            max_live_rays=tracer.max_live_rays,
            min_route_cosine=tracer.min_route_cosine,
        )
        out_dir = output_dir(options["out"], scenario)
        stem = Path(options["config"]).stem
        for path in (
            write_segments_csv(out_dir / f"segments_{stem}.csv", result),
            write_floorplan_svg(
                out_dir / f"floorplan_{stem}.svg", scenario, config, result
            ),
        ):
            self.stdout.write(f"  wrote {path}")

        self.stdout.write(
            f"{config.scheme_name}: received {format_dbm(result.received_dbm)} "
            f"(dBm), intercepted {100 * result.intercepted_fraction:.1f}%, "
            f"absorbed {100 * result.absorbed_fraction:.1f}%"
        )
        terminations = ", ".join(
            f"{reason.value} {count}"
            for reason, count in sorted(result.terminations.items())
        )
        self.stdout.write(f"  terminations: {terminations or 'none'}")
        if not result.ledger_closes():
            self.stdout.write(
                self.style.WARNING(
                    f"  energy ledger off by {result.ledger_residual:.3e} W"
                )
            )
