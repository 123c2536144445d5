from django.core.management.base import BaseCommand

from pwe.exceptions import ConstructionError
from pwe.exporters import (
    results_table,
    write_config_json,
    write_floorplan_svg,
    write_results_csv,
    write_results_table,
    write_seeds_csv,
    write_segments_csv,
    write_training_artifacts,
)
from pwe.management.utils import (
    add_output_argument,
    add_scenario_argument,
    construction_error,
    input_error,
    output_dir,
    scenario_or_error,
    tracer_options,
)
from pwe.pipeline import run_comparison


class Command(BaseCommand):
    help = (
        "Compare regular propagation, the greedy ray router and the trained "
        "network configurator on identical emitted rays."
    )

    def add_arguments(self, parser):
        add_scenario_argument(parser)
        add_output_argument(parser)
        parser.add_argument(
            "--seeds",
            type=int,
            default=1,
            help="Number of consecutive seeds to train (default: 1)",
        )
        parser.add_argument(
            "--parallel",
            action="store_true",
            help="Train seeds and run the schemes concurrently",
        )

    def handle(self, *args, **options):
        if options["seeds"] < 1:
            raise input_error("--seeds must be at least 1")
        scenario = scenario_or_error(options["scenario"])
        out_dir = output_dir(options["out"], scenario)

        self.stdout.write(
            f"Comparing schemes on {scenario.name} "
            f"({options['seeds']} seed(s), {scenario.physics.ray_count} rays)..."
        )
        try:
            comparison = run_comparison(
                scenario,
                seeds=options["seeds"],
                parallel=options["parallel"],
                options=tracer_options(),
            )
        except ConstructionError as e:
            raise construction_error(e) from e

        written = [
            write_results_csv(out_dir / "results.csv", comparison.reports),
            write_results_table(out_dir / "results.txt", comparison.reports),
            write_seeds_csv(out_dir / "seeds.csv", scenario, comparison.runs),
        ]
        for report in comparison.reports:
            name = report.scheme_name
            if report.config is not None:
                written.append(
                    write_config_json(out_dir / f"config_{name}.json", report.config)
                )
                written.append(
                    write_floorplan_svg(
                        out_dir / f"floorplan_{name}.svg",
                        scenario,
                        report.config,
                        report.trace,
                    )
                )
                written.append(
                    write_segments_csv(out_dir / f"segments_{name}.csv", report.trace)
                )
        written.extend(write_training_artifacts(out_dir, comparison.chosen))
        for path in written:
            self.stdout.write(f"  wrote {path}")

        self.stdout.write("")
        self.stdout.write(results_table(comparison.reports), ending="")
        for report in comparison.reports:
            if report.error:
                self.stdout.write(
                    self.style.WARNING(f"{report.scheme_name}: {report.error}")
                )
        if not comparison.chosen.converged:
            self.stdout.write(
                self.style.WARNING(
                    f"NNConfig did not converge (seed {comparison.chosen.seed})"
                )
            )
        else:
            self.stdout.write(self.style.SUCCESS("Done"))
