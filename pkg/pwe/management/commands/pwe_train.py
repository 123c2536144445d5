from django.core.management.base import BaseCommand, CommandError

from pwe.exceptions import ConstructionError
from pwe.exporters import write_training_artifacts
from pwe.management.utils import (
    NOT_CONVERGED,
    add_output_argument,
    add_scenario_argument,
    construction_error,
    output_dir,
    scenario_or_error,
)
from pwe.pipeline import train_nnconfig


class Command(BaseCommand):
    help = (
        "Train the tile network of a scenario and write the RMSE curve, the "
        "trained angles and an untrained/trained network drawing."
    )

    def add_arguments(self, parser):
        add_scenario_argument(parser)
        add_output_argument(parser)
        parser.add_argument(
            "--seed",
            type=int,
            default=None,
            help="Seed for the initial angles (default: the scenario's train.seed)",
        )

    def handle(self, *args, **options):
        scenario = scenario_or_error(options["scenario"])
        out_dir = output_dir(options["out"], scenario)
        try:
            run = train_nnconfig(scenario, options["seed"])
        except ConstructionError as e:
            raise construction_error(e) from e

        for path in write_training_artifacts(out_dir, run):
            self.stdout.write(f"  wrote {path}")

        result = run.result
        rmse = "n/a" if result.rmse_final is None else f"{result.rmse_final:.3e}"
        summary = (
            f"seed {run.seed}: {result.cycles_run} cycle(s), final RMSE {rmse}, "
            f"{run.train_ms:.0f} ms"
        )
        if not result.converged:
            self.stdout.write(self.style.WARNING(f"Not converged, {summary}"))
            raise CommandError(
                f"Training did not reach RMSE < {scenario.train.rmse_target}",
                returncode=NOT_CONVERGED,
            )
        self.stdout.write(self.style.SUCCESS(f"Converged, {summary}"))
