from django.core.management.base import BaseCommand

from pwe.exceptions import ConfigurationError, ConstructionError
from pwe.management.utils import add_scenario_argument, input_error
from pwe.netbuild import build_layered_net, validate_net
from pwe.serializers import load_scenario


class Command(BaseCommand):
    help = "Validate a scenario file and the layered net built from it."

    def add_arguments(self, parser):
        add_scenario_argument(parser)

    def handle(self, *args, **options):
        path = options["scenario"]
        try:
            scenario = load_scenario(path)
        except ConfigurationError as e:
            self._report(e.violations)
            raise input_error(f"{path}: invalid scenario") from e

        problems = scenario.violations()
        net = None
        if not problems:
            try:
                net = build_layered_net(scenario)
            except ConstructionError as e:
                problems = [str(e)]
            else:
                problems = validate_net(net)
        if problems:
            self._report(problems)
            raise input_error(f"{path}: {len(problems)} problem(s) found")

        self.stdout.write(
            self.style.SUCCESS(
                f"{scenario.name}: valid, layers {net.layer_sizes}, "
                f"{len(net.all_links())} links"
            )
        )

    def _report(self, problems: list[str]) -> None:
        for problem in problems:
            self.stdout.write(self.style.ERROR(f"  {problem}"))
