from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from experiments.exceptions import ConfigError
from experiments.models import ExperimentRun
from experiments.services.runner import (
    compare_runs,
    format_table,
    load_config,
    write_comparison_csv,
)
from optimizers.exceptions import BoundViolation


class Command(BaseCommand):
    help = (
        "Run several configs on the same task and print a comparison of "
        "final loss, steps to target, wall time and eigendecompositions."
    )

    def add_arguments(self, parser):
        parser.add_argument(
            "--configs",
            nargs="+",
            required=True,
            help="Experiment config files (JSON) sharing one task.",
        )
        parser.add_argument(
            "--output",
            default=None,
            help="Comparison CSV path (default: <output dir>/comparison.csv).",
        )
        parser.add_argument(
            "--no-record",
            action="store_true",
            help="Do not store the runs in the run registry.",
        )

    def handle(self, *args, **options):
        try:
            configs = [load_config(path) for path in options["configs"]]
            comparison = compare_runs(configs)
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=2) from exc
        except BoundViolation as exc:
            raise CommandError(str(exc), returncode=1) from exc

        if not options["no_record"]:
            for cfg, result in zip(configs, comparison.results):
                ExperimentRun.from_summary(result.summary, cfg.data)

        output = options["output"] or (
            Path(settings.KRONOPT_OUTPUT_DIR) / "comparison.csv"
        )
        path = write_comparison_csv(output, comparison.table)

        self.stdout.write(format_table(comparison.table))
        self.stdout.write(
            self.style.SUCCESS(
                f"Compared {len(comparison.table)} runs; wrote {path}"
            )
        )
