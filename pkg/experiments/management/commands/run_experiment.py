from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from experiments.exceptions import ConfigError
from experiments.models import ExperimentRun
from experiments.services.runner import (
    STATUS_COMPLETED,
    load_config,
    run_experiment,
)
from optimizers.exceptions import BoundViolation


class Command(BaseCommand):
    help = (
        "Train one task with one optimizer from a JSON config and write "
        "telemetry CSV plus a summary JSON."
    )

    def add_arguments(self, parser):
        parser.add_argument(
            "--config",
            required=True,
            help="Path to the experiment config (JSON).",
        )
        parser.add_argument(
            "--output-dir",
            default=None,
            help="Override the config's output directory.",
        )
        parser.add_argument(
            "--no-record",
            action="store_true",
            help="Do not store the run in the run registry.",
        )

    def handle(self, *args, **options):
        try:
            cfg = load_config(options["config"])
            if options["output_dir"]:
                cfg.output_dir = Path(options["output_dir"])
            result = run_experiment(cfg)
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=2) from exc
        except BoundViolation as exc:
            raise CommandError(str(exc), returncode=1) from exc

        summary = result.summary
        if not options["no_record"]:
            ExperimentRun.from_summary(summary, cfg.data)

        message = (
            f"{summary['name']}: {summary['status']} after "
            f"{summary['steps_completed']} steps, "
            f"loss {summary['initial_loss']} -> {summary['final_loss']}, "
            f"{summary['total_eig_count']} eigendecompositions"
        )
        if summary["status"] == STATUS_COMPLETED:
            self.stdout.write(self.style.SUCCESS(message))
        else:
            self.stdout.write(
                self.style.WARNING(
                    f"{message} (aborted at step "
                    f"{summary['aborted_at_step']})"
                )
            )
        self.stdout.write(f"Telemetry: {summary['telemetry_path']}")
        self.stdout.write(f"Summary: {summary['summary_path']}")
