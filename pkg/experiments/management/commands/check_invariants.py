from django.core.management.base import BaseCommand, CommandError

from experiments.services.invariants import run_suite


class Command(BaseCommand):
    help = (
        "Run the numerical invariant suite and print PASS/FAIL per check. "
        "Exits with status 1 when any check fails."
    )

    def add_arguments(self, parser):
        parser.add_argument(
            "--directional",
            action="store_true",
            help="Also run the slow toy-scale training comparisons.",
        )
        parser.add_argument(
            "--only",
            nargs="+",
            default=None,
            help="Run only the named checks.",
        )

    def handle(self, *args, **options):
        try:
            results = run_suite(options["only"], options["directional"])
        except ValueError as exc:
            raise CommandError(str(exc), returncode=2) from exc

        for result in results:
            if result.passed:
                label = self.style.SUCCESS("PASS")
            else:
                label = self.style.ERROR("FAIL")
            self.stdout.write(f"{label} {result.name}: {result.detail}")

        failed = [r.name for r in results if not r.passed]
        if failed:
            raise CommandError(
                f"{len(failed)} of {len(results)} checks failed: "
                f"{', '.join(failed)}",
                returncode=1,
            )
        self.stdout.write(
            self.style.SUCCESS(f"All {len(results)} checks passed.")
        )
