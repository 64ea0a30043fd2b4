from django.core.management.base import BaseCommand, CommandError

from tasks.services.datasets import export_dataset_csv, gaussian_mixture


class Command(BaseCommand):
    help = "Write the mlp_toy Gaussian-mixture dataset to a CSV file."

    def add_arguments(self, parser):
        parser.add_argument("path", help="Destination CSV file.")
        parser.add_argument(
            "--seed",
            type=int,
            default=0,
            help="Dataset seed (matches the task seed).",
        )
        parser.add_argument(
            "--num-points",
            type=int,
            default=2048,
            help="Number of points to draw.",
        )
        parser.add_argument(
            "--num-classes",
            type=int,
            default=4,
            help="Number of mixture components.",
        )

    def handle(self, *args, **options):
        try:
            points, labels = gaussian_mixture(
                options["num_points"], options["num_classes"], options["seed"]
            )
        except ValueError as exc:
            raise CommandError(str(exc), returncode=2) from exc

        path = export_dataset_csv(options["path"], points, labels)
        self.stdout.write(
            self.style.SUCCESS(f"Wrote {len(labels)} points to {path}")
        )
