import uuid

from django.db import models


class ExperimentRun(models.Model):
    """
    One completed or aborted training run started from the CLI.

    The full validated config is kept as JSON; the scalar columns are
    the summary numbers the admin and the API filter and sort on.
    """

    STATUS_COMPLETED = "completed"
    STATUS_DIVERGED = "diverged"
    STATUS_CHOICES = [
        (STATUS_COMPLETED, "Completed"),
        (STATUS_DIVERGED, "Diverged"),
    ]

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    name = models.CharField(max_length=200)
    task_name = models.CharField(max_length=100)
    variant = models.CharField(max_length=50)
    seed = models.IntegerField(default=0)
    config = models.JSONField(default=dict)

    status = models.CharField(
        max_length=20, choices=STATUS_CHOICES, default=STATUS_COMPLETED
    )
    initial_loss = models.FloatField(null=True, blank=True)
    final_loss = models.FloatField(null=True, blank=True)
    target_loss = models.FloatField(null=True, blank=True)
    steps_completed = models.PositiveIntegerField(default=0)
    steps_to_target = models.PositiveIntegerField(null=True, blank=True)
    aborted_at_step = models.PositiveIntegerField(null=True, blank=True)

    total_eig_count = models.PositiveIntegerField(default=0)
    total_qr_iters = models.PositiveIntegerField(default=0)
    wall_time_s = models.FloatField(default=0.0)

    telemetry_path = models.CharField(max_length=500, blank=True)
    summary_path = models.CharField(max_length=500, blank=True)

    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self):
        return f"{self.name} ({self.variant} on {self.task_name})"

    @classmethod
    def from_summary(cls, summary: dict, config: dict):
        """Store a run summary produced by the runner."""
        return cls.objects.create(
            name=summary["name"],
            task_name=summary["task"],
            variant=summary["variant"],
            seed=summary["seed"],
            config=config,
            status=summary["status"],
            initial_loss=summary["initial_loss"],
            final_loss=summary["final_loss"],
            target_loss=summary["target_loss"],
            steps_completed=summary["steps_completed"],
            steps_to_target=summary["steps_to_target"],
            aborted_at_step=summary["aborted_at_step"],
            total_eig_count=summary["total_eig_count"],
            total_qr_iters=summary["total_qr_iters"],
            wall_time_s=summary["wall_time_s"],
            telemetry_path=summary.get("telemetry_path") or "",
            summary_path=summary.get("summary_path") or "",
        )
