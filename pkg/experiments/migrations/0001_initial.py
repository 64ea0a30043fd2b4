# Generated by Django 4.2.27

from django.db import migrations, models
import uuid


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                (
                    "id",
                    models.UUIDField(
                        default=uuid.uuid4,
                        editable=False,
                        primary_key=True,
                        serialize=False,
                    ),
                ),
                ("name", models.CharField(max_length=200)),
                ("task_name", models.CharField(max_length=100)),
                ("variant", models.CharField(max_length=50)),
                ("seed", models.IntegerField(default=0)),
                ("config", models.JSONField(default=dict)),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("completed", "Completed"),
                            ("diverged", "Diverged"),
                        ],
                        default="completed",
                        max_length=20,
                    ),
                ),
                ("initial_loss", models.FloatField(blank=True, null=True)),
                ("final_loss", models.FloatField(blank=True, null=True)),
                ("target_loss", models.FloatField(blank=True, null=True)),
                (
                    "steps_completed",
                    models.PositiveIntegerField(default=0),
                ),
                (
                    "steps_to_target",
                    models.PositiveIntegerField(blank=True, null=True),
                ),
                (
                    "aborted_at_step",
                    models.PositiveIntegerField(blank=True, null=True),
                ),
                (
                    "total_eig_count",
                    models.PositiveIntegerField(default=0),
                ),
                ("total_qr_iters", models.PositiveIntegerField(default=0)),
                ("wall_time_s", models.FloatField(default=0.0)),
                (
                    "telemetry_path",
                    models.CharField(blank=True, max_length=500),
                ),
                (
                    "summary_path",
                    models.CharField(blank=True, max_length=500),
                ),
                ("created_at", models.DateTimeField(auto_now_add=True)),
            ],
            options={
                "ordering": ["-created_at"],
            },
        ),
    ]
