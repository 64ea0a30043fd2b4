from django.contrib import admin
from .models import ExperimentRun


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = (
        "name",
        "task_name",
        "variant",
        "status",
        "final_loss",
        "total_eig_count",
        "created_at",
    )
    search_fields = ("name",)
    list_filter = ("variant", "task_name", "status")
    readonly_fields = ("created_at",)
