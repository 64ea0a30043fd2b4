from rest_framework import viewsets

from .models import ExperimentRun
from .serializers import ExperimentRunSerializer


class ExperimentRunViewSet(viewsets.ReadOnlyModelViewSet):
    """
    Provides /api/runs/  (list)
            /api/runs/<id>/ (detail)

    Supports filters:
    - ?variant=eshampoo
    - ?task=mlp_toy
    - ?status=diverged
    - ?search=name
    """

    serializer_class = ExperimentRunSerializer

    def get_queryset(self):
        params = self.request.query_params
        qs = ExperimentRun.objects.all()

        variant = params.get("variant")
        if variant:
            qs = qs.filter(variant=variant)

        task = params.get("task")
        if task:
            qs = qs.filter(task_name=task)

        run_status = params.get("status")
        if run_status:
            qs = qs.filter(status=run_status)

        search = params.get("search")
        if search:
            qs = qs.filter(name__icontains=search)

        return qs
