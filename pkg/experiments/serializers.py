from rest_framework import serializers

from factor_state.services.factors import RefreshMode
from optimizers.services.blocks import Variant
from optimizers.services.updates import CorrectionMode
from tasks.services.problems import TASKS, KronQuadratic, build_task
from .models import ExperimentRun

SCHEDULE_KINDS = ("constant", "linear_warmup_cosine")


def _choices(enum_cls):
    return [member.value for member in enum_cls]


def _check_decay(value, name):
    if value is not None and not (0 <= value < 1):
        raise serializers.ValidationError(f"{name} must lie in [0, 1).")
    return value


class TaskSpecSerializer(serializers.Serializer):
    name = serializers.ChoiceField(choices=sorted(TASKS))
    seed = serializers.IntegerField(required=False, default=0)
    params = serializers.DictField(required=False, default=dict)


class ScheduleSerializer(serializers.Serializer):
    """Learning-rate schedule; `total_steps` defaults to the run length."""

    kind = serializers.ChoiceField(choices=SCHEDULE_KINDS, default="constant")
    lr = serializers.FloatField(min_value=0.0)
    warmup_steps = serializers.IntegerField(
        required=False, default=0, min_value=0
    )
    total_steps = serializers.IntegerField(
        required=False, allow_null=True, default=None, min_value=1
    )


class RefreshPolicySerializer(serializers.Serializer):
    mode = serializers.ChoiceField(
        choices=_choices(RefreshMode), default=RefreshMode.FIXED_EIGH.value
    )
    tau = serializers.FloatField(required=False, default=0.1)
    frequency = serializers.IntegerField(
        required=False, default=1, min_value=1
    )
    max_qr_iters = serializers.IntegerField(
        required=False, default=10, min_value=1
    )

    def validate_tau(self, value):
        """Ensure tau is in [0, 1)."""
        if not (0 <= value < 1):
            raise serializers.ValidationError("tau must lie in [0, 1).")
        return value


class OptimizerSerializer(serializers.Serializer):
    variant = serializers.ChoiceField(choices=_choices(Variant))
    correction_mode = serializers.ChoiceField(
        choices=_choices(CorrectionMode),
        default=CorrectionMode.SOAP_EMA.value,
    )
    beta2 = serializers.FloatField(required=False, default=0.95)
    beta3 = serializers.FloatField(
        required=False, allow_null=True, default=None
    )
    epsilon = serializers.FloatField(
        required=False, default=1e-8, min_value=0.0
    )
    exponent = serializers.FloatField(required=False, default=0.5)
    weight_decay = serializers.FloatField(
        required=False, default=0.0, min_value=0.0
    )
    factor_init = serializers.FloatField(
        required=False, default=0.0, min_value=0.0
    )
    max_preconditioner_dim = serializers.IntegerField(
        required=False, default=64, min_value=1
    )
    check_bounds = serializers.BooleanField(required=False, default=False)
    policy = RefreshPolicySerializer(required=False)

    def validate_beta2(self, value):
        return _check_decay(value, "beta2")

    def validate_beta3(self, value):
        return _check_decay(value, "beta3")

    def validate_exponent(self, value):
        if value <= 0:
            raise serializers.ValidationError("exponent must be positive.")
        return value

    def validate(self, attrs):
        """Fill in the default refresh policy."""
        if "policy" not in attrs:
            policy = RefreshPolicySerializer(data={})
            policy.is_valid(raise_exception=True)
            attrs["policy"] = policy.validated_data
        return attrs


class ExperimentConfigSerializer(serializers.Serializer):
    """Validates an experiment config document."""

    name = serializers.CharField(max_length=200)
    seed = serializers.IntegerField(required=False, default=0)
    steps = serializers.IntegerField(min_value=1)
    batch_size = serializers.IntegerField(
        required=False, allow_null=True, default=None, min_value=1
    )
    telemetry_every = serializers.IntegerField(
        required=False, default=1, min_value=1
    )
    target_loss = serializers.FloatField(
        required=False, allow_null=True, default=None
    )
    output_dir = serializers.CharField(
        required=False, allow_null=True, allow_blank=True, default=None
    )
    task = TaskSpecSerializer()
    schedule = ScheduleSerializer()
    optimizer = OptimizerSerializer()

    def validate(self, attrs):
        """
        Resolve schedule defaults, fold batch_size into the task params
        and make sure the task can actually be built.
        """
        schedule = attrs["schedule"]
        if schedule["kind"] == "linear_warmup_cosine":
            if schedule.get("total_steps") is None:
                schedule["total_steps"] = attrs["steps"]
            if schedule["warmup_steps"] > schedule["total_steps"]:
                raise serializers.ValidationError(
                    {"schedule": "warmup_steps cannot exceed total_steps."}
                )

        task = attrs["task"]
        params = dict(task.get("params") or {})
        batch_size = attrs.get("batch_size")
        if batch_size is not None and task["name"] != KronQuadratic.name:
            params.setdefault("batch_size", batch_size)
        task["params"] = params
        try:
            build_task(task)
        except (TypeError, ValueError, OSError) as exc:
            raise serializers.ValidationError({"task": str(exc)})
        return attrs


class ExperimentRunSerializer(serializers.ModelSerializer):
    class Meta:
        model = ExperimentRun
        fields = [
            "id",
            "name",
            "task_name",
            "variant",
            "seed",
            "status",
            "initial_loss",
            "final_loss",
            "target_loss",
            "steps_completed",
            "steps_to_target",
            "aborted_at_step",
            "total_eig_count",
            "total_qr_iters",
            "wall_time_s",
            "telemetry_path",
            "summary_path",
            "config",
            "created_at",
        ]
