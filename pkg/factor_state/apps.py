from django.apps import AppConfig


class FactorStateConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "factor_state"
