from django.apps import AppConfig


class PweConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "pwe"
    verbose_name = "Programmable wireless environments"
