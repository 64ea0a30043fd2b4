"""
WSGI entry point for the kronopt run registry API.

Only the read-only ``/api/runs/`` endpoints are served; experiments are
driven from ``manage.py`` commands.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "kronopt.settings")

application = get_wsgi_application()
