"""
URL configuration for the kronopt project.

The only public surface is the read-only run registry; training,
comparisons and invariant checks are management commands.
"""

from django.contrib import admin
from django.urls import path, include

urlpatterns = [
    path("admin/", admin.site.urls),
    # Run registry API
    path("api/", include("experiments.urls")),
]
