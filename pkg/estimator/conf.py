from django.conf import settings


def velest_setting(name):
    """Read one entry of the ``VELEST`` policy dict from the Django settings."""
    return settings.VELEST[name]
