"""
Settings for using ``cssl`` outside of a Django project.

The library validates its configuration with Django forms, which need
configured settings. ``setup()`` configures a minimal settings module (no
apps, no database) unless the host process already did so.
"""
import logging
import os

import django
from django.apps import apps
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured

logger = logging.getLogger(__name__)


def _env_workers():
    value = os.environ.get('CSSL_WORKERS')
    if value:
        try:
            workers = int(value)
        except ValueError:
            raise ImproperlyConfigured(
                'CSSL_WORKERS must be a positive integer, got {0!r}.'.format(
                    value))
        if workers < 1:
            raise ImproperlyConfigured(
                'CSSL_WORKERS must be a positive integer, got {0!r}.'.format(
                    value))
        return workers
    return os.cpu_count() or 1


DEFAULTS = {
    'CSSL_DENSITY_TOL': 1e-8,
    'CSSL_ZERO_TOL': 1e-6,
}


def logging_config(level='WARNING'):
    return {
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {
            'plain': {
                'format': '%(levelname)s %(name)s: %(message)s',
            },
        },
        'handlers': {
            'stderr': {
                'class': 'logging.StreamHandler',
                'formatter': 'plain',
            },
        },
        'loggers': {
            'cssl': {
                'handlers': ['stderr'],
                'level': level,
                'propagate': False,
            },
        },
    }


def setup(**overrides):
    """
    Configure Django settings for standalone use. Keyword arguments override
    the defaults. Does nothing to the settings when they are configured
    already or ``DJANGO_SETTINGS_MODULE`` points at a settings module.
    """
    if not settings.configured and \
            not os.environ.get('DJANGO_SETTINGS_MODULE'):
        options = {
            'USE_I18N': False,
            'INSTALLED_APPS': [],
            'LOGGING': logging_config(),
            'CSSL_WORKERS': _env_workers(),
        }
        options.update(DEFAULTS)
        options.update(overrides)
        settings.configure(**options)
        logger.debug('configured standalone settings')
    if not apps.ready:
        django.setup()


def get(name):
    """
    Read a ``CSSL_*`` setting, falling back to the built-in default when
    Django is not configured or the setting is missing.
    """
    if settings.configured:
        value = getattr(settings, name, None)
        if value is not None:
            return value
    if name == 'CSSL_WORKERS':
        return _env_workers()
    try:
        return DEFAULTS[name]
    except KeyError:
        raise ImproperlyConfigured('Unknown setting {0!r}.'.format(name))


def default_workers():
    return get('CSSL_WORKERS')
