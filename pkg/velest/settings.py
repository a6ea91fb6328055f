"""
Django settings for velest project.

Holds the ambient configuration of the velocity estimation toolkit: the run
database, logging, and the numerical policy constants shared by the filter,
the vehicle models and the training loop. Per-run options (model kind,
vehicle parameters, training schedule...) come from the YAML run config, see
``estimator.config``.
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# Only used by Django internals; no sessions or signed cookies are served.
SECRET_KEY = os.environ.get('VELEST_SECRET_KEY', 'velest-local-not-secret')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'rest_framework',
    'estimator',
]

MIDDLEWARE = []


# Database
# Evaluation records are kept in a local SQLite file next to the project.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': Path(os.environ.get('VELEST_DATABASE', BASE_DIR / 'velest.sqlite3')),
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

REST_FRAMEWORK = {
    "DEFAULT_RENDERER_CLASSES": (
        "rest_framework.renderers.JSONRenderer",
    ),
    "UNAUTHENTICATED_USER": None,
}

# Numerical policy shared by every run. Values that the run config may
# override (UT scaling, friction bounds, training schedule) live in the
# config serializers instead.

VELEST = {
    # prefix for run-config overrides, e.g. VELEST_TRAIN__LR=0.001
    "ENV_PREFIX": "VELEST_",
    # Cholesky recovery: add delta*I, multiply delta by GROWTH on each retry
    "JITTER": 1e-9,
    "JITTER_RETRIES": 3,
    "JITTER_GROWTH": 10.0,
    # relative tolerance for the symmetry precondition of cholesky
    "SYMMETRY_RTOL": 1e-9,
    # low-speed guard of the slip definitions, m/s
    "SLIP_V_EPS": 0.1,
    # width of tanh(omega_s / w) used for sgn(omega_s) on the tape
    "SMOOTH_SIGN_WIDTH": 0.05,
    # network inputs [vx, vy, r, omega_s, delta, iq, kappa, alpha_f, alpha_r]
    "FEATURE_SCALES": [5.0, 2.0, 3.0, 5.0, 0.45, 40.0, 1.0, 0.5, 0.5],
    # tire forces are O(10 N) on a 1/8 scale car
    "FORCE_SCALE": 30.0,
    # per-state output scale of the full neural / residual derivative
    "DERIVATIVE_SCALES": [5.0, 5.0, 20.0, 20.0],
    # friction of the tire sets used to label recordings
    "TIRE_FRICTION": {"A": 0.65, "B": 0.58, "C": 0.43, "D": 0.45},
    # friction used by the dynamics never drops below this, even for sigma points
    "FRICTION_FLOOR": 0.01,
    "CHECKPOINT_VERSION": 1,
    # simulated state blowup threshold, m/s
    "MAX_SPEED": 20.0,
}


LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "%(asctime)s %(levelname)s %(name)s %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "loggers": {
        "estimator": {
            "handlers": ["console"],
            "level": os.environ.get("VELEST_LOG_LEVEL", "INFO"),
            "propagate": False,
        },
    },
}

# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True
