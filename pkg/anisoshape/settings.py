import os
from pathlib import Path
import environ

# Initialize environ
env = environ.Env(
    # Set casting and default values
    DEBUG=(bool, False),
    SECRET_KEY=(str, 'anisoshape-local-only'),
    LANGUAGE_CODE=(str, 'en-us'),
    TIME_ZONE=(str, 'UTC'),
    LOG_LEVEL=(str, 'INFO'),
    SHAPE_CAP=(float, 16.0),
    SHAPE_GRID=(list, [24, 24, 16]),
    SHAPE_TOL=(float, 1e-6),
    SHAPE_MAX_ITER=(int, 400),
    LATTICE_SAMPLES=(int, 64),
    ELLIPSE_DIRECTIONS=(int, 720),
    MULTIPLICITY_TOL=(float, 1e-6),
    PREDICTED_GRID=(int, 128),
    STUDY_SEED=(int, 0x5EED),
    MACRO_TILES=(int, 2500),
    ANISOSHAPE_THREADS=(int, max(1, os.cpu_count() or 1)),
)


# Read .env file if it exists
BASE_DIR = Path(__file__).resolve().parent.parent
environ.Env.read_env(os.path.join(BASE_DIR, '.env'))

SECRET_KEY = env('SECRET_KEY')

DEBUG = env('DEBUG')

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'core',
]

# Database
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

# Internationalization
LANGUAGE_CODE = env('LANGUAGE_CODE')
TIME_ZONE = env('TIME_ZONE')
USE_I18N = True
USE_TZ = True

# Default primary key field type
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Shape function oracle settings
SHAPE_CAP = env('SHAPE_CAP')
SHAPE_GRID = tuple(int(n) for n in env('SHAPE_GRID'))
SHAPE_TOL = env('SHAPE_TOL')
SHAPE_MAX_ITER = env('SHAPE_MAX_ITER')

# Quadrature and sampling settings
LATTICE_SAMPLES = env('LATTICE_SAMPLES')
ELLIPSE_DIRECTIONS = env('ELLIPSE_DIRECTIONS')
MULTIPLICITY_TOL = env('MULTIPLICITY_TOL')
PREDICTED_GRID = env('PREDICTED_GRID')

# Mesh generation and study settings
STUDY_SEED = env('STUDY_SEED')
MACRO_TILES = env('MACRO_TILES')
ANISOSHAPE_THREADS = max(1, env('ANISOSHAPE_THREADS'))

# Logging configuration
LOG_LEVEL = env('LOG_LEVEL').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'level': 'WARNING',
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
        'file': {
            'level': 'DEBUG',
            'class': 'logging.FileHandler',
            'filename': os.path.join(BASE_DIR, 'logs', 'anisoshape.log'),
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': 'INFO',
            'propagate': True,
        },
        'core': {
            'handlers': ['console', 'file'],
            'level': LOG_LEVEL,
            'propagate': True,
        },
    },
}

# Ensure the logs directory exists
os.makedirs(os.path.join(BASE_DIR, 'logs'), exist_ok=True)

# Cache settings (SigmaTable entries computed by the oracle)
CACHES = {
    'default': {
        'BACKEND': 'django.core.cache.backends.locmem.LocMemCache',
        'LOCATION': 'anisoshape-sigma',
    }
}
