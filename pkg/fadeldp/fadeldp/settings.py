"""
Django settings for fadeldp project.

Generated by 'django-admin startproject' using Django 5.2.7.

For more information on this file, see
https://docs.djangoproject.com/en/5.2/topics/settings/

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# Секретный ключ и режим отладки берутся из .env файла
SECRET_KEY = config('SECRET_KEY', default='fadeldp-development-key')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'rest_framework',
    'lab.apps.LabConfig',
]


# Database
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases
# Журнал запусков и кэш прогонов; по умолчанию SQLite рядом с manage.py

DB_ENGINE = config('DB_ENGINE', default='django.db.backends.sqlite3')

if DB_ENGINE.endswith('sqlite3'):
    DATABASES = {
        'default': {
            'ENGINE': DB_ENGINE,
            'NAME': BASE_DIR / config('DB_NAME', default='fadeldp.sqlite3'),
        }
    }
else:
    DATABASES = {
        'default': {
            'ENGINE':   DB_ENGINE,
            'NAME':     config('DB_NAME'),
            'USER':     config('DB_USER'),
            'PASSWORD': config('DB_PASSWORD'),
            'HOST':     config('DB_HOST'),
            'PORT':     config('DB_PORT'),
        }
    }


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'ru'

TIME_ZONE = 'Europe/Moscow'

USE_I18N = True

USE_TZ = True


# Default primary key field type
# https://docs.djangoproject.com/en/5.2/ref/settings/#default-auto-field

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Вывод экспериментов и параметры численных схем
FADELDP_OUTPUT_DIR = config('FADELDP_OUTPUT_DIR', default='runs')
FADELDP_THREADS = config('FADELDP_THREADS', default=1, cast=int)
FADELDP_CHUNK_SIZE = config('FADELDP_CHUNK_SIZE', default=4096, cast=int)
FADELDP_BLOWUP_CEILING = config('FADELDP_BLOWUP_CEILING', default=1e6, cast=float)
FADELDP_SINGULAR_FLOOR = config('FADELDP_SINGULAR_FLOOR', default=1e-8, cast=float)
FADELDP_LOG_LEVEL = config('FADELDP_LOG_LEVEL', default='INFO')

# Медленные приёмочные тесты запускаются только по запросу
FADELDP_SLOW_TESTS = config('FADELDP_SLOW_TESTS', default=False, cast=bool)


LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'lab': {
            'handlers': ['console'],
            'level': FADELDP_LOG_LEVEL,
            'propagate': False,
        },
    },
}

# Test runner: медленные тесты с тегом slow пропускаются без FADELDP_SLOW_TESTS
TEST_RUNNER = 'lab.test_runner.LabTestRunner'
