# Централизованная обработка ошибок лаборатории

from rest_framework.exceptions import ValidationError as DRFValidationError
from django.core.exceptions import ValidationError as DjangoValidationError
import logging

logger = logging.getLogger(__name__)

EXIT_SUCCESS = 0
EXIT_CONFIG = 2
EXIT_REFUSAL = 3
EXIT_DIVERGENCE = 4
EXIT_INFEASIBLE = 5

EXIT_CODE_MESSAGES = {
    1: 'Непредвиденная ошибка. Подробности в журнале.',
    EXIT_CONFIG: 'Ошибка конфигурации.',
    EXIT_REFUSAL: 'Модель не удовлетворяет условию диссипативности.',
    EXIT_DIVERGENCE: 'Численная расходимость.',
    EXIT_INFEASIBLE: 'Задача о функции действия не имеет допустимого решения.',
}


class LabError(Exception):
    exit_code = 1
    default_code = 'error'
    default_detail = EXIT_CODE_MESSAGES[1]

    def __init__(self, detail=None, code=None):
        self.detail = detail if detail is not None else self.default_detail
        self.code = code or self.default_code
        super().__init__(self.detail)


class ConfigError(LabError):
    exit_code = EXIT_CONFIG
    default_code = 'config_error'
    default_detail = EXIT_CODE_MESSAGES[EXIT_CONFIG]


class InvalidSegmentError(ConfigError):
    default_code = 'invalid_segment'
    default_detail = 'Некорректный сегмент истории.'


class InvalidMeasureError(ConfigError):
    default_code = 'invalid_measure'
    default_detail = 'Некорректная мера запаздывания.'


class DivergentMomentError(InvalidMeasureError):
    default_code = 'divergent_moment'
    default_detail = 'Момент меры расходится: требуется beta > kappa.'


class UnsupportedError(ConfigError):
    default_code = 'unsupported'
    default_detail = 'Операция не поддерживается для данной модели.'


class InsufficientReplicasError(ConfigError):
    default_code = 'insufficient_replicas'
    default_detail = 'Слишком мало реплик для статистического теста.'


class BurnInError(ConfigError):
    default_code = 'burn_in'
    default_detail = 'Разгон (burn-in) недостаточен: pull-back разности выше допуска.'


class ModelRefusalError(LabError):
    exit_code = EXIT_REFUSAL
    default_code = 'model_refusal'
    default_detail = EXIT_CODE_MESSAGES[EXIT_REFUSAL]

    def __init__(self, detail=None, code=None, margin=None):
        self.margin = margin
        super().__init__(detail, code)


class DivergenceError(LabError):
    exit_code = EXIT_DIVERGENCE
    default_code = 'diverged'
    default_detail = EXIT_CODE_MESSAGES[EXIT_DIVERGENCE]

    def __init__(self, detail=None, code=None, step=None, time=None):
        self.step = step
        self.time = time
        super().__init__(detail, code)


class WeightOverflowError(DivergenceError):
    default_code = 'weight_overflow'
    default_detail = ('Переполнение весов Гирсанова: уменьшите наклон '
                      'или увеличьте eps.')


class SingularDiffusionError(DivergenceError):
    default_code = 'singular_diffusion'
    default_detail = 'Матрица диффузии вырождена вдоль пути.'


class InfeasibleRateError(LabError):
    exit_code = EXIT_INFEASIBLE
    default_code = 'infeasible'
    default_detail = EXIT_CODE_MESSAGES[EXIT_INFEASIBLE]


def _join_key(parent_key, key):
    if isinstance(key, int):
        return f'{parent_key}[{key}]'
    return f'{parent_key}.{key}' if parent_key else str(key)


# Разворачиваем вложенные ошибки сериализатора в строки «ключ: сообщение»
def flatten_errors(errors, parent_key=''):
    messages = []

    if isinstance(errors, str):
        messages.append(f'{parent_key}: {errors}' if parent_key else str(errors))
    elif isinstance(errors, list):
        for index, item in enumerate(errors):
            if isinstance(item, (dict, list)) and item:
                # Списки вложенных объектов нумеруем, как в конфигурации
                key = _join_key(parent_key, index) if isinstance(item, dict) else parent_key
                messages.extend(flatten_errors(item, key))
            elif isinstance(item, (dict, list)):
                continue
            else:
                messages.append(f'{parent_key}: {item}' if parent_key else str(item))
    elif isinstance(errors, dict):
        for key, value in errors.items():
            if key in ('non_field_errors', 'detail'):
                messages.extend(flatten_errors(value, parent_key))
            elif isinstance(key, int) or (isinstance(key, str) and key.isdigit()):
                messages.extend(flatten_errors(value, _join_key(parent_key, int(key))))
            else:
                messages.extend(flatten_errors(value, _join_key(parent_key, key)))

    return messages


def handle_exception(exc):
    """Преобразует исключение в тройку (код выхода, сообщение, код ошибки)."""
    if isinstance(exc, DjangoValidationError):
        if hasattr(exc, 'message_dict'):
            exc = DRFValidationError(detail=exc.message_dict)
        else:
            exc = DRFValidationError(detail=exc.messages)

    if isinstance(exc, DRFValidationError):
        flat_messages = flatten_errors(exc.detail)
        msg = '; '.join(flat_messages) if flat_messages else EXIT_CODE_MESSAGES[EXIT_CONFIG]
        return EXIT_CONFIG, msg, 'invalid'

    if isinstance(exc, LabError):
        msg = str(exc.detail)
        if isinstance(exc, DivergenceError) and exc.time is not None and 't =' not in msg:
            msg = f'{msg} (шаг {exc.step}, t = {exc.time:.6g})'
        if isinstance(exc, ModelRefusalError) and exc.margin is not None and 'запас' not in msg:
            msg = f'{msg} (запас диссипативности {exc.margin:.6g})'
        return exc.exit_code, msg, exc.code

    if isinstance(exc, (FileNotFoundError, IsADirectoryError)):
        return EXIT_CONFIG, f'Файл конфигурации не найден: {exc.filename}', 'not_found'

    # Непредвиденная ошибка
    logger.exception('Необработанное исключение: %s', exc)
    return 1, EXIT_CODE_MESSAGES[1], 'server_error'
