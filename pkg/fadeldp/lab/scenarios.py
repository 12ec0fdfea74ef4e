# Встроенные сценарии: готовые блоки model и memory с согласованным eps по умолчанию.
import copy

from .exceptions import ConfigError

_SCENARIOS = {
    'ou': {
        'description': 'Скалярный Орнштейн–Уленбек без запаздывания: dY = −Y dt + √ε dW.',
        'default_eps': 0.5,
        'model': {
            'name': 'ou',
            'd': 1,
            'm': 1,
            'A': [[1.0]],
            'B': [[0.0]],
            'sigma0': [[1.0]],
            'mu1': {'atoms': [{'lag': 0.0, 'weight': 1.0}]},
            'mu2': {'atoms': [{'lag': 0.0, 'weight': 1.0}]},
        },
        'memory': {'r': 1.0, 'h': 0.01},
    },
    'delay-ou': {
        'description': 'Линейное уравнение с сосредоточенным запаздыванием 0.1: '
                       'dY = (−2Y(t) + 0.5Y(t − 0.1))dt + √ε dW.',
        'default_eps': 0.25,
        'model': {
            'name': 'delay-ou',
            'd': 1,
            'm': 1,
            'A': [[2.0]],
            'B': [[0.5]],
            'sigma0': [[1.0]],
            'mu1': {'atoms': [{'lag': -0.1, 'weight': 1.0}]},
            'mu2': {'atoms': [{'lag': 0.0, 'weight': 1.0}]},
        },
        'memory': {'r': 1.0, 'h': 0.01},
    },
    'multiplicative': {
        'description': 'Мультипликативный шум σ(φ) = 0.2 + 0.1∫φ dμ2 с экспоненциальной памятью '
                       'и ограниченной нелинейностью в сносе.',
        'default_eps': 0.1,
        'model': {
            'name': 'multiplicative',
            'd': 1,
            'm': 1,
            'A': [[2.0]],
            'B': [[0.5]],
            'sigma0': [[0.2]],
            'sigma1': [[[0.1]]],
            'nonlinearity': {'name': 'tanh', 'amplitude': -0.5},
            'mu1': {'atoms': [{'lag': -0.1, 'weight': 1.0}]},
            'mu2': {'expo': {'mass': 1.0, 'beta': 5.0}},
        },
        'memory': {'r': 1.0, 'h': 0.01},
    },
}


def scenario_registry():
    """Список сценариев; каждый элемент — независимая копия."""
    return [
        {'name': name, 'description': data['description'], 'default_eps': data['default_eps'],
         'model': copy.deepcopy(data['model']), 'memory': copy.deepcopy(data['memory'])}
        for name, data in _SCENARIOS.items()
    ]


def scenario_config(name):
    if name not in _SCENARIOS:
        raise ConfigError(f'Неизвестный сценарий «{name}». Доступны: {", ".join(_SCENARIOS)}.',
                          code='unknown_scenario')
    data = _SCENARIOS[name]
    return {'model': copy.deepcopy(data['model']), 'memory': copy.deepcopy(data['memory'])}


def default_eps(name):
    return _SCENARIOS[name]['default_eps'] if name in _SCENARIOS else None


def deep_merge(base, override):
    """Слияние блоков по ключам: словари сливаются рекурсивно, остальное заменяется."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged
