"""
Схема Эйлера–Маруямы (и Хойна для детерминированного скелета) для
уравнения с памятью на сетке шага h.

Шум двусторонний и воспроизводимый: приращения на узле k берутся из
счётного генератора Philox, ключ которого задаётся (seed, stream_id, сторона).
Поэтому продление времени влево или вправо не меняет уже выданных приращений.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
import logging
import math

import numpy as np
from django.conf import settings
from scipy import stats

from .exceptions import ConfigError, DivergenceError, ModelRefusalError
from .fading_memory import (
    GRID_TOL, PathOnGrid, Segment, absorb_tail, integer_indices, segment_norms, weighted_path_sum,
)

logger = logging.getLogger(__name__)

SCHEMES = ('euler', 'heun')


def _blowup_ceiling():
    return float(getattr(settings, 'FADELDP_BLOWUP_CEILING', 1e6))


def grid_index(t, h):
    pos = t / h
    k = int(round(pos))
    if abs(pos - k) > 1e-6 * max(1.0, abs(pos)):
        raise ConfigError(f'Момент t = {t} не лежит на сетке шага h = {h}.')
    return k


@dataclass(frozen=True)
class SimConfig:
    h: float
    T: float
    t0: float = 0.0
    scheme: str = 'euler'
    seed: int = 0

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigError(f'Шаг h должен быть положительным, получено {self.h}.')
        if self.scheme not in SCHEMES:
            raise ConfigError(f'Неизвестная схема «{self.scheme}». Доступны: {", ".join(SCHEMES)}.')
        if self.T < self.t0:
            raise ConfigError(f'Горизонт T = {self.T} меньше начального момента t0 = {self.t0}.')
        if self.seed < 0:
            raise ConfigError('seed должен быть неотрицательным.')

    @property
    def n_steps(self):
        return grid_index(self.T - self.t0, self.h)

    def replace(self, **changes):
        data = {'h': self.h, 'T': self.T, 't0': self.t0, 'scheme': self.scheme, 'seed': self.seed}
        data.update(changes)
        return SimConfig(**data)


# Шум

def _generator(seed, stream_id, side):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream_id), side])))


def grid_increments(seed, stream_id, k_start, n, m, h):
    """Приращения на узлах k_start..k_start + n − 1; узел k покрывает [kh, (k + 1)h]."""
    k_end = k_start + n
    scale = math.sqrt(h)
    parts = []
    if k_start < 0:
        depth = -k_start
        backward = _generator(seed, stream_id, 1).standard_normal((depth, m)) * scale
        # backward[i] соответствует узлу −1 − i
        parts.append(backward[::-1][:depth - max(0, -k_end)] if k_end < 0 else backward[::-1])
    if k_end > 0:
        forward = _generator(seed, stream_id, 0).standard_normal((k_end, m)) * scale
        parts.append(forward[max(0, k_start):])
    if not parts:
        return np.zeros((0, m))
    return np.vstack(parts)


def batch_increments(seed, stream_ids, k_start, n, m, h):
    """(n, n_rep, m): общие для всех потребителей приращения по номерам потоков."""
    out = np.empty((n, len(stream_ids), m))
    for i, stream_id in enumerate(stream_ids):
        out[:, i, :] = grid_increments(seed, stream_id, k_start, n, m, h)
    return out


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Двусторонний винеровский процесс на сетке, W(0) = 0."""

    h: float
    k_min: int
    increments: np.ndarray
    seed: int = 0
    stream_id: int = 0

    @property
    def m(self):
        return self.increments.shape[1]

    @property
    def k_max(self):
        return self.k_min + self.increments.shape[0]

    @property
    def t_min(self):
        return self.k_min * self.h

    @property
    def t_max(self):
        return self.k_max * self.h

    def increments_between(self, t_a, t_b):
        k_a = grid_index(t_a, self.h)
        k_b = grid_index(t_b, self.h)
        if k_a < self.k_min or k_b > self.k_max or k_b < k_a:
            raise ConfigError(f'Интервал [{t_a}, {t_b}] вне области шума [{self.t_min}, {self.t_max}].')
        return self.increments[k_a - self.k_min:k_b - self.k_min]

    @cached_property
    def _cumulative(self):
        cumulative = np.vstack([np.zeros((1, self.m)), np.cumsum(self.increments, axis=0)])
        # Сдвигаем так, чтобы W(0) = 0
        return cumulative - cumulative[-self.k_min]

    def value_at(self, t):
        k = grid_index(t, self.h)
        if not self.k_min <= k <= self.k_max:
            raise ConfigError(f'Момент t = {t} вне области шума.')
        return self._cumulative[k - self.k_min].copy()

    def values(self):
        return self._cumulative.copy()


def sample_wiener(t_min, t_max, h, m, seed, stream_id=0):
    if not h > 0:
        raise ConfigError(f'Шаг h должен быть положительным, получено {h}.')
    if not t_min <= 0 <= t_max or t_min == t_max:
        raise ConfigError(f'Интервал шума [{t_min}, {t_max}] должен содержать 0.')
    k_min = int(math.floor(t_min / h + GRID_TOL))
    k_max = int(math.ceil(t_max / h - GRID_TOL))
    increments = grid_increments(seed, stream_id, k_min, k_max - k_min, m, h)
    increments.setflags(write=False)
    return WienerPath(h, k_min, increments, seed, stream_id)


def shift_wiener(wiener, s):
    """θ_s W: W(s + t) − W(s); приращения те же, сдвигается только индексация."""
    shift = grid_index(s, wiener.h)
    if not wiener.k_min <= shift <= wiener.k_max:
        raise ConfigError(f'Сдвиг s = {s} вне области шума [{wiener.t_min}, {wiener.t_max}].')
    return WienerPath(wiener.h, wiener.k_min - shift, wiener.increments, wiener.seed, wiener.stream_id)


# Управления

@dataclass(frozen=True, eq=False)
class Control:
    """Кусочно-постоянное управление на ячейках ширины h на отрезке [a, b]."""

    a: float
    b: float
    h: float
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        n_cells = grid_index(self.b - self.a, self.h)
        if values.shape[0] != n_cells:
            raise ConfigError(f'Ожидалось {n_cells} ячеек управления, получено {values.shape[0]}.')
        if not np.all(np.isfinite(values)):
            raise ConfigError('Управление содержит нечисловые значения.')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def zeros(cls, a, b, h, m):
        return cls(a, b, h, np.zeros((grid_index(b - a, h), m)))

    @classmethod
    def from_function(cls, fn, a, b, h, m):
        n_cells = grid_index(b - a, h)
        mids = a + h * (np.arange(n_cells) + 0.5)
        values = np.array([np.broadcast_to(np.atleast_1d(fn(float(t))), (m,)) for t in mids], dtype=float)
        return cls(a, b, h, values.reshape(n_cells, m))

    @property
    def m(self):
        return self.values.shape[1]

    @property
    def n_cells(self):
        return self.values.shape[0]

    @cached_property
    def energy(self):
        return 0.5 * float(np.sum(self.values ** 2)) * self.h

    def in_ball(self, M):
        return 2.0 * self.energy < M

    def value_at(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.floor((t - self.a) / self.h + GRID_TOL).astype(int)
        inside = (idx >= 0) & (idx < self.n_cells) & (t < self.b - GRID_TOL * self.h)
        out = np.zeros(t.shape + (self.m,))
        out[inside] = self.values[idx[inside]]
        return out

    def on_grid(self, t0, h, n_steps):
        """Значения на шагах интегратора: шаг k берёт ячейку, содержащую середину [t_k, t_{k+1}]."""
        mids = t0 + h * (np.arange(n_steps) + 0.5)
        return self.value_at(mids)

    def __add__(self, other):
        self._check(other)
        return Control(self.a, self.b, self.h, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return Control(self.a, self.b, self.h, self.values - other.values)

    def _check(self, other):
        if (abs(self.a - other.a) > GRID_TOL or abs(self.b - other.b) > GRID_TOL
                or abs(self.h - other.h) > GRID_TOL or self.m != other.m):
            raise ConfigError('Управления заданы на разных сетках.')

    def l2_distance(self, other):
        return math.sqrt(2.0 * (self - other).energy)

    def padded(self, a_new):
        """Продолжение нулём влево до a_new (прогрев для более длинного горизонта)."""
        extra = grid_index(self.a - a_new, self.h)
        if extra < 0:
            raise ConfigError('Новое начало должно быть не позже текущего.')
        return Control(a_new, self.b, self.h, np.vstack([np.zeros((extra, self.m)), self.values]))

    def shifted(self, s):
        return Control(self.a + s, self.b + s, self.h, self.values)

    def to_rows(self):
        rows = []
        for i, value in enumerate(self.values):
            row = {'t_start': self.a + i * self.h, 't_end': self.a + (i + 1) * self.h}
            row.update({f'v{j}': float(v) for j, v in enumerate(value)})
            rows.append(row)
        return rows


# Интегратор

def _apply(sigma, vector):
    return np.matmul(sigma, vector[..., None])[..., 0]


def _guard(state, step, time, ceiling):
    if not np.all(np.isfinite(state)) or float(np.max(np.abs(state), initial=0.0)) > ceiling:
        raise DivergenceError(
            f'Решение вышло за порог {ceiling:g} на шаге {step} (t = {time:.6g}).',
            step=step, time=time)


def integrate(bound, init_values, init_tail, eps, h, n_steps, t0=0.0, noise=None,
              control=None, scheme='euler', ceiling=None):
    """
    Ядро схемы для пачки реплик.

    init_values: (n_lags + 1, n_rep, d) в порядке лагов, init_tail: (n_rep, d),
    noise: (n_steps, n_rep, m), control: (n_steps, n_ctrl, m) с n_ctrl ∈ {1, n_rep}.
    Возвращает (history, tails) формы (n_lags + 1 + n_steps, n_rep, d) и (n_steps + 1, n_rep, d).
    """
    params = bound.params
    n_lags = params.n_lags
    n_rep, d = init_tail.shape
    ceiling = _blowup_ceiling() if ceiling is None else ceiling
    stochastic = noise is not None and eps > 0
    if scheme == 'heun' and stochastic:
        raise ConfigError('Схема Хойна поддерживается только для детерминированного скелета.')
    sqrt_eps = math.sqrt(eps) if stochastic else 0.0

    history = np.empty((n_lags + 1 + n_steps, n_rep, d))
    history[:n_lags + 1] = init_values[::-1]
    tails = np.empty((n_steps + 1, n_rep, d))
    tails[0] = init_tail
    needs_sigma = stochastic or control is not None

    for k in range(n_steps):
        window = history[k:k + n_lags + 1][::-1]
        head = history[k + n_lags]
        tail = tails[k]
        next_tail = absorb_tail(tail, history[k], params)
        rate = bound.drift(window, tail)
        sigma = bound.diffusion(window, tail) if needs_sigma else None
        if control is not None:
            rate = rate + _apply(sigma, control[k])
        if scheme == 'heun':
            predicted = head + h * rate
            window_next = np.concatenate([predicted[None], window[:-1]])
            rate_next = bound.drift(window_next, next_tail)
            if control is not None:
                rate_next = rate_next + _apply(bound.diffusion(window_next, next_tail), control[k])
            new = head + 0.5 * h * (rate + rate_next)
        else:
            new = head + h * rate
        if stochastic:
            new = new + sqrt_eps * _apply(sigma, noise[k])
        _guard(new, k + 1, t0 + (k + 1) * h, ceiling)
        history[k + n_lags + 1] = new
        tails[k + 1] = next_tail
    return history, tails


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Пачка реплик на общей сетке t0 + k·h."""

    t0: float
    h: float
    params: object
    history: np.ndarray
    tails: np.ndarray

    @property
    def n_steps(self):
        return self.tails.shape[0] - 1

    @property
    def n_replicas(self):
        return self.tails.shape[1]

    @property
    def T(self):
        return self.t0 + self.n_steps * self.h

    @property
    def times(self):
        return self.t0 + self.h * np.arange(self.n_steps + 1)

    @property
    def states(self):
        return self.history[self.params.n_lags:]

    def index_of(self, t):
        k = grid_index(t - self.t0, self.h)
        if not 0 <= k <= self.n_steps:
            raise ConfigError(f'Момент t = {t} вне пачки [{self.t0}, {self.T}].')
        return k

    def state_at(self, t):
        return self.states[self.index_of(t)]

    def segment_norms(self):
        return segment_norms(self.history, self.tails, self.params)

    def window_norms(self, t_start, t_end):
        """Нормы сегментов на [t_start, t_end]: (n_t, n_rep)."""
        k0, k1 = self.index_of(t_start), self.index_of(t_end)
        n_lags = self.params.n_lags
        return segment_norms(self.history[k0:k1 + n_lags + 1], self.tails[k0:k1 + 1], self.params)

    def path_norms(self, n_max, origin=None):
        origin = self.t0 if origin is None else origin
        indices = integer_indices(self.t0, self.h, self.n_steps, origin, n_max)
        value, _ = weighted_path_sum(self.segment_norms()[indices])
        return value

    def replica(self, i):
        n_lags = self.params.n_lags
        initial = Segment(self.t0, self.history[:n_lags + 1, i][::-1], self.tails[0, i],
                          self.params, validate_tail=False)
        return PathOnGrid(self.t0, self.h, initial, self.history[n_lags:, i], self.tails[:, i])

    def __sub__(self, other):
        if self.history.shape != other.history.shape or abs(self.t0 - other.t0) > GRID_TOL:
            raise ConfigError('Пачки заданы на разных сетках.')
        return PathBatch(self.t0, self.h, self.params, self.history - other.history, self.tails - other.tails)


def _initial_arrays(xi, n_rep):
    values = np.broadcast_to(xi.values[:, None, :], (xi.values.shape[0], n_rep, xi.d))
    tail = np.broadcast_to(xi.tail_coeff, (n_rep, xi.d))
    return values, tail


def _check_segment(model, xi, h):
    if xi.d != model.d:
        raise ConfigError(f'Размерность начального сегмента {xi.d} не совпадает с размерностью модели {model.d}.')
    if abs(xi.params.h - h) > GRID_TOL * h:
        raise ConfigError(f'Шаг сегмента {xi.params.h} не совпадает с шагом схемы {h}.')


def simulate_batch(model, xi, eps, cfg, stream_ids=None, control=None, n_replicas=1, check_stability=True):
    """Пачка реплик от сегмента xi в момент cfg.t0 до cfg.T с общими номерами потоков шума."""
    if eps < 0:
        raise ConfigError(f'eps должно быть неотрицательным, получено {eps}.')
    _check_segment(model, xi, cfg.h)
    if check_stability:
        model.require_stable(xi.params.r, eps)
    if stream_ids is None:
        stream_ids = range(n_replicas)
    stream_ids = list(stream_ids)
    n_rep = len(stream_ids)
    n_steps = cfg.n_steps
    noise = None
    if eps > 0:
        noise = batch_increments(cfg.seed, stream_ids, grid_index(cfg.t0, cfg.h), n_steps, model.m, cfg.h)
    control_grid = None
    if control is not None:
        if control.m != model.m:
            raise ConfigError(f'Размерность управления {control.m} не совпадает с m = {model.m}.')
        control_grid = control.on_grid(cfg.t0, cfg.h, n_steps)[:, None, :]
    values, tail = _initial_arrays(xi, n_rep)
    history, tails = integrate(model.bind(xi.params), values, tail, eps, cfg.h, n_steps, t0=cfg.t0,
                               noise=noise, control=control_grid, scheme=cfg.scheme)
    return PathBatch(cfg.t0, cfg.h, xi.params, history, tails)


def _single_path(model, xi, eps, cfg, control=None, wiener=None):
    _check_segment(model, xi, cfg.h)
    model.require_stable(xi.params.r, eps)
    noise = None
    if eps > 0:
        if wiener is None:
            wiener = sample_wiener(min(cfg.t0, 0.0), max(cfg.T, cfg.h), cfg.h, model.m, cfg.seed)
        if abs(wiener.h - cfg.h) > GRID_TOL * cfg.h:
            raise ConfigError('Шаг шума не совпадает с шагом схемы.')
        noise = wiener.increments_between(cfg.t0, cfg.T)[:, None, :]
    control_grid = None
    if control is not None:
        control_grid = control.on_grid(cfg.t0, cfg.h, cfg.n_steps)[:, None, :]
    values, tail = _initial_arrays(xi, 1)
    history, tails = integrate(model.bind(xi.params), values, tail, eps, cfg.h, cfg.n_steps, t0=cfg.t0,
                               noise=noise, control=control_grid, scheme=cfg.scheme)
    return PathBatch(cfg.t0, cfg.h, xi.params, history, tails).replica(0)


def integrate_sfde(model, xi, eps, cfg, wiener=None):
    """Путь Y^ε от сегмента xi в момент cfg.t0 до cfg.T."""
    if eps < 0:
        raise ConfigError(f'eps должно быть неотрицательным, получено {eps}.')
    return _single_path(model, xi, eps, cfg.replace(scheme='euler') if eps > 0 else cfg, wiener=wiener)


def integrate_controlled(model, xi, eps, control, cfg, wiener=None):
    if eps < 0:
        raise ConfigError(f'eps должно быть неотрицательным, получено {eps}.')
    return _single_path(model, xi, eps, cfg.replace(scheme='euler') if eps > 0 else cfg,
                        control=control, wiener=wiener)


def integrate_skeleton(model, xi, control, cfg):
    """Детерминированный скелет: ε = 0, снос дополнен σ·v."""
    return _single_path(model, xi, 0.0, cfg, control=control)


# Реплики

def chunk_ranges(n, chunk_size):
    return [(start, min(start + chunk_size, n)) for start in range(0, n, chunk_size)]


def run_replicas(fn, n_replicas, chunk_size=None, threads=None, reduce='concat'):
    """
    Разбивает реплики на блоки и собирает результаты в фиксированном порядке.

    fn(start, stop) возвращает словарь массивов: при reduce='concat' они
    склеиваются по первой оси, при reduce='sum' складываются.
    """
    chunk_size = chunk_size or int(getattr(settings, 'FADELDP_CHUNK_SIZE', 4096))
    threads = threads or int(getattr(settings, 'FADELDP_THREADS', 1))
    ranges = chunk_ranges(n_replicas, chunk_size)
    if threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda bounds: fn(*bounds), ranges))
    else:
        parts = [fn(start, stop) for start, stop in ranges]
    if not parts:
        return {}
    if reduce == 'sum':
        total = {key: np.array(value, dtype=float, copy=True) for key, value in parts[0].items()}
        for part in parts[1:]:
            for key, value in part.items():
                total[key] = total[key] + value
        return total
    return {key: np.concatenate([part[key] for part in parts]) for key in parts[0]}


# Эмпирические оценки

@dataclass
class BoundsReport:
    times: np.ndarray
    mean_sq_state: np.ndarray
    mean_sq_norm: np.ndarray
    mean_sq_diff: np.ndarray | None
    fitted_rate: float | None
    r_squared: float | None
    intercept: float | None
    lambda_max: float
    n_replicas: int
    degenerate: bool = False

    @property
    def sup_mean_sq_norm(self):
        return float(np.max(self.mean_sq_norm))

    def to_dict(self):
        return {
            'fitted_rate': self.fitted_rate,
            'r_squared': self.r_squared,
            'intercept': self.intercept,
            'lambda_max': self.lambda_max,
            'n_replicas': self.n_replicas,
            'degenerate': self.degenerate,
            'sup_mean_sq_norm': self.sup_mean_sq_norm,
        }

    def to_rows(self):
        rows = []
        for k, t in enumerate(self.times):
            row = {'t': float(t), 'mean_sq_state': float(self.mean_sq_state[k]),
                   'mean_sq_norm': float(self.mean_sq_norm[k])}
            if self.mean_sq_diff is not None:
                row['mean_sq_diff'] = float(self.mean_sq_diff[k])
            rows.append(row)
        return rows


def fit_decay(times, values):
    """−наклон регрессии log(values) по времени, только по положительным значениям."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    positive = values > 1e-300
    if np.count_nonzero(positive) < 2:
        return None, None, None
    fit = stats.linregress(times[positive], np.log(values[positive]))
    return -float(fit.slope), float(fit.rvalue ** 2), float(fit.intercept)


def empirical_bounds(model, xi, eps, cfg, n_replicas, xi2=None, threads=None, chunk_size=None):
    """
    Оценки E|Y(t)|², E‖Y_t‖_r² и, если задан xi2, E‖Y_t(ξ1) − Y_t(ξ2)‖_r²
    на общем шуме; скорость убывания разности сравнивается с λ_max.
    """
    if n_replicas < 1:
        raise ConfigError('Нужна хотя бы одна реплика.')
    model.require_stable(xi.params.r, eps)

    def chunk(start, stop):
        ids = range(start, stop)
        batch = simulate_batch(model, xi, eps, cfg, stream_ids=ids)
        out = {
            'state': np.sum(np.sum(batch.states ** 2, axis=-1), axis=1),
            'norm': np.sum(batch.segment_norms() ** 2, axis=1),
        }
        if xi2 is not None:
            other = simulate_batch(model, xi2, eps, cfg, stream_ids=ids)
            out['diff'] = np.sum((batch - other).segment_norms() ** 2, axis=1)
        return out

    totals = run_replicas(chunk, n_replicas, chunk_size, threads, reduce='sum')
    times = cfg.t0 + cfg.h * np.arange(cfg.n_steps + 1)
    mean_diff = totals['diff'] / n_replicas if xi2 is not None else None
    rate = r_squared = intercept = None
    degenerate = False
    if mean_diff is not None:
        rate, r_squared, intercept = fit_decay(times, mean_diff)
        degenerate = rate is None
    report = BoundsReport(
        times=times,
        mean_sq_state=totals['state'] / n_replicas,
        mean_sq_norm=totals['norm'] / n_replicas,
        mean_sq_diff=mean_diff,
        fitted_rate=rate,
        r_squared=r_squared,
        intercept=intercept,
        lambda_max=model.lambda_max(xi.params.r, eps),
        n_replicas=n_replicas,
        degenerate=degenerate,
    )
    logger.info('Эмпирическая скорость сжатия %s при λ_max = %.4g', rate, report.lambda_max)
    return report


@dataclass
class ControlledMomentReport:
    eps_values: list
    sup_mean_norm: list
    sup_moment_32: list
    bound_factor: float
    uniform: bool = field(init=False)

    def __post_init__(self):
        values = [v for v in self.sup_mean_norm if v > 0]
        self.uniform = not values or max(values) <= self.bound_factor * min(values)

    def to_dict(self):
        return dict(self.__dict__)


def controlled_moment_bounds(model, xi, eps_values, control, cfg, n_replicas, bound_factor=3.0,
                             threads=None, chunk_size=None):
    """sup_t E‖Y^{ε,v}_t‖_r и sup_t (E‖Y^{ε,v}_t‖_r^{3/2})^{2/3} для набора ε."""
    r = xi.params.r
    eps0 = model.eps0(r)
    sup_mean, sup_32 = [], []
    for eps in eps_values:
        if eps > 0 and eps >= eps0:
            raise ModelRefusalError(f'eps = {eps} не меньше порога ε0 = {eps0:.6g}.', margin=model.margin(r, eps))
        model.require_stable(r, eps)
        n = n_replicas if eps > 0 else 1

        def chunk(start, stop, eps=eps):
            norms = simulate_batch(model, xi, eps, cfg, stream_ids=range(start, stop), control=control).segment_norms()
            return {'first': np.sum(norms, axis=1), 'three_halves': np.sum(norms ** 1.5, axis=1)}

        totals = run_replicas(chunk, n, chunk_size, threads, reduce='sum')
        sup_mean.append(float(np.max(totals['first'] / n)))
        sup_32.append(float(np.max((totals['three_halves'] / n) ** (2.0 / 3.0))))
    return ControlledMomentReport(list(eps_values), sup_mean, sup_32, bound_factor)


@dataclass
class ConvergenceReport:
    eps_values: list
    mean_distance: list
    slope: float | None
    intercept: float | None

    def to_dict(self):
        return dict(self.__dict__)


def skeleton_convergence(model, xi, eps_values, control, cfg, n_replicas, n_max=None,
                         threads=None, chunk_size=None):
    """Среднее |||Y^{ε,v} − Y^{0,v}|||_r и наклон его log–log зависимости от ε (ожидается 1/2)."""
    n_max = n_max or int(math.floor(cfg.T - cfg.t0 + GRID_TOL))
    skeleton = simulate_batch(model, xi, 0.0, cfg.replace(scheme='euler'), control=control)
    distances = []
    for eps in eps_values:
        if not eps > 0:
            raise ConfigError('Для сходимости к скелету нужны положительные eps.')

        def chunk(start, stop, eps=eps):
            batch = simulate_batch(model, xi, eps, cfg.replace(scheme='euler'),
                                   stream_ids=range(start, stop), control=control)
            n_rep = batch.n_replicas
            diff = PathBatch(batch.t0, batch.h, batch.params,
                             batch.history - np.repeat(skeleton.history, n_rep, axis=1),
                             batch.tails - np.repeat(skeleton.tails, n_rep, axis=1))
            return {'distance': np.sum(np.sqrt(diff.path_norms(n_max)))}

        totals = run_replicas(chunk, n_replicas, chunk_size, threads, reduce='sum')
        distances.append(float(totals['distance']) / n_replicas)
    slope = intercept = None
    if len(eps_values) >= 2 and all(dist > 0 for dist in distances):
        fit = stats.linregress(np.log(eps_values), np.log(distances))
        slope, intercept = float(fit.slope), float(fit.intercept)
    return ConvergenceReport(list(eps_values), distances, slope, intercept)
