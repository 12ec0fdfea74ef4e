"""
Пространство памяти C_r: сегменты истории на сетке, меры запаздывания
и квадратуры интегралов по ним.

Сегмент хранит значения φ(−j·h), j = 0..n_lags, на окне [−L, 0] и
коэффициент хвоста g: за окном φ(τ) ≈ g·e^{−rτ}. Такой хвост имеет
нулевой вклад в «затухание» нормы, поэтому ‖φ‖_r = max(сетка, |g|).
"""

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
import logging
import math

import numpy as np

from .exceptions import ConfigError, DivergentMomentError, InvalidMeasureError, InvalidSegmentError

logger = logging.getLogger(__name__)

GRID_TOL = 1e-9
MASS_TOL = 1e-12


@dataclass(frozen=True)
class MemoryParams:
    r: float
    h: float
    L: float
    tail_tol: float = 1e-6

    def __post_init__(self):
        if not self.r > 0:
            raise ConfigError(f'Параметр r должен быть положительным, получено {self.r}.')
        if not self.h > 0:
            raise ConfigError(f'Шаг h должен быть положительным, получено {self.h}.')
        if not self.L >= self.h:
            raise ConfigError(f'Окно L = {self.L} должно быть не меньше шага h = {self.h}.')
        ratio = self.L / self.h
        if abs(ratio - round(ratio)) > GRID_TOL * max(1.0, ratio):
            raise ConfigError(f'Окно L = {self.L} не кратно шагу h = {self.h}.')

    @cached_property
    def n_lags(self):
        return int(round(self.L / self.h))

    @cached_property
    def lags(self):
        # lags[j] = −j·h
        return -self.h * np.arange(self.n_lags + 1)

    @cached_property
    def weights(self):
        return np.exp(self.r * self.lags)

    @cached_property
    def tail_gain(self):
        return self.h / self.L

    @cached_property
    def tail_drop_scale(self):
        # Выпавшее значение оказывается на глубине L + h нового сегмента
        return math.exp(-self.r * (self.L + self.h))

    def to_dict(self):
        return {'r': self.r, 'h': self.h, 'L': self.L, 'tail_tol': self.tail_tol}


def absorb_tail(tail, dropped, params):
    """Обновление хвоста при сдвиге на h: g' = (1 − h/L)·g + (h/L)·e^{−r(L+h)}·φ(−L)."""
    gain = params.tail_gain
    return (1.0 - gain) * tail + gain * (params.tail_drop_scale * dropped)


@dataclass(frozen=True, eq=False)
class Segment:
    head_time: float
    values: np.ndarray
    tail_coeff: np.ndarray
    params: MemoryParams
    validate_tail: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        tail = np.atleast_1d(np.array(self.tail_coeff, dtype=float))
        if values.ndim != 2 or values.shape[0] != self.params.n_lags + 1:
            raise InvalidSegmentError(
                f'Ожидалось {self.params.n_lags + 1} значений на окне, получено {values.shape}.')
        if tail.shape != (values.shape[1],):
            raise InvalidSegmentError(
                f'Размерность хвоста {tail.shape} не совпадает с размерностью состояния {values.shape[1]}.')
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(tail))):
            raise InvalidSegmentError('Сегмент содержит нечисловые значения.')
        if self.validate_tail:
            grid_part = float(np.max(self.params.weights * np.linalg.norm(values, axis=1)))
            excess = float(np.linalg.norm(tail)) - grid_part
            if excess > self.params.tail_tol * max(1.0, grid_part):
                raise InvalidSegmentError(
                    f'Хвост |g| превышает взвешенную часть сетки на {excess:.3g}: '
                    'сегмент не принадлежит C_r с заданным допуском.')
        values.setflags(write=False)
        tail.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'tail_coeff', tail)

    @classmethod
    def constant(cls, value, params, head_time=0.0):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        values = np.broadcast_to(value, (params.n_lags + 1, value.shape[0]))
        return cls(head_time, values, np.zeros_like(value), params)

    @classmethod
    def zeros(cls, d, params, head_time=0.0):
        return cls.constant(np.zeros(d), params, head_time)

    @classmethod
    def from_function(cls, fn, params, head_time=0.0, tail_coeff=None):
        values = np.array([np.atleast_1d(fn(float(tau))) for tau in params.lags], dtype=float)
        tail = np.zeros(values.shape[1]) if tail_coeff is None else tail_coeff
        return cls(head_time, values, tail, params)

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def head(self):
        return self.values[0]

    def _internal(self, values, tail, head_time=None):
        return Segment(self.head_time if head_time is None else head_time,
                       values, tail, self.params, validate_tail=False)

    def _check_compatible(self, other):
        if self.params != other.params:
            raise ConfigError('Сегменты заданы на разных сетках памяти.')
        if self.d != other.d:
            raise ConfigError(f'Размерности сегментов не совпадают: {self.d} и {other.d}.')

    def __add__(self, other):
        self._check_compatible(other)
        return self._internal(self.values + other.values, self.tail_coeff + other.tail_coeff)

    def __sub__(self, other):
        self._check_compatible(other)
        return self._internal(self.values - other.values, self.tail_coeff - other.tail_coeff)

    def __mul__(self, scalar):
        return self._internal(scalar * self.values, scalar * self.tail_coeff)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def value_at(self, tau):
        """Значение φ(τ): линейная интерполяция на окне, экспоненциальный хвост за ним."""
        tau = float(tau)
        if tau > GRID_TOL * self.params.h:
            raise InvalidSegmentError(f'Сегмент определён только при τ ≤ 0, получено {tau}.')
        if tau < -self.params.L - GRID_TOL * self.params.h:
            return self.tail_coeff * math.exp(-self.params.r * tau)
        pos = min(max(-tau / self.params.h, 0.0), float(self.params.n_lags))
        j = int(math.floor(pos))
        frac = pos - j
        if j >= self.params.n_lags or frac < GRID_TOL:
            return self.values[min(j, self.params.n_lags)].copy()
        return (1.0 - frac) * self.values[j] + frac * self.values[j + 1]

    def to_rows(self):
        rows = []
        for j, tau in enumerate(self.params.lags):
            row = {'head_time': self.head_time, 'lag': float(tau)}
            row.update({f'y{i}': float(v) for i, v in enumerate(self.values[j])})
            rows.append(row)
        row = {'head_time': self.head_time, 'lag': 'tail'}
        row.update({f'y{i}': float(v) for i, v in enumerate(self.tail_coeff)})
        rows.append(row)
        return rows


def cr_norm(segment):
    grid_part = np.max(segment.params.weights * np.linalg.norm(segment.values, axis=1))
    return float(max(grid_part, np.linalg.norm(segment.tail_coeff)))


def shift_segment(segment, new_head_value):
    """Сдвиг на h: новое значение в голову, последний узел уходит в хвост."""
    new_head_value = np.atleast_1d(np.asarray(new_head_value, dtype=float))
    if new_head_value.shape != (segment.d,):
        raise ConfigError(f'Новое значение должно иметь размерность {segment.d}.')
    values = np.vstack([new_head_value[None, :], segment.values[:-1]])
    tail = absorb_tail(segment.tail_coeff, segment.values[-1], segment.params)
    return segment._internal(values, tail, head_time=segment.head_time + segment.params.h)


def segment_norms(history, tails, params):
    """
    Нормы ‖·‖_r сразу для серии сегментов.

    history: (n_lags + n_seg, ..., d) в хронологическом порядке, tails: (n_seg, ..., d).
    Сегмент k имеет голову history[k + n_lags].
    """
    n_lags = params.n_lags
    n_seg = tails.shape[0]
    if history.shape[0] != n_lags + n_seg:
        raise ConfigError('Длина истории не согласована с числом сегментов.')
    absvals = np.linalg.norm(history, axis=-1)
    out = np.linalg.norm(tails, axis=-1)
    for j, weight in enumerate(params.weights):
        np.maximum(out, weight * absvals[n_lags - j:n_lags - j + n_seg], out=out)
    return out


@dataclass(frozen=True)
class DelayMeasure:
    """Вероятностная мера на (−∞, 0]: атомы плюс плотность c·β·e^{βτ}."""

    atoms: tuple = ()
    expo: tuple | None = None

    def __post_init__(self):
        atoms = tuple((float(lag), float(weight)) for lag, weight in self.atoms)
        object.__setattr__(self, 'atoms', atoms)
        for lag, weight in atoms:
            if lag > 0:
                raise InvalidMeasureError(f'Атом в точке {lag} > 0: мера должна жить на (−∞, 0].')
            if weight < 0:
                raise InvalidMeasureError(f'Отрицательный вес атома {weight}.')
        mass = math.fsum(weight for _, weight in atoms)
        if self.expo is not None:
            c, beta = (float(x) for x in self.expo)
            object.__setattr__(self, 'expo', (c, beta))
            if c < 0:
                raise InvalidMeasureError(f'Отрицательная масса плотности {c}.')
            if c > 0 and not beta > 0:
                raise InvalidMeasureError(f'Показатель плотности β должен быть положительным, получено {beta}.')
            mass = math.fsum([mass, c])
        if abs(mass - 1.0) > MASS_TOL:
            raise InvalidMeasureError(f'Полная масса меры равна {mass!r}, ожидалась 1.')

    @classmethod
    def atom(cls, lag=0.0):
        return cls(atoms=((lag, 1.0),))

    @classmethod
    def exponential(cls, beta, atoms=()):
        mass = 1.0 - math.fsum(weight for _, weight in atoms)
        return cls(atoms=tuple(atoms), expo=(mass, beta))

    @property
    def density_mass(self):
        return self.expo[0] if self.expo else 0.0

    @property
    def beta(self):
        return self.expo[1] if self.expo and self.expo[0] > 0 else None

    @property
    def deepest_atom(self):
        lags = [-lag for lag, weight in self.atoms if weight > 0]
        return max(lags, default=0.0)

    def to_dict(self):
        data = {'atoms': [{'lag': lag, 'weight': weight} for lag, weight in self.atoms]}
        if self.expo is not None:
            data['expo'] = {'mass': self.expo[0], 'beta': self.expo[1]}
        return data


def measure_moment(mu, kappa):
    """μ^{(κ)} = ∫ e^{−κτ} μ(dτ)."""
    if kappa < 0:
        raise ConfigError(f'Порядок момента должен быть неотрицательным, получено {kappa}.')
    terms = [weight * math.exp(-kappa * lag) for lag, weight in mu.atoms]
    beta = mu.beta
    if beta is not None:
        if beta <= kappa:
            raise DivergentMomentError(
                f'Момент порядка {kappa} расходится: β = {beta} ≤ κ.')
        c = mu.density_mass
        terms.append(c if kappa == 0 else c * beta / (beta - kappa))
    return math.fsum(terms)


def tail_moment(mu, kappa, L):
    """∫_{τ<−L} e^{−κτ} μ(dτ): вклад меры за пределами окна."""
    terms = [weight * math.exp(-kappa * lag) for lag, weight in mu.atoms
             if lag < -L - GRID_TOL * max(1.0, L)]
    beta = mu.beta
    if beta is not None:
        if beta <= kappa:
            raise DivergentMomentError(f'Хвостовой момент порядка {kappa} расходится: β = {beta}.')
        c = mu.density_mass
        terms.append(c * beta * math.exp(-(beta - kappa) * L) / (beta - kappa))
    return math.fsum(terms)


@dataclass(frozen=True, eq=False)
class DelayQuadrature:
    """Веса квадратуры ∫ φ dμ ≈ Σ w_j φ(−jh) + (вклад хвоста)·g."""

    grid_weights: np.ndarray
    tail_linear: float
    tail_square: float

    @cached_property
    def support(self):
        return np.flatnonzero(self.grid_weights)

    def apply(self, window, tail, power=1):
        """
        window: (n_lags + 1, ..., d) в порядке лагов, tail: (..., d).
        power=1 даёт вектор (..., d), power=2 даёт скаляр (...).
        """
        idx = self.support
        w = self.grid_weights[idx]
        if power == 1:
            out = np.tensordot(w, window[idx], axes=(0, 0))
            if self.tail_linear:
                out = out + self.tail_linear * tail
            return out
        if power == 2:
            out = np.tensordot(w, np.sum(window[idx] ** 2, axis=-1), axes=(0, 0))
            if self.tail_square:
                out = out + self.tail_square * np.sum(tail ** 2, axis=-1)
            return out
        raise ConfigError(f'Поддерживаются степени 1 и 2, получено {power}.')


@lru_cache(maxsize=128)
def delay_quadrature(mu, params):
    n_lags = params.n_lags
    weights = np.zeros(n_lags + 1)
    tail_linear = 0.0
    tail_square = 0.0

    for lag, weight in mu.atoms:
        if weight == 0:
            continue
        pos = -lag / params.h
        if pos > n_lags + GRID_TOL * max(1.0, pos):
            # Атом за окном: значение берём из экспоненциального хвоста
            tail_linear += weight * math.exp(-params.r * lag)
            tail_square += weight * math.exp(-2.0 * params.r * lag)
            continue
        j = min(int(math.floor(pos + GRID_TOL)), n_lags)
        frac = pos - j
        if frac <= GRID_TOL or j == n_lags:
            weights[j] += weight
        else:
            weights[j] += weight * (1.0 - frac)
            weights[j + 1] += weight * frac

    beta = mu.beta
    if beta is not None:
        if beta <= 2.0 * params.r:
            raise DivergentMomentError(
                f'Хвост плотности не интегрируем в C_r: β = {beta} ≤ 2r = {2.0 * params.r}.')
        c = mu.density_mass
        density = c * beta * np.exp(beta * params.lags)
        trap = params.h * density
        trap[0] *= 0.5
        trap[-1] *= 0.5
        # Масса окна должна совпадать с точной c·(1 − e^{−βL})
        trap *= c * (1.0 - math.exp(-beta * params.L)) / trap.sum()
        weights += trap
        tail_linear += c * beta * math.exp(-(beta - params.r) * params.L) / (beta - params.r)
        tail_square += c * beta * math.exp(-(beta - 2.0 * params.r) * params.L) / (beta - 2.0 * params.r)

    weights.setflags(write=False)
    return DelayQuadrature(weights, tail_linear, tail_square)


def delay_integral(segment, mu, power=1):
    """∫ φ(τ) μ(dτ) при power=1 или ∫ |φ(τ)|² μ(dτ) при power=2."""
    quad = delay_quadrature(mu, segment.params)
    out = quad.apply(segment.values, segment.tail_coeff, power)
    return float(out) if power == 2 else np.asarray(out)


def choose_window(r, bound_on_norm, measures, tail_tol, h):
    """
    Наименьшее L, кратное h, при котором хвост ∫_{τ<−L} |φ|² dμ для
    ‖φ‖_r ≤ bound_on_norm не превосходит tail_tol для каждой меры.
    """
    if not h > 0:
        raise ConfigError(f'Шаг h должен быть положительным, получено {h}.')
    deepest = max((mu.deepest_atom for mu in measures), default=0.0)
    k = max(1, int(math.ceil(deepest / h - GRID_TOL)))
    if math.isinf(tail_tol):
        return k * h

    for mu in measures:
        beta = mu.beta
        if beta is None:
            continue
        if beta <= 2.0 * r:
            raise DivergentMomentError(f'Хвост плотности расходится: β = {beta} ≤ 2r = {2.0 * r}.')
        scale = bound_on_norm ** 2 * mu.density_mass * beta / (beta - 2.0 * r)
        if scale > tail_tol:
            needed = math.log(scale / tail_tol) / (beta - 2.0 * r)
            k = max(k, int(math.ceil(needed / h - GRID_TOL)))

    # Закрываем ошибки округления прямой проверкой
    for _ in range(64):
        L = k * h
        if all(bound_on_norm ** 2 * _density_tail(mu, 2.0 * r, L) <= tail_tol for mu in measures):
            break
        k += 1
    logger.debug('Выбрано окно памяти L = %s (%d узлов)', k * h, k)
    return k * h


def _density_tail(mu, kappa, L):
    beta = mu.beta
    if beta is None:
        return 0.0
    return mu.density_mass * beta * math.exp(-(beta - kappa) * L) / (beta - kappa)


@dataclass(frozen=True, eq=False)
class PathOnGrid:
    """
    Траектория на сетке t0 + k·h: начальный сегмент в t0 и состояния Y(t0 + k·h).

    states[0] совпадает с головой initial. Хвосты сегментов пересчитываются
    той же рекуррентой, что и в интеграторе, если не переданы явно.
    """

    t0: float
    h: float
    initial: Segment
    states: np.ndarray
    tails: np.ndarray | None = None

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if abs(self.h - self.initial.params.h) > GRID_TOL * self.h:
            raise ConfigError('Шаг пути не совпадает с шагом сетки памяти.')
        if states.shape[1] != self.initial.d:
            raise ConfigError('Размерность состояний не совпадает с начальным сегментом.')
        if not np.allclose(states[0], self.initial.values[0], rtol=0.0, atol=1e-12):
            raise ConfigError('Первое состояние пути должно совпадать с головой начального сегмента.')
        history = np.vstack([self.initial.values[::-1], states[1:]])
        tails = self.tails
        if tails is None:
            tails = np.empty((states.shape[0], states.shape[1]))
            tails[0] = self.initial.tail_coeff
            for k in range(1, states.shape[0]):
                tails[k] = absorb_tail(tails[k - 1], history[k - 1], self.params)
        else:
            tails = np.array(tails, dtype=float)
            if tails.shape != states.shape:
                raise ConfigError('Форма массива хвостов не совпадает с формой состояний.')
        for array in (states, history, tails):
            array.setflags(write=False)
        object.__setattr__(self, 'states', states)
        object.__setattr__(self, 'tails', tails)
        object.__setattr__(self, '_history', history)

    @property
    def params(self):
        return self.initial.params

    @property
    def n_steps(self):
        return self.states.shape[0] - 1

    @property
    def T(self):
        return self.t0 + self.n_steps * self.h

    @property
    def d(self):
        return self.states.shape[1]

    @property
    def history(self):
        """Все значения пути, включая начальное окно, в хронологическом порядке."""
        return self._history

    @property
    def times(self):
        return self.t0 + self.h * np.arange(self.n_steps + 1)

    def index_of(self, t):
        pos = (t - self.t0) / self.h
        k = int(round(pos))
        if abs(pos - k) > 1e-6 or not 0 <= k <= self.n_steps:
            raise ConfigError(f'Момент t = {t} не лежит на сетке пути [{self.t0}, {self.T}].')
        return k

    def segment_at(self, t):
        k = self.index_of(t)
        n_lags = self.params.n_lags
        values = self._history[k:k + n_lags + 1][::-1]
        return Segment(self.t0 + k * self.h, values, self.tails[k], self.params, validate_tail=False)

    def value_at(self, t):
        return self.states[self.index_of(t)].copy()

    def segment_norms(self):
        return segment_norms(self._history, self.tails, self.params)

    def restrict(self, t_start, t_end=None):
        k0 = self.index_of(t_start)
        k1 = self.n_steps if t_end is None else self.index_of(t_end)
        if k1 < k0:
            raise ConfigError('Конец интервала раньше начала.')
        return PathOnGrid(self.t0 + k0 * self.h, self.h, self.segment_at(t_start),
                          self.states[k0:k1 + 1], self.tails[k0:k1 + 1])

    def __sub__(self, other):
        if (self.params != other.params or self.states.shape != other.states.shape
                or abs(self.t0 - other.t0) > GRID_TOL):
            raise ConfigError('Пути заданы на разных сетках.')
        return PathOnGrid(self.t0, self.h, self.initial - other.initial,
                          self.states - other.states, self.tails - other.tails)

    def to_rows(self):
        rows = []
        for t, state in zip(self.times, self.states):
            row = {'t': float(t)}
            row.update({f'y{i}': float(v) for i, v in enumerate(state)})
            rows.append(row)
        return rows


def weighted_path_sum(norms_at_integers):
    """Σ_{n≥1} 2^{−n}·min(‖Φ(n)‖_r², 1) по уже вычисленным нормам."""
    norms = np.asarray(norms_at_integers, dtype=float)
    n_max = norms.shape[0]
    factors = 0.5 ** np.arange(1, n_max + 1)
    clipped = np.minimum(norms ** 2, 1.0)
    return np.tensordot(factors, clipped, axes=(0, 0)), 0.5 ** n_max


def integer_indices(t0, h, n_steps, origin, n_max):
    indices = []
    for n in range(1, n_max + 1):
        pos = (origin + n - t0) / h
        k = int(round(pos))
        if abs(pos - k) > 1e-6 or not 0 <= k <= n_steps:
            raise ConfigError(
                f'Путь не покрывает момент {origin + n}: нужен интервал [{origin}, {origin + n_max}].')
        indices.append(k)
    return np.array(indices)


def path_norm(path, n_max, origin=None):
    """
    Усечённая норма |||Φ|||² = Σ_{n=1}^{n_max} 2^{−n}(‖Φ(origin + n)‖_r² ∧ 1).

    Возвращает пару (значение, оценка остатка 2^{−n_max}).
    """
    if n_max < 1:
        raise ConfigError('n_max должно быть не меньше 1.')
    origin = path.t0 if origin is None else origin
    indices = integer_indices(path.t0, path.h, path.n_steps, origin, n_max)
    value, remainder = weighted_path_sum(path.segment_norms()[indices])
    return float(value), remainder
