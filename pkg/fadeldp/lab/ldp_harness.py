"""
Проверка принципа больших уклонений: оценки ε·log P(Y^ε ∈ событие)
простым и взвешенным Монте-Карло и экстраполяция к ε → 0.
"""

from dataclasses import dataclass, field
from itertools import product
import logging
import math

import numpy as np
from scipy import optimize, special
from numpy.polynomial.hermite_e import hermegauss

from .exceptions import ConfigError, UnsupportedError, WeightOverflowError
from .fading_memory import GRID_TOL, PathOnGrid
from .simulate import (
    PathBatch, batch_increments, grid_index, integrate, run_replicas,
)
from .statistics import clopper_pearson, weighted_linear_fit

logger = logging.getLogger(__name__)

EVENT_KINDS = ('terminal_ball', 'terminal_exceed', 'path_tube')
LOG_WEIGHT_LIMIT = 700.0
MIN_ESS = 30.0


@dataclass(frozen=True, eq=False)
class EventSpec:
    """
    terminal_ball: |Y(T) − center| ≤ radius;
    terminal_exceed: Y(T)·e₁ ≥ threshold, порог вдоль первой координаты;
    path_tube: sup_{t ∈ [reference.t0, T]} ‖Y_t − Φ_t‖_r ≤ radius.
    """

    kind: str
    T: float
    center: np.ndarray | None = None
    radius: float = math.inf
    threshold: float | None = None
    reference: PathOnGrid | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ConfigError(f'Неизвестный тип события «{self.kind}». Доступны: {", ".join(EVENT_KINDS)}.')
        if self.kind == 'terminal_ball' and self.center is None:
            raise ConfigError('Для terminal_ball нужен центр.')
        if self.kind == 'terminal_exceed' and self.threshold is None:
            raise ConfigError('Для terminal_exceed нужен порог.')
        if self.kind == 'path_tube' and self.reference is None:
            raise ConfigError('Для path_tube нужен опорный путь.')
        if self.radius < 0:
            raise ConfigError('Радиус события не может быть отрицательным.')

    def indicator(self, batch):
        """(n_rep,) булев массив попаданий."""
        if self.kind == 'path_tube':
            ref = self.reference
            k0 = batch.index_of(ref.t0)
            k1 = batch.index_of(self.T)
            if ref.index_of(self.T) != k1 - k0:
                raise ConfigError('Опорный путь события не согласован с сеткой.')
            n_lags = batch.params.n_lags
            history = batch.history[k0:k1 + n_lags + 1] - ref.history[:k1 - k0 + n_lags + 1, None, :]
            tails = batch.tails[k0:k1 + 1] - ref.tails[:k1 - k0 + 1, None, :]
            distance = PathBatch(ref.t0, batch.h, batch.params, history, tails).segment_norms()
            return np.max(distance, axis=0) <= self.radius
        terminal = batch.state_at(self.T)
        if self.kind == 'terminal_exceed':
            return terminal[:, 0] >= self.threshold
        if math.isinf(self.radius):
            return np.ones(terminal.shape[0], dtype=bool)
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        return np.linalg.norm(terminal - center[None, :], axis=-1) <= self.radius


@dataclass(frozen=True, eq=False)
class Start:
    """Старт моделирования: из сегмента xi в момент t0 или после разгона из −burn_in."""

    xi: object
    t0: float = 0.0
    burn_in: float | None = None

    @property
    def t_begin(self):
        return -float(self.burn_in) if self.burn_in is not None else float(self.t0)


@dataclass
class MCEstimate:
    eps: float
    n: int
    p_hat: float
    stderr: float
    eps_log_p: float | None
    method: str
    hits: int
    ess: float | None = None
    p_upper: float | None = None
    upper_bound_only: bool = False

    @property
    def reliable(self):
        if self.p_hat <= 0 or self.upper_bound_only:
            return False
        return self.ess is None or self.ess >= MIN_ESS

    @property
    def eps_log_p_se(self):
        if self.p_hat <= 0:
            return None
        return self.eps * self.stderr / self.p_hat

    def to_dict(self):
        data = dict(self.__dict__)
        data['reliable'] = self.reliable
        data['eps_log_p_se'] = self.eps_log_p_se
        return data


def _simulate_chunk(model, start, eps, event, cfg, stream_ids, control_grid=None):
    h = cfg.h
    xi = start.xi
    t_begin = start.t_begin
    n_steps = grid_index(event.T - t_begin, h)
    if n_steps < 0:
        raise ConfigError(f'Момент события T = {event.T} раньше старта {t_begin}.')
    n_rep = len(stream_ids)
    noise = batch_increments(cfg.seed, stream_ids, grid_index(t_begin, h), n_steps, model.m, h)
    values = np.broadcast_to(xi.values[:, None, :], (xi.params.n_lags + 1, n_rep, xi.d))
    tail = np.broadcast_to(xi.tail_coeff, (n_rep, xi.d))
    history, tails = integrate(model.bind(xi.params), values, tail, eps, h, n_steps, t0=t_begin,
                               noise=noise, control=control_grid)
    return PathBatch(t_begin, h, xi.params, history, tails), noise


def _prepare(model, start, eps, event, cfg):
    if not eps > 0:
        raise ConfigError(f'Оценка вероятности требует eps > 0, получено {eps}.')
    if abs(start.xi.params.h - cfg.h) > GRID_TOL * cfg.h:
        raise ConfigError('Шаг начального сегмента не совпадает с шагом схемы.')
    model.require_stable(start.xi.params.r, eps)
    return cfg.replace(scheme='euler')


def rare_event_mc(model, start, eps, event, n, cfg, threads=None, chunk_size=None):
    """Простое Монте-Карло; при нуле попаданий отдаёт верхнюю границу Клоппера–Пирсона."""
    cfg = _prepare(model, start, eps, event, cfg)

    def chunk(lo, hi):
        batch, _ = _simulate_chunk(model, start, eps, event, cfg, list(range(lo, hi)))
        return {'hits': event.indicator(batch).astype(float)}

    hits = run_replicas(chunk, n, chunk_size, threads)['hits']
    p_hat = float(np.mean(hits))
    stderr = float(np.std(hits, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    n_hits = int(np.sum(hits))
    _, upper = clopper_pearson(n_hits, n)
    if n_hits == 0:
        return MCEstimate(eps, n, 0.0, stderr, eps * math.log(upper), 'plain', 0, None, upper, True)
    return MCEstimate(eps, n, p_hat, stderr, eps * math.log(p_hat), 'plain', n_hits, None, upper)


def tilted_mc(model, start, eps, event, control, n, cfg, threads=None, chunk_size=None):
    """
    Выборка по значимости со сдвигом dW̃ = dW − v*/√ε dt: моделируется
    dY = (b + σv*)dt + √ε σ dW̃, вес dP/dQ = exp(−Σu·ΔW̃ − ½Σ|u|²h), u = v*/√ε.
    """
    cfg = _prepare(model, start, eps, event, cfg)
    t_begin = start.t_begin
    n_steps = grid_index(event.T - t_begin, cfg.h)
    v_grid = control.on_grid(t_begin, cfg.h, n_steps)
    control_grid = v_grid[:, None, :]
    sqrt_eps = math.sqrt(eps)
    quadratic = 0.5 * float(np.sum(v_grid ** 2)) * cfg.h / eps

    def chunk(lo, hi):
        batch, noise = _simulate_chunk(model, start, eps, event, cfg, list(range(lo, hi)), control_grid)
        log_w = -np.einsum('kni,ki->n', noise, v_grid) / sqrt_eps - quadratic
        if np.any(log_w > LOG_WEIGHT_LIMIT):
            raise WeightOverflowError(
                f'Логарифм веса {float(np.max(log_w)):.1f} превышает {LOG_WEIGHT_LIMIT:g}.')
        weights = np.exp(log_w)
        return {'weights': weights, 'values': weights * event.indicator(batch)}

    parts = run_replicas(chunk, n, chunk_size, threads)
    weights, values = parts['weights'], parts['values']
    p_hat = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    ess = float(np.sum(weights) ** 2 / np.sum(weights ** 2))
    n_hits = int(np.count_nonzero(values))
    if n_hits == 0:
        logger.warning('Взвешенное МК при eps=%s не дало ни одного попадания', eps)
        return MCEstimate(eps, n, 0.0, stderr, None, 'tilted', 0, ess, None, True)
    return MCEstimate(eps, n, p_hat, stderr, eps * math.log(p_hat), 'tilted', n_hits, ess)


@dataclass
class SlopeReport:
    estimates: list
    intercept: float | None
    slope: float | None
    intercept_se: float | None
    target: float
    tol: float
    bands: list = field(default_factory=list)

    @property
    def rel_error(self):
        if self.intercept is None:
            return None
        if self.target == 0:
            return abs(self.intercept)
        return abs(self.intercept - self.target) / abs(self.target)

    @property
    def passed(self):
        return self.rel_error is not None and self.rel_error <= self.tol

    def to_dict(self):
        return {
            'estimates': [estimate.to_dict() for estimate in self.estimates],
            'intercept': self.intercept,
            'slope': self.slope,
            'intercept_se': self.intercept_se,
            'target': self.target,
            'rel_error': self.rel_error,
            'tol': self.tol,
            'passed': self.passed,
            'bands': self.bands,
        }


def ldp_slope(model, start, event, eps_list, n_per_eps, rate_pred, cfg, tol=0.15, threads=None, chunk_size=None):
    """
    ε·log p̂(ε) для убывающих ε и взвешенная прямая c0 + c1·ε;
    c0 сравнивается с −I★ из rate_pred.
    """
    eps_list = [float(eps) for eps in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError(f'Список eps должен строго убывать, получено {eps_list}.')
    if not rate_pred.feasible:
        raise ConfigError('Предсказание функции действия недопустимо: наклон не с чем сравнивать.')
    estimates = []
    for i, eps in enumerate(eps_list):
        run_cfg = cfg.replace(seed=cfg.seed + i)
        estimate = tilted_mc(model, start, eps, event, rate_pred.control, n_per_eps, run_cfg, threads, chunk_size)
        estimates.append(estimate)
        logger.info('eps=%s: ε·log p̂ = %s, ESS = %s', eps, estimate.eps_log_p, estimate.ess)

    usable = [est for est in estimates if est.reliable]
    bands = [{'eps': est.eps, 'low': est.eps_log_p - 1.96 * est.eps_log_p_se,
              'high': est.eps_log_p + 1.96 * est.eps_log_p_se} for est in usable]
    intercept = slope = intercept_se = None
    if usable:
        intercept, slope, intercept_se = weighted_linear_fit(
            [est.eps for est in usable], [est.eps_log_p for est in usable],
            [est.eps_log_p_se for est in usable])
    return SlopeReport(estimates, intercept, slope, intercept_se, -rate_pred.value, tol, bands)


# Вариационная формула на конечномерном шуме

FUNCTIONAL_KINDS = ('zero', 'clipped_linear', 'clipped_quadratic')
MAX_VARIATIONAL_DIM = 6


@dataclass(frozen=True)
class FunctionalSpec:
    kind: str = 'clipped_linear'
    coeffs: tuple = (1.0,)
    lower: float = -50.0
    upper: float = 50.0

    def __post_init__(self):
        if self.kind not in FUNCTIONAL_KINDS:
            raise ConfigError(f'Неизвестный функционал «{self.kind}».')
        if self.lower > self.upper:
            raise ConfigError('Нижняя граница обрезки больше верхней.')

    def __call__(self, x):
        """x: (..., k) точки шума W(t_1), …, W(t_k) -> (...)."""
        if self.kind == 'zero':
            return np.zeros(x.shape[:-1])
        coeffs = np.broadcast_to(np.asarray(self.coeffs, dtype=float), (x.shape[-1],))
        linear = x @ coeffs
        raw = linear if self.kind == 'clipped_linear' else linear ** 2
        return np.clip(raw, self.lower, self.upper)

    @property
    def exact_equality(self):
        return self.kind in ('zero', 'clipped_linear')


@dataclass
class VariationalReport:
    kind: str
    k: int
    T: float
    lhs: float
    rhs: float
    v_opt: list
    method: str
    tol: float
    exact_equality: bool

    @property
    def gap(self):
        return self.rhs - self.lhs

    @property
    def one_sided_ok(self):
        return self.lhs <= self.rhs + self.tol

    @property
    def equality_ok(self):
        return abs(self.gap) <= self.tol if self.exact_equality else None

    def to_dict(self):
        data = dict(self.__dict__)
        data.update({'gap': self.gap, 'one_sided_ok': self.one_sided_ok, 'equality_ok': self.equality_ok})
        return data


def _gauss_hermite(k, dt, n_nodes):
    nodes, weights = hermegauss(n_nodes)
    weights = weights / math.sqrt(2.0 * math.pi)
    grid = np.array(list(product(nodes, repeat=k))) * math.sqrt(dt)
    grid_weights = np.prod(np.array(list(product(weights, repeat=k))), axis=1)
    return grid, grid_weights


def variational_check(functional, T, k, n_mc=200_000, seed=0, n_nodes=None, tol=1e-3):
    """
    −log E e^{−f(W)} против inf_v {½|v|²Δt + E f(W + vΔt)} для f от
    значений W в k равноотстоящих точках. Шум на сетке: приращения N(0, Δt).
    """
    if k < 1:
        raise ConfigError('Число точек должно быть положительным.')
    if k > MAX_VARIATIONAL_DIM:
        raise UnsupportedError(f'Поддерживается k ≤ {MAX_VARIATIONAL_DIM}, получено {k}.')
    dt = T / k
    if k <= 3:
        n_nodes = n_nodes or {1: 64, 2: 32, 3: 16}[k]
        increments, weights = _gauss_hermite(k, dt, n_nodes)
        method = 'gauss-hermite'
    else:
        rng = np.random.default_rng(seed)
        increments = rng.standard_normal((n_mc, k)) * math.sqrt(dt)
        weights = np.full(n_mc, 1.0 / n_mc)
        method = 'monte-carlo'
    # Значения W(t_i) = сумма приращений
    points = np.cumsum(increments, axis=1)

    lhs = -float(special.logsumexp(-functional(points), b=weights))

    def rhs(v):
        # Постоянная скорость v на каждом отрезке: сдвиг W(t_i) на Σ_{j≤i} v_j Δt
        shift = np.cumsum(v) * dt
        return 0.5 * float(np.dot(v, v)) * dt + float(np.dot(weights, functional(points + shift[None, :])))

    starts = [np.zeros(k)]
    if functional.kind == 'clipped_linear':
        coeffs = np.broadcast_to(np.asarray(functional.coeffs, dtype=float), (k,))
        # Минимум неусечённой задачи: v_j = −Σ_{i≥j} a_i
        starts.append(-np.cumsum(coeffs[::-1])[::-1])
    best = None
    for x0 in starts:
        result = optimize.minimize(rhs, x0, method='Nelder-Mead',
                                   options={'xatol': 1e-9, 'fatol': 1e-12, 'maxiter': 20_000})
        if best is None or result.fun < best.fun:
            best = result
    logger.debug('Вариационная проверка %s, k=%d: lhs=%.6g, rhs=%.6g', functional.kind, k, lhs, best.fun)
    return VariationalReport(functional.kind, k, T, lhs, float(best.fun), best.x.tolist(), method, tol,
                             functional.exact_equality)

