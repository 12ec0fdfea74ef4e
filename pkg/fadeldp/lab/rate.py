"""
Функция действия I(Φ) = inf {½∫|v|² : Φ = Y^{0,v}} и связанные задачи.

Задача минимизации решается методом штрафа: J(v) = ½∫|v|² + ρ·(невязка)²,
ρ растёт, пока невязка не станет меньше допуска. Градиент энергии считается
точно, градиент штрафа конечными разностями, все возмущения одной пачкой.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from django.conf import settings
from scipy.optimize import minimize

from .exceptions import (
    ConfigError, DivergenceError, InfeasibleRateError, SingularDiffusionError, UnsupportedError,
)
from .fading_memory import GRID_TOL, PathOnGrid, Segment, cr_norm
from .simulate import Control, PathBatch, SimConfig, grid_index, integrate, integrate_skeleton

logger = logging.getLogger(__name__)

DIVERGED_PENALTY = 1e100


def _singular_floor():
    return float(getattr(settings, 'FADELDP_SINGULAR_FLOOR', 1e-8))


# Прямое обращение

def direct_rate(model, phi, floor=None):
    """
    I(Φ) для d = m и невырожденной σ: v(s) = σ(Φ_s)^{-1}(Φ'(s) − b(Φ_s)).
    Производная берётся разностью на шаге, коэффициенты в середине шага.
    """
    if model.d != model.m:
        raise UnsupportedError(f'Прямое обращение требует d = m, получено d = {model.d}, m = {model.m}.')
    floor = _singular_floor() if floor is None else floor
    bound = model.bind(phi.params)
    n_lags = phi.params.n_lags
    idx = np.arange(phi.n_steps + 1)[None, :] + (n_lags - np.arange(n_lags + 1))[:, None]
    windows = phi.history[idx]
    drift = bound.drift(windows, phi.tails)
    sigma = np.asarray(bound.diffusion(windows, phi.tails))

    mid_drift = 0.5 * (drift[:-1] + drift[1:])
    mid_sigma = 0.5 * (sigma[:-1] + sigma[1:])
    singular = np.linalg.svd(mid_sigma, compute_uv=False)[:, -1]
    bad = np.flatnonzero(singular < floor)
    if bad.size:
        k = int(bad[0])
        raise SingularDiffusionError(
            f'σ вырождена на шаге {k}: наименьшее сингулярное число {singular[k]:.3g} < {floor:g}.',
            step=k, time=phi.t0 + (k + 0.5) * phi.h)
    velocity = np.diff(phi.states, axis=0) / phi.h
    values = np.linalg.solve(mid_sigma, (velocity - mid_drift)[..., None])[..., 0]
    control = Control(phi.t0, phi.T, phi.h, values)
    return RateResult(value=control.energy, control=control, mismatch=0.0, feasible=True, converged=True,
                      iterations=0, gradient_norm=0.0, rho=0.0, start_label='direct', path=phi,
                      T=phi.T, tol=0.0)


# Постановка задачи

@dataclass(frozen=True, eq=False)
class FromInitial:
    xi: Segment
    t0: float = 0.0


@dataclass(frozen=True, eq=False)
class StationaryStart:
    """Старт из стационарного скелета: прогон с v = 0 из −depth до 0."""

    xi: Segment
    depth: float = 20.0


@dataclass(frozen=True, eq=False)
class TerminalPoint:
    y: np.ndarray
    T: float


@dataclass(frozen=True, eq=False)
class TerminalSegment:
    segment: Segment
    T: float


@dataclass(frozen=True, eq=False)
class FullPath:
    path: PathOnGrid

    @property
    def T(self):
        return self.path.T


@dataclass(frozen=True, eq=False)
class RateProblem:
    model: object
    start: object
    target: object
    control_step: float | None = None
    scheme: str = 'heun'
    rho: float = 100.0
    rho_growth: float = 10.0
    max_rounds: int = 6
    tol: float = 1e-3
    max_iter: int = 500
    n_random_starts: int = 1
    seed: int = 0
    gradient: str = 'forward'

    def __post_init__(self):
        if self.gradient not in ('forward', 'central'):
            raise ConfigError(f'Неизвестная схема градиента «{self.gradient}».')
        if not self.rho > 0 or not self.rho_growth > 1:
            raise ConfigError('Штраф ρ должен быть положительным, множитель роста больше 1.')


@dataclass
class RateResult:
    value: float
    control: Control
    mismatch: float
    feasible: bool
    converged: bool
    iterations: int
    gradient_norm: float
    rho: float
    start_label: str
    path: PathOnGrid = field(repr=False)
    T: float = 0.0
    tol: float = 0.0

    def to_dict(self):
        return {
            'value': self.value,
            'mismatch': self.mismatch,
            'feasible': self.feasible,
            'converged': self.converged,
            'iterations': self.iterations,
            'gradient_norm': self.gradient_norm,
            'rho': self.rho,
            'start': self.start_label,
            'T': self.T,
            'tol': self.tol,
            'control_step': self.control.h,
            'control_support': [self.control.a, self.control.b],
        }


def resolve_start(model, start, h, scheme='heun'):
    """Начальный момент и сегмент, из которых стартует управляемый скелет."""
    if isinstance(start, FromInitial):
        return float(start.t0), start.xi
    if isinstance(start, StationaryStart):
        cfg = SimConfig(h=h, T=0.0, t0=-float(start.depth), scheme=scheme)
        path = integrate_skeleton(model, start.xi, None, cfg)
        return 0.0, path.segment_at(0.0)
    raise ConfigError(f'Неизвестный режим старта: {type(start).__name__}.')


class RateObjective:
    """Штрафной функционал на векторе значений управления по ячейкам."""

    def __init__(self, problem):
        self.problem = problem
        model = problem.model
        target = problem.target
        if isinstance(target, FullPath):
            self.a, self.xi = target.path.t0, target.path.initial
        else:
            self.a, self.xi = resolve_start(model, problem.start, problem.start.xi.params.h, problem.scheme)
        self.params = self.xi.params
        self.h = self.params.h
        self.T = float(target.T)
        if self.T <= self.a + GRID_TOL:
            raise ConfigError(f'Горизонт T = {self.T} должен быть позже старта {self.a}.')
        self.control_step = problem.control_step or self.h
        self.steps_per_cell = grid_index(self.control_step, self.h)
        if self.steps_per_cell < 1:
            raise ConfigError('Шаг управления должен быть не меньше шага схемы.')
        self.n_steps = grid_index(self.T - self.a, self.h)
        self.n_cells = grid_index(self.T - self.a, self.control_step)
        self.m = model.m
        self.size = self.n_cells * self.m
        self.bound = model.bind(self.params)
        self._check_target()

    def _check_target(self):
        target = self.problem.target
        if isinstance(target, TerminalPoint):
            y = np.atleast_1d(np.asarray(target.y, dtype=float))
            if y.shape != (self.problem.model.d,):
                raise ConfigError(f'Целевая точка должна иметь размерность {self.problem.model.d}.')
        elif isinstance(target, TerminalSegment):
            if target.segment.params != self.params:
                raise ConfigError('Целевой сегмент задан на другой сетке памяти.')
        elif isinstance(target, FullPath):
            if target.path.params != self.params:
                raise ConfigError('Целевой путь задан на другой сетке памяти.')
        else:
            raise ConfigError(f'Неизвестный тип цели: {type(target).__name__}.')

    def control_from_vector(self, x):
        return Control(self.a, self.T, self.control_step, np.asarray(x).reshape(self.n_cells, self.m))

    def vector_from_control(self, control):
        if (abs(control.a - self.a) > GRID_TOL or abs(control.b - self.T) > GRID_TOL
                or control.m != self.m):
            raise ConfigError('Начальное приближение управления задано на другом отрезке.')
        if abs(control.h - self.control_step) > GRID_TOL:
            # Переносим на ячейки задачи по серединам
            mids = self.a + self.control_step * (np.arange(self.n_cells) + 0.5)
            return control.value_at(mids).ravel()
        return control.values.ravel().copy()

    def simulate(self, X):
        """X: (n_b, size) -> PathBatch с n_b репликами."""
        X = np.atleast_2d(X)
        n_b = X.shape[0]
        cells = X.reshape(n_b, self.n_cells, self.m)
        steps = np.repeat(cells, self.steps_per_cell, axis=1).transpose(1, 0, 2)
        values = np.broadcast_to(self.xi.values[:, None, :], (self.params.n_lags + 1, n_b, self.xi.d))
        tail = np.broadcast_to(self.xi.tail_coeff, (n_b, self.xi.d))
        history, tails = integrate(self.bound, values, tail, 0.0, self.h, self.n_steps, t0=self.a,
                                   control=steps, scheme=self.problem.scheme)
        return PathBatch(self.a, self.h, self.params, history, tails)

    def mismatch(self, batch):
        """(невязка в sup-норме, квадратичный штраф) для каждой реплики."""
        target = self.problem.target
        if isinstance(target, TerminalPoint):
            delta = batch.states[-1] - np.atleast_1d(target.y)[None, :]
            sq = np.sum(delta ** 2, axis=-1)
            return np.sqrt(sq), sq
        if isinstance(target, TerminalSegment):
            n_lags = self.params.n_lags
            window = batch.history[-(n_lags + 1):][::-1]
            delta = window - target.segment.values[:, None, :]
            # Окно целиком задаёт сегмент; хвост пути лишь оценка прошлого за −L
            weighted = self.params.weights[:, None] * np.linalg.norm(delta, axis=-1)
            return np.max(weighted, axis=0), np.sum(weighted ** 2, axis=0)
        delta = np.linalg.norm(batch.states - target.path.states[:, None, :], axis=-1)
        return np.max(delta, axis=0), np.sum(delta ** 2, axis=0)

    def penalties(self, X):
        try:
            batch = self.simulate(X)
        except DivergenceError:
            n_b = np.atleast_2d(X).shape[0]
            return np.full(n_b, np.inf), np.full(n_b, DIVERGED_PENALTY)
        return self.mismatch(batch)

    def energy(self, x):
        return 0.5 * float(np.dot(x, x)) * self.control_step

    def value_and_grad(self, x, rho):
        size = self.size
        if self.problem.gradient == 'central':
            delta = np.finfo(float).eps ** (1.0 / 3.0) * np.maximum(1.0, np.abs(x))
            X = np.vstack([x[None, :], x + np.diag(delta), x - np.diag(delta)])
            _, pen = self.penalties(X)
            grad_pen = (pen[1:size + 1] - pen[size + 1:]) / (2.0 * delta)
        else:
            delta = math.sqrt(np.finfo(float).eps) * np.maximum(1.0, np.abs(x))
            X = np.vstack([x[None, :], x + np.diag(delta)])
            _, pen = self.penalties(X)
            grad_pen = (pen[1:] - pen[0]) / delta
        value = self.energy(x) + rho * pen[0]
        grad = x * self.control_step + rho * grad_pen
        return value, grad

    def path_for(self, x):
        return self.simulate(x[None, :]).replica(0)


def _straight_line_seed(objective):
    """Управление, переводящее скелет по прямой к цели: годится только при d = m."""
    problem = objective.problem
    model = problem.model
    target = problem.target
    if model.d != model.m:
        return None
    if isinstance(target, FullPath):
        phi = target.path
    else:
        end = np.atleast_1d(target.y) if isinstance(target, TerminalPoint) else target.segment.head
        start = objective.xi.head
        weights = np.linspace(0.0, 1.0, objective.n_steps + 1)[:, None]
        states = (1.0 - weights) * start[None, :] + weights * end[None, :]
        phi = PathOnGrid(objective.a, objective.h, objective.xi, states)
    try:
        seed = direct_rate(model, phi).control
    except (SingularDiffusionError, UnsupportedError):
        return None
    values = seed.values.reshape(objective.n_cells, objective.steps_per_cell, objective.m).mean(axis=1)
    return values.ravel()


def _run_schedule(objective, x0):
    problem = objective.problem
    rho = problem.rho
    x = np.asarray(x0, dtype=float).copy()
    iterations = 0
    converged = False
    grad_norm = float('nan')
    mismatch = float('inf')
    for _ in range(problem.max_rounds):
        result = minimize(objective.value_and_grad, x, args=(rho,), jac=True, method='L-BFGS-B',
                          options={'maxiter': problem.max_iter, 'gtol': 1e-10, 'ftol': 1e-15})
        x = result.x
        iterations += int(result.nit)
        converged = bool(result.success)
        grad_norm = float(np.linalg.norm(result.jac)) if result.jac is not None else float('nan')
        mismatch = float(objective.penalties(x[None, :])[0][0])
        if mismatch <= problem.tol:
            break
        rho *= problem.rho_growth
    return x, mismatch, iterations, converged, grad_norm, rho


def minimize_rate(problem, initial_guesses=()):
    """
    Верхняя оценка I(Φ★): лучший из нескольких стартов (нулевое управление,
    прямое обращение вдоль прямой, случайные и переданные приближения).
    """
    objective = RateObjective(problem)
    starts = [('zero', np.zeros(objective.size))]
    seed = _straight_line_seed(objective)
    if seed is not None:
        starts.append(('direct', seed))
    for i, guess in enumerate(initial_guesses):
        starts.append((f'guess-{i}', objective.vector_from_control(guess)))
    rng = np.random.default_rng(problem.seed)
    for i in range(problem.n_random_starts):
        starts.append((f'random-{i}', 0.5 * rng.standard_normal(objective.size)))

    outcomes = []
    for label, x0 in starts:
        x, mismatch, iterations, converged, grad_norm, rho = _run_schedule(objective, x0)
        feasible = mismatch <= problem.tol
        outcomes.append((not feasible, objective.energy(x) if feasible else mismatch, len(outcomes),
                         label, x, mismatch, iterations, converged, grad_norm, rho))
        logger.debug('Старт %s: энергия %.6g, невязка %.3g', label, objective.energy(x), mismatch)

    best = min(outcomes, key=lambda item: item[:3])
    _, _, _, label, x, mismatch, iterations, converged, grad_norm, rho = best
    feasible = mismatch <= problem.tol
    if not feasible:
        logger.warning('Задача о функции действия не достигла допуска: невязка %.3g > %.3g', mismatch, problem.tol)
    return RateResult(
        value=objective.energy(x),
        control=objective.control_from_vector(x),
        mismatch=mismatch,
        feasible=feasible,
        converged=converged,
        iterations=sum(item[6] for item in outcomes),
        gradient_norm=grad_norm,
        rho=rho,
        start_label=label,
        path=objective.path_for(x),
        T=objective.T,
        tol=problem.tol,
    )


# Квазипотенциал

@dataclass
class QuasipotentialResult:
    value: float
    T_star: float | None
    curve: list
    results: list = field(repr=False)
    monotone: bool = True

    @property
    def feasible(self):
        return self.T_star is not None

    def to_dict(self):
        return {'value': self.value, 'T_star': self.T_star, 'curve': self.curve,
                'monotone': self.monotone, 'feasible': self.feasible}


def _warm_start(previous, a, T, control_step):
    """Прежний оптимум, прижатый к новому концу горизонта и дополненный нулями слева."""
    shift = T - previous.b
    grid_index(shift, control_step)
    return previous.shifted(shift).padded(a)


def quasipotential(model, target, T_list, start, **options):
    """
    V(target) ≈ min по T из T_list функции действия перехода из
    стационарного скелета в target за время T.
    """
    T_list = [float(T) for T in T_list]
    if not T_list or any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ConfigError(f'Список горизонтов должен строго возрастать, получено {T_list}.')
    results = []
    curve = []
    previous = None
    for T in T_list:
        if isinstance(target, Segment):
            goal = TerminalSegment(target, T)
        else:
            goal = TerminalPoint(np.atleast_1d(np.asarray(target, dtype=float)), T)
        problem = RateProblem(model, start, goal, **options)
        guesses = ()
        if previous is not None:
            step = problem.control_step or start.xi.params.h
            guesses = (_warm_start(previous, 0.0, T, step),)
        result = minimize_rate(problem, guesses)
        results.append(result)
        curve.append({'T': T, 'value': result.value, 'feasible': result.feasible, 'mismatch': result.mismatch})
        if result.feasible:
            previous = result.control
        logger.info('Квазипотенциал: T = %s, I = %.6g, допустимо: %s', T, result.value, result.feasible)

    feasible = [(item['value'], item['T']) for item in curve if item['feasible']]
    if not feasible:
        return QuasipotentialResult(float('inf'), None, curve, results, True)
    value, T_star = min(feasible)
    values = [item['value'] for item in curve if item['feasible']]
    monotone = all(b <= a + 1e-3 * (1.0 + abs(a)) for a, b in zip(values, values[1:]))
    if not monotone:
        logger.warning('Кривая T → I(T) не монотонна: %s', values)
    return QuasipotentialResult(value, T_star, curve, results, monotone)


def contraction_project(model, phi_star, T_list, start, **options):
    """Стоимость удержания стационарного скелета в сегменте φ★."""
    return quasipotential(model, phi_star, T_list, start, **options)


def require_feasible(result):
    if not result.feasible:
        raise InfeasibleRateError(
            f'Невязка {getattr(result, "mismatch", float("inf")):.3g} не достигла допуска.')
    return result


# Непрерывность скелета

@dataclass
class ContinuityReport:
    lam: float
    segment_checks: list
    control_checks: list

    @property
    def all_hold(self):
        return (all(item['holds'] and item['holds_bound'] for item in self.segment_checks)
                and all(item['converging'] for item in self.control_checks))

    def to_dict(self):
        return {'lam': self.lam, 'segment_checks': self.segment_checks,
                'control_checks': self.control_checks, 'all_hold': self.all_hold}


def _zero_state_constants(model, params):
    zero = Segment.zeros(model.d, params)
    bound = model.bind(params)
    window, tail = zero.values[:, None, :], zero.tail_coeff[None, :]
    b0 = bound.drift(window, tail)[0]
    s0 = np.asarray(bound.diffusion(window, tail))[0]
    return float(np.sum(b0 ** 2)), float(np.sum(s0 ** 2))


def continuity_probe(model, t0, xi_pairs, control_cases, cfg, horizon, lam=None, ns=(4, 16, 64)):
    """
    Две проверки непрерывности скелета Y^{0,v}:
    оценки сжатия по начальному сегменту при общем v и сходимость
    выходов при v_n = v + c·n^{−p}·sin(n·s).
    """
    if not xi_pairs and not control_cases:
        raise ConfigError('Нечего проверять: нет ни пар сегментов, ни управлений.')
    r = xi_pairs[0][0].params.r if xi_pairs else control_cases[0]['xi'].params.r
    margin0 = model.require_stable(r, 0.0)
    lam = 0.5 * min(margin0, 2.0 * r) if lam is None else lam
    if not 0 < lam < min(margin0, 2.0 * r) + GRID_TOL:
        raise ConfigError(f'Скорость λ = {lam} вне допустимого интервала (0, λ_max).')
    eps1 = 0.5 * (margin0 - lam)
    t_end = t0 + horizon
    run_cfg = cfg.replace(t0=t0, T=t_end)

    segment_checks = []

    for item in xi_pairs:
        xi1, xi2 = item[0], item[1]
        control = item[2] if len(item) > 2 and item[2] is not None else Control.zeros(t0, t_end, cfg.h, model.m)
        M = 2.0 * control.energy
        y1 = integrate_skeleton(model, xi1, control, run_cfg)
        y2 = integrate_skeleton(model, xi2, control, run_cfg)
        lhs = cr_norm(y1.segment_at(t_end) - y2.segment_at(t_end)) ** 2
        rhs = 2.0 * math.exp(-lam * horizon + M) * cr_norm(xi1 - xi2) ** 2
        b0_sq, s0_sq = _zero_state_constants(model, xi1.params)
        const = (b0_sq / eps1 + s0_sq) / lam
        bound_lhs = cr_norm(y1.segment_at(t_end)) ** 2
        bound_rhs = 2.0 * math.exp(-lam * horizon + 2.0 * M) * cr_norm(xi1) ** 2 + math.exp(2.0 * M) * const
        segment_checks.append({
            'lhs': lhs, 'rhs': rhs, 'holds': lhs <= rhs * (1.0 + 1e-12) + 1e-300,
            'bound_lhs': bound_lhs, 'bound_rhs': bound_rhs, 'holds_bound': bound_lhs <= bound_rhs,
            'M': M,
        })

    control_checks = []
    for case in control_cases:
        xi = case['xi']
        base = case.get('control') or Control.zeros(t0, t_end, cfg.h, model.m)
        amplitude = float(case.get('amplitude', 1.0))
        power = float(case.get('power', 1.0))
        reference = integrate_skeleton(model, xi, base, run_cfg)
        distances, control_distances = [], []
        for n in ns:
            bump = Control.from_function(lambda s, n=n: amplitude * n ** (-power) * math.sin(n * s),
                                         base.a, base.b, base.h, base.m)
            perturbed = integrate_skeleton(model, xi, base + bump, run_cfg)
            distances.append(float(np.max((perturbed - reference).segment_norms())))
            control_distances.append(math.sqrt(2.0 * bump.energy))
        control_checks.append({
            'ns': list(ns), 'distances': distances, 'control_distances': control_distances,
            'converging': (all(b < a for a, b in zip(distances, distances[1:]))
                           and all(b < a for a, b in zip(control_distances, control_distances[1:]))),
        })
    return ContinuityReport(lam, segment_checks, control_checks)

