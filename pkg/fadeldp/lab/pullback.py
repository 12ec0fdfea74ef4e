"""
Pull-back: решения, стартующие из фиксированного сегмента в моменты −n
на общей реализации шума, сходятся к стационарному решению.
"""

from dataclasses import dataclass, field
from itertools import combinations
import logging
import math

import numpy as np
from scipy import stats

from .exceptions import BurnInError, ConfigError, InsufficientReplicasError, ModelRefusalError
from .fading_memory import GRID_TOL, PathOnGrid
from .simulate import (
    PathBatch, batch_increments, fit_decay, grid_index, integrate, run_replicas,
)
from .statistics import energy_distance_test, slope_interval

logger = logging.getLogger(__name__)

MIN_STATIONARITY_REPLICAS = 100


@dataclass
class PullbackRun:
    n_list: list
    window: tuple
    eps: float
    times: np.ndarray
    diffs: np.ndarray
    sup_diffs: np.ndarray
    fitted_rate: float | None
    r_squared: float | None
    intercept: float | None
    limit_path: PathOnGrid
    n_replicas: int = 1
    residual_max: float | None = None
    residual_tol: float | None = None

    @property
    def degenerate(self):
        return self.fitted_rate is None

    @property
    def residual_ok(self):
        if self.residual_max is None:
            return None
        return self.residual_max <= self.residual_tol

    def to_dict(self):
        return {
            'n_list': list(self.n_list),
            'window': list(self.window),
            'eps': self.eps,
            'sup_diffs': self.sup_diffs.tolist(),
            'fitted_rate': self.fitted_rate,
            'r_squared': self.r_squared,
            'intercept': self.intercept,
            'n_replicas': self.n_replicas,
            'degenerate': self.degenerate,
            'residual_max': self.residual_max,
            'residual_tol': self.residual_tol,
            'residual_ok': self.residual_ok,
        }

    def diff_rows(self):
        rows = []
        for i in range(len(self.n_list) - 1):
            for k, t in enumerate(self.times):
                rows.append({'n': self.n_list[i], 'n_next': self.n_list[i + 1], 't': float(t),
                             'diff': float(self.diffs[i, k])})
        return rows


def _validate_request(n_list, window, h):
    n_list = [int(n) for n in n_list]
    if len(n_list) < 2:
        raise ConfigError('Нужны хотя бы два момента старта n.')
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError(f'Список n должен строго возрастать, получено {n_list}.')
    t_lo, t_hi = (float(x) for x in window)
    if t_hi < t_lo:
        raise ConfigError(f'Окно [{t_lo}, {t_hi}] пусто.')
    if n_list[0] < -t_lo - GRID_TOL:
        raise ConfigError(f'Старт −{n_list[0]} позже начала окна {t_lo}.')
    grid_index(t_lo, h)
    grid_index(t_hi, h)
    return n_list, (t_lo, t_hi)


def _run_from_starts(model, xi, eps, n_list, window, cfg, stream_ids, control=None):
    """Прогоны из −n для всех n на общем шуме; возвращает пачки, обрезанные до окна."""
    h = cfg.h
    params = xi.params
    n_lags = params.n_lags
    t_lo, t_hi = window
    k_hi = grid_index(t_hi, h)
    k_lo = grid_index(t_lo, h)
    deepest = n_list[-1]
    k_deep = grid_index(-deepest, h)
    noise = None
    if eps > 0:
        noise = batch_increments(cfg.seed, stream_ids, k_deep, k_hi - k_deep, model.m, h)
    n_rep = len(stream_ids)
    values = np.broadcast_to(xi.values[:, None, :], (n_lags + 1, n_rep, xi.d))
    tail = np.broadcast_to(xi.tail_coeff, (n_rep, xi.d))
    bound = model.bind(params)
    runs = []
    for n in n_list:
        k_start = grid_index(-n, h)
        n_steps = k_hi - k_start
        run_noise = None if noise is None else noise[k_start - k_deep:]
        control_grid = None
        if control is not None:
            control_grid = control.on_grid(-float(n), h, n_steps)[:, None, :]
        history, tails = integrate(bound, values, tail, eps, h, n_steps, t0=-float(n), noise=run_noise,
                                   control=control_grid, scheme=cfg.scheme)
        offset = k_lo - k_start
        runs.append(PathBatch(t_lo, h, params, history[offset:], tails[offset:]))
    return runs


def pullback_solve(model, xi, eps, window, n_list, cfg, n_replicas=1, control=None,
                   threads=None, chunk_size=None):
    """
    Y_{t;−n} для n из n_list на общей реализации шума. Разности соседних
    стартов в норме C_r должны убывать экспоненциально по n.
    """
    if eps < 0:
        raise ConfigError(f'eps должно быть неотрицательным, получено {eps}.')
    n_list, window = _validate_request(n_list, window, cfg.h)
    model.require_stable(xi.params.r, eps)
    n_replicas = n_replicas if eps > 0 else 1

    def chunk(start, stop):
        runs = _run_from_starts(model, xi, eps, n_list, window, cfg, list(range(start, stop)), control)
        diffs = np.stack([(a - b).segment_norms() for a, b in zip(runs, runs[1:])])
        return {'diffs': np.sum(diffs, axis=2), 'sup': np.sum(np.max(diffs, axis=1), axis=1)}

    parts = run_replicas(chunk, n_replicas, chunk_size, threads, reduce='sum')
    diffs = parts['diffs'] / n_replicas
    sup_diffs = parts['sup'] / n_replicas
    rate, r_squared, intercept = fit_decay(n_list[:-1], sup_diffs)
    # Предельный путь: первая реплика из самого раннего старта
    limit = _run_from_starts(model, xi, eps, n_list[-1:], window, cfg, [0], control)[0].replica(0)
    times = window[0] + cfg.h * np.arange(diffs.shape[1])
    logger.info('Pull-back: eps=%s, скорость %s, sup-разности %s', eps, rate, np.array2string(sup_diffs, precision=3))
    return PullbackRun(n_list, window, eps, times, diffs, sup_diffs, rate, r_squared, intercept, limit, n_replicas)


def _path_windows(path):
    """Окна сегментов во всех узлах пути: (n_lags + 1, n_nodes, d)."""
    n_lags = path.params.n_lags
    history = path.history
    idx = np.arange(path.n_steps + 1)[None, :] + (n_lags - np.arange(n_lags + 1))[:, None]
    windows = history[idx]
    return windows, path.tails


def skeleton_residual(model, path, control, n_checks=20, seed=0):
    """
    Невязка интегрального уравнения для скелета:
    Φ(t2 + τ) − Φ(t1 + τ) − ∫_{t1+τ}^{t2+τ} (b(Φ_s) + σ(Φ_s)v(s)) ds.
    """
    bound = model.bind(path.params)
    windows, tails = _path_windows(path)
    h = path.h
    rates = bound.drift(windows, tails)
    if control is not None:
        v_steps = control.on_grid(path.t0, h, path.n_steps)
        sigma = np.asarray(bound.diffusion(windows, tails))
        # Трапеция по шагу с постоянным управлением на шаге
        forced_left = rates[:-1] + np.matmul(sigma[:-1], v_steps[..., None])[..., 0]
        forced_right = rates[1:] + np.matmul(sigma[1:], v_steps[..., None])[..., 0]
    else:
        forced_left, forced_right = rates[:-1], rates[1:]
    step_integrals = 0.5 * h * (forced_left + forced_right)
    cumulative = np.vstack([np.zeros((1, path.d)), np.cumsum(step_integrals, axis=0)])

    rng = np.random.default_rng(seed)
    n_lags = path.params.n_lags
    worst = 0.0
    for _ in range(n_checks):
        lag = int(rng.integers(0, n_lags + 1))
        k1, k2 = sorted(int(k) for k in rng.integers(lag, path.n_steps + 1, size=2))
        s1, s2 = k1 - lag, k2 - lag
        residual = path.states[s2] - path.states[s1] - (cumulative[s2] - cumulative[s1])
        worst = max(worst, float(np.max(np.abs(residual))))
    return worst


def skeleton_pullback(model, xi, control, window, n_list, cfg, n_checks=20, seed=0):
    """Pull-back скелета с управлением v и проверка интегрального уравнения на предельном пути."""
    run = pullback_solve(model, xi, 0.0, window, n_list, cfg, control=control)
    deepest = -float(run.n_list[-1])
    full = _run_from_starts(model, xi, 0.0, [run.n_list[-1]], (deepest, window[1]), cfg, [0], control)[0]
    run.residual_max = skeleton_residual(model, full.replica(0), control, n_checks, seed)
    run.residual_tol = 5.0 * cfg.h
    if not run.residual_ok:
        logger.warning('Невязка скелета %.3g выше допуска %.3g', run.residual_max, run.residual_tol)
    return run


@dataclass
class UniformPullbackReport:
    eps_values: list
    rates: list
    lambda_max: float
    threshold: float
    runs: list = field(repr=False)

    @property
    def min_rate(self):
        rates = [rate for rate in self.rates if rate is not None]
        return min(rates) if rates else None

    @property
    def passed(self):
        return self.min_rate is not None and self.min_rate >= self.threshold

    def to_dict(self):
        return {
            'eps_values': self.eps_values,
            'rates': self.rates,
            'lambda_max': self.lambda_max,
            'threshold': self.threshold,
            'min_rate': self.min_rate,
            'passed': self.passed,
        }


def controlled_pullback_uniform(model, xi, eps_values, control, window, n_list, cfg, n_replicas,
                                threshold_factor=0.3, threads=None, chunk_size=None):
    """Скорость pull-back для Y^{ε,v} не должна вырождаться при ε → 0."""
    r = xi.params.r
    eps0 = model.eps0(r)
    runs = []
    for eps in eps_values:
        if eps > 0 and eps >= eps0:
            raise ModelRefusalError(f'eps = {eps} не меньше порога ε0 = {eps0:.6g}.', margin=model.margin(r, eps))
        if eps == 0:
            runs.append(skeleton_pullback(model, xi, control, window, n_list, cfg))
        else:
            runs.append(pullback_solve(model, xi, eps, window, n_list, cfg.replace(scheme='euler'),
                                       n_replicas=n_replicas, control=control, threads=threads,
                                       chunk_size=chunk_size))
    lam = model.lambda_max(r, 0.0)
    return UniformPullbackReport(list(eps_values), [run.fitted_rate for run in runs], lam,
                                 threshold_factor * lam, runs)


def certify_burn_in(model, xi, eps, cfg, n_burn, tol=1e-3, n_replicas=8):
    """Проверка, что разгон длины n_burn уже «забыл» начальный сегмент."""
    half = max(1, int(n_burn // 2))
    n_burn = int(n_burn)
    if n_burn <= half:
        raise ConfigError('Длина разгона должна быть не меньше 2.')
    run = pullback_solve(model, xi, eps, (0.0, 0.0), [half, n_burn], cfg.replace(scheme='euler'),
                         n_replicas=n_replicas)
    diff = float(run.sup_diffs[0])
    if diff > tol:
        raise BurnInError(
            f'Разгон {n_burn} недостаточен: разность стартов −{half} и −{n_burn} равна {diff:.3g} > {tol:g}.')
    return diff


@dataclass
class StationarityReport:
    times: list
    eps: float
    n_replicas: int
    alpha: float
    burn_in_diff: float
    means: list
    variances: list
    mean_sq_norms: list
    ks_pairs: list
    energy_pairs: list
    reference: list
    flat_slope: float | None
    flat_interval: tuple | None
    uniformly_bounded: bool

    @property
    def ks_pass_rate(self):
        if not self.ks_pairs:
            return 1.0
        return sum(1 for item in self.ks_pairs if item['pvalue'] >= self.alpha) / len(self.ks_pairs)

    @property
    def stationary(self):
        ks_ok = all(item['pvalue'] >= self.alpha for item in self.ks_pairs)
        energy_ok = all(item['pvalue'] >= self.alpha for item in self.energy_pairs)
        return ks_ok and energy_ok and self.uniformly_bounded

    def to_dict(self):
        data = dict(self.__dict__)
        data['ks_pass_rate'] = self.ks_pass_rate
        data['stationary'] = self.stationary
        return data

    def marginal_rows(self):
        rows = []
        for i, t in enumerate(self.times):
            for c, (mean, var) in enumerate(zip(self.means[i], self.variances[i])):
                rows.append({'t': t, 'coordinate': c, 'mean': mean, 'variance': var,
                             'mean_sq_norm': self.mean_sq_norms[i]})
        return rows


def _samples_at(model, xi, eps, cfg, n_burn, t, stream_ids):
    """Состояния и взвешенные сегменты в момент t после разгона из −n_burn."""
    runs = _run_from_starts(model, xi, eps, [int(n_burn)], (t, t), cfg, stream_ids)
    batch = runs[0]
    window = batch.history[::-1]
    features = (window * batch.params.weights[:, None, None]).transpose(1, 0, 2).reshape(len(stream_ids), -1)
    return batch.states[0], features, batch.segment_norms()[0]


def stationarity_test(model, xi, eps, cfg, n_burn, times, n_replicas, alpha=0.01, reference=None,
                      burn_in_tol=1e-3, n_permutations=200, energy_subsample=400):
    """
    Маргинальные распределения Y*(t) при разных t должны совпадать.
    Каждому моменту соответствует своя непересекающаяся группа реплик.
    """
    if n_replicas < MIN_STATIONARITY_REPLICAS:
        raise InsufficientReplicasError(
            f'Нужно не меньше {MIN_STATIONARITY_REPLICAS} реплик, получено {n_replicas}.')
    times = [float(t) for t in times]
    if len(times) < 2:
        raise ConfigError('Нужны хотя бы два момента времени.')
    cfg = cfg.replace(scheme='euler')
    model.require_stable(xi.params.r, eps)
    burn_in_diff = certify_burn_in(model, xi, eps, cfg, n_burn, burn_in_tol)

    states, features, norms = [], [], []
    for j, t in enumerate(times):
        ids = list(range(j * n_replicas, (j + 1) * n_replicas))
        y, feat, norm = _samples_at(model, xi, eps, cfg, n_burn, t, ids)
        states.append(y)
        features.append(feat)
        norms.append(norm)

    rng = np.random.default_rng(cfg.seed)
    ks_pairs, energy_pairs = [], []
    for i, j in combinations(range(len(times)), 2):
        for c in range(model.d):
            result = stats.ks_2samp(states[i][:, c], states[j][:, c])
            ks_pairs.append({'t_i': times[i], 't_j': times[j], 'coordinate': c,
                             'statistic': float(result.statistic), 'pvalue': float(result.pvalue)})
        statistic, pvalue = energy_distance_test(
            features[i][:energy_subsample], features[j][:energy_subsample], n_permutations, rng)
        energy_pairs.append({'t_i': times[i], 't_j': times[j], 'statistic': statistic, 'pvalue': pvalue})

    reference_results = []
    if reference is not None and eps > 0:
        ref_mean = np.broadcast_to(np.asarray(reference['mean'], dtype=float), (model.d,))
        ref_var = np.broadcast_to(np.asarray(reference['variance'], dtype=float), (model.d,))
        for i, t in enumerate(times):
            for c in range(model.d):
                result = stats.kstest(states[i][:, c], 'norm', args=(ref_mean[c], math.sqrt(ref_var[c])))
                reference_results.append({'t': t, 'coordinate': c, 'statistic': float(result.statistic),
                                          'pvalue': float(result.pvalue)})

    mean_sq = [float(np.mean(norm ** 2)) for norm in norms]
    slope, interval = None, None
    if len(times) >= 3:
        slope, interval = slope_interval(times, mean_sq)
        flat = interval[0] <= 0.0 <= interval[1]
    else:
        flat = True
    bounded = flat and max(mean_sq) <= 3.0 * float(np.median(mean_sq)) + 1e-300

    return StationarityReport(
        times=times,
        eps=eps,
        n_replicas=n_replicas,
        alpha=alpha,
        burn_in_diff=burn_in_diff,
        means=[np.mean(y, axis=0).tolist() for y in states],
        variances=[np.var(y, axis=0, ddof=1).tolist() for y in states],
        mean_sq_norms=mean_sq,
        ks_pairs=ks_pairs,
        energy_pairs=energy_pairs,
        reference=reference_results,
        flat_slope=slope,
        flat_interval=interval,
        uniformly_bounded=bounded,
    )

