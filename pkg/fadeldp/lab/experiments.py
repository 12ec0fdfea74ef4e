"""
Эксперименты командной строки: сборка объектов модели из проверенной
конфигурации и запуск соответствующей операции.

Каждый эксперимент возвращает ExperimentOutcome: словарь результата для
result.json, таблицы для CSV и пути для двоичного вывода.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .coefficients import CoefficientModel, Nonlinearity, dissipativity_report
from .exceptions import ConfigError
from .fading_memory import PathOnGrid, Segment
from .ldp_harness import EventSpec, FunctionalSpec, Start, ldp_slope, variational_check
from .pullback import controlled_pullback_uniform, pullback_solve, skeleton_pullback, stationarity_test
from .rate import (
    FromInitial, FullPath, RateProblem, StationaryStart, TerminalPoint, TerminalSegment,
    direct_rate, minimize_rate, quasipotential,
)
from .serializers import build_measure
from .simulate import (
    Control, SimConfig, controlled_moment_bounds, empirical_bounds, integrate_skeleton,
    simulate_batch, skeleton_convergence,
)

logger = logging.getLogger(__name__)

# Эксперименты, чьи результаты кэшируются по хэшу конфигурации
CACHEABLE_KINDS = frozenset({'pullback', 'stationarity', 'ldp-slope', 'bounds'})
# Эксперименты с параметром eps, который сценарий может подставить по умолчанию
EPS_KINDS = frozenset({'simulate', 'pullback', 'stationarity', 'check-model', 'bounds'})
FUNCTIONAL_CASE_DEFAULTS = {'coeffs': [1.0], 'lower': -50.0, 'upper': 50.0, 'T': 1.0, 'k': 1}
DEFAULT_VARIATIONAL_CASES = (
    {'kind': 'zero'},
    {'kind': 'clipped_linear', 'k': 2},
    {'kind': 'clipped_quadratic', 'lower': 0.0, 'upper': 4.0, 'k': 2},
)
RATE_OPTION_KEYS = (
    'control_step', 'scheme', 'rho', 'rho_growth', 'max_rounds', 'tol', 'max_iter', 'n_random_starts', 'gradient',
)


@dataclass
class ExperimentOutcome:
    result: dict
    tables: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    # Для отказа после записи артефактов: 'infeasible' или 'unstable'
    failure: str | None = None
    failure_detail: str = ''
    margin: float | None = None


@dataclass
class ExperimentContext:
    model: CoefficientModel
    params: object
    options: dict
    seed: int = 0
    threads: int | None = None

    @property
    def h(self):
        return self.params.h


# Сборка объектов

def build_model(block):
    sigma1 = block.get('sigma1')
    nonlinearity = block.get('nonlinearity') or {}
    return CoefficientModel(
        d=block['d'],
        m=block['m'],
        A=np.array(block['A'], dtype=float),
        B=np.array(block['B'], dtype=float),
        mu1=build_measure(block['mu1']),
        mu2=build_measure(block['mu2']),
        Sigma0=np.array(block['sigma0'], dtype=float),
        Sigma1=None if sigma1 is None else np.array(sigma1, dtype=float),
        nonlinearity=Nonlinearity(nonlinearity.get('name', 'zero'), nonlinearity.get('amplitude', 0.0)),
        name=block.get('name', 'affine'),
    )


def build_params(model, block):
    return model.memory_params(block['r'], h=block.get('h'), tail_tol=block.get('tail_tol', 1e-6),
                               norm_bound=block.get('norm_bound', 1.0), L=block.get('L'))


def _vector(value, d, name):
    vector = np.atleast_1d(np.asarray(value, dtype=float))
    if vector.shape == (1,) and d > 1:
        vector = np.full(d, vector[0])
    if vector.shape != (d,):
        raise ConfigError(f'{name}: ожидался вектор длины {d}, получено {vector.shape[0]}.')
    return vector


def build_segment(spec, params, d, head_time=0.0):
    spec = spec or {}
    if spec.get('values') is not None:
        tail = spec.get('tail')
        tail = np.zeros(d) if tail is None else _vector(tail, d, 'tail')
        return Segment(head_time, np.array(spec['values'], dtype=float), tail, params)
    return Segment.constant(_vector(spec.get('constant') or [0.0], d, 'constant'), params, head_time)


def build_control(spec, m, default_step):
    if spec is None:
        return None
    step = spec.get('step') or default_step
    if spec.get('values') is not None:
        return Control(spec['a'], spec['b'], step, np.array(spec['values'], dtype=float))
    value = _vector(spec['constant'], m, 'control.constant')
    return Control.from_function(lambda s: value, spec['a'], spec['b'], step, m)


def build_rate_start(spec, params, d):
    if spec.get('kind') == 'stationary':
        depth = spec.get('depth', 20.0)
        return StationaryStart(build_segment(spec.get('xi'), params, d, -depth), depth)
    t0 = spec.get('t0', 0.0)
    return FromInitial(build_segment(spec.get('xi'), params, d, t0), t0)


def build_target(spec, params, start, d):
    kind = spec['kind']
    if kind == 'point':
        return TerminalPoint(_vector(spec['y'], d, 'target.y'), spec['T'])
    if kind == 'segment':
        return TerminalSegment(build_segment(spec['segment'], params, d, spec['T']), spec['T'])
    t0 = getattr(start, 't0', 0.0)
    return FullPath(PathOnGrid(t0, params.h, start.xi, np.array(spec['states'], dtype=float)))


def rate_options(options):
    return {key: options[key] for key in RATE_OPTION_KEYS if key in options}


# Эксперименты

def run_simulate(ctx):
    p = ctx.options
    model = ctx.model
    xi = build_segment(p.get('xi'), ctx.params, model.d, p['t0'])
    cfg = SimConfig(h=ctx.h, T=p['T'], t0=p['t0'], scheme=p['scheme'], seed=ctx.seed)
    control = build_control(p.get('control'), model.m, ctx.h)
    batch = simulate_batch(model, xi, p['eps'], cfg, control=control, n_replicas=p['n_replicas'])
    first = batch.replica(0)
    terminal = batch.state_at(cfg.T)
    result = {
        'eps': p['eps'],
        'scheme': cfg.scheme,
        'n_steps': cfg.n_steps,
        'n_replicas': batch.n_replicas,
        'terminal_mean': np.mean(terminal, axis=0),
        'terminal_mean_sq': float(np.mean(np.sum(terminal ** 2, axis=-1))),
        'sup_norm': float(np.max(first.segment_norms())),
        'control_energy': control.energy if control is not None else 0.0,
    }
    tables = {
        'path': first.to_rows(),
        'terminal_segment': first.segment_at(cfg.T).to_rows(),
    }
    if batch.n_replicas > 1:
        tables['terminal'] = [{'replica': i, **{f'y{j}': float(v) for j, v in enumerate(state)}}
                              for i, state in enumerate(terminal)]
    paths = {'path.bin': first} if p['binary'] else {}
    return ExperimentOutcome(result, tables, paths)


def run_pullback(ctx):
    p = ctx.options
    model = ctx.model
    window = tuple(p['window'])
    xi = build_segment(p.get('xi'), ctx.params, model.d)
    cfg = SimConfig(h=ctx.h, T=window[1], t0=window[0], scheme=p['scheme'], seed=ctx.seed)
    control = build_control(p.get('control'), model.m, ctx.h)
    if p.get('eps_list'):
        report = controlled_pullback_uniform(model, xi, p['eps_list'], control, window, p['n_list'], cfg,
                                             p['n_replicas'], p['threshold_factor'], threads=ctx.threads)
        tables = {'rates': [{'eps': eps, 'rate': rate} for eps, rate in zip(report.eps_values, report.rates)]}
        return ExperimentOutcome({'uniform': report.to_dict(),
                                  'runs': [run.to_dict() for run in report.runs]}, tables)
    if p['eps'] == 0:
        run = skeleton_pullback(model, xi, control, window, p['n_list'], cfg, seed=ctx.seed)
    else:
        run = pullback_solve(model, xi, p['eps'], window, p['n_list'], cfg.replace(scheme='euler'),
                             n_replicas=p['n_replicas'], control=control, threads=ctx.threads)
    if run.degenerate:
        logger.warning('Разности pull-back вырождены: скорость не оценена')
    tables = {'diffs': run.diff_rows(), 'limit_path': run.limit_path.to_rows()}
    return ExperimentOutcome(run.to_dict(), tables)


def run_stationarity(ctx):
    p = ctx.options
    model = ctx.model
    xi = build_segment(p.get('xi'), ctx.params, model.d)
    cfg = SimConfig(h=ctx.h, T=max(p['times']), t0=0.0, seed=ctx.seed)
    report = stationarity_test(model, xi, p['eps'], cfg, p['n_burn'], p['times'], p['n_replicas'],
                               alpha=p['alpha'], reference=p.get('reference'), burn_in_tol=p['burn_in_tol'],
                               n_permutations=p['n_permutations'])
    tables = {
        'marginals': report.marginal_rows(),
        'ks_pairs': report.ks_pairs,
        'energy_pairs': report.energy_pairs,
    }
    if report.reference:
        tables['reference'] = report.reference
    return ExperimentOutcome(report.to_dict(), tables)


def _rate_tables(result):
    return {'control': result.control.to_rows(), 'path': result.path.to_rows()}


def run_rate(ctx):
    p = ctx.options
    model = ctx.model
    start = build_rate_start(p.get('start', {}), ctx.params, model.d)
    target = build_target(p['target'], ctx.params, start, model.d)
    if p['direct']:
        if not isinstance(target, FullPath):
            raise ConfigError('Прямое обращение требует цель типа path.', code='invalid_target')
        result = direct_rate(model, target.path)
    else:
        problem = RateProblem(model, start, target, seed=ctx.seed, **rate_options(p))
        result = minimize_rate(problem)
    outcome = ExperimentOutcome(result.to_dict(), _rate_tables(result))
    if not result.feasible:
        outcome.failure = 'infeasible'
        outcome.failure_detail = (f'Задача функции действия недопустима: невязка {result.mismatch:.3g} '
                                  f'при допуске {result.tol:g}.')
    return outcome


def run_quasipotential(ctx):
    p = ctx.options
    model = ctx.model
    start = build_rate_start(p.get('start', {'kind': 'stationary'}), ctx.params, model.d)
    spec = p['target']
    if spec['kind'] == 'point':
        target = _vector(spec['y'], model.d, 'target.y')
    elif spec['kind'] == 'segment':
        target = build_segment(spec['segment'], ctx.params, model.d)
    else:
        raise ConfigError('Квазипотенциал определён для целей point и segment.', code='invalid_target')
    qp = quasipotential(model, target, p['T_list'], start, seed=ctx.seed, **rate_options(p))
    outcome = ExperimentOutcome(qp.to_dict(), {'curve': qp.curve})
    if qp.feasible:
        best = next(res for res, item in zip(qp.results, qp.curve) if item['T'] == qp.T_star)
        outcome.tables.update(_rate_tables(best))
    else:
        outcome.failure = 'infeasible'
        outcome.failure_detail = 'Ни один горизонт из T_list не дал допустимого решения.'
    return outcome


def _ldp_start(spec, burn_in, params, d):
    if burn_in is not None:
        return Start(build_segment(spec.get('xi'), params, d, -burn_in), 0.0, burn_in)
    t0 = spec.get('t0', 0.0)
    return Start(build_segment(spec.get('xi'), params, d, t0), t0)


def _rate_start_for(start):
    if start.burn_in is not None:
        return StationaryStart(start.xi, start.burn_in)
    return FromInitial(start.xi, start.t0)


def run_ldp_slope(ctx):
    p = ctx.options
    model = ctx.model
    start = _ldp_start(p.get('start', {}), p.get('burn_in'), ctx.params, model.d)
    spec = p['event']
    cfg = SimConfig(h=ctx.h, T=spec['T'], t0=start.t_begin, seed=ctx.seed)
    reference = None
    if spec['kind'] == 'path_tube':
        reference = integrate_skeleton(model, start.xi, None, cfg)
    event = EventSpec(
        kind=spec['kind'],
        T=spec['T'],
        center=None if spec.get('center') is None else _vector(spec['center'], model.d, 'event.center'),
        radius=math.inf if spec.get('radius') is None else spec['radius'],
        threshold=spec.get('threshold'),
        reference=reference,
    )
    # Прогноз функции действия: попасть в центр шара, на порог вдоль первой оси или пройти по скелету
    if event.kind == 'terminal_ball':
        target = TerminalPoint(event.center, event.T)
    elif event.kind == 'terminal_exceed':
        y = np.zeros(model.d)
        y[0] = event.threshold
        target = TerminalPoint(y, event.T)
    else:
        target = FullPath(reference)
    problem = RateProblem(model, _rate_start_for(start), target, seed=ctx.seed, **rate_options(p))
    rate_pred = minimize_rate(problem)
    if not rate_pred.feasible:
        outcome = ExperimentOutcome({'rate': rate_pred.to_dict()}, _rate_tables(rate_pred))
        outcome.failure = 'infeasible'
        outcome.failure_detail = 'Прогноз функции действия для события недопустим.'
        return outcome
    report = ldp_slope(model, start, event, p['eps_list'], p['n_per_eps'], rate_pred, cfg, tol=p['slope_tol'],
                       threads=ctx.threads)
    if not report.passed:
        logger.warning('Экстраполяция ε·log p̂ разошлась с −I: %s против %s', report.intercept, report.target)
    tables = {'estimates': [estimate.to_dict() for estimate in report.estimates], 'bands': report.bands}
    tables.update(_rate_tables(rate_pred))
    return ExperimentOutcome({'slope': report.to_dict(), 'rate': rate_pred.to_dict()}, tables)


def run_variational_check(ctx):
    p = ctx.options
    reports = []
    for i, case in enumerate(p.get('cases') or DEFAULT_VARIATIONAL_CASES):
        case = {**FUNCTIONAL_CASE_DEFAULTS, **case}
        functional = FunctionalSpec(case['kind'], tuple(case['coeffs']), case['lower'], case['upper'])
        reports.append(variational_check(functional, case['T'], case['k'], n_mc=p['n_mc'],
                                         seed=ctx.seed + i, tol=p['tol']))
    rows = [report.to_dict() for report in reports]
    result = {
        'cases': rows,
        'one_sided_ok': all(report.one_sided_ok for report in reports),
        'equality_ok': all(report.equality_ok for report in reports if report.exact_equality),
    }
    return ExperimentOutcome(result, {'cases': [{k: v for k, v in row.items() if k != 'v_opt'} for row in rows]})


def run_check_model(ctx):
    p = ctx.options
    model = ctx.model
    report = dissipativity_report(model, ctx.params.r, p['eps'], n_samples=p['n_samples'], seed=ctx.seed,
                                  params=ctx.params)
    result = {'report': report.to_dict(), 'model': model.to_dict(), 'memory': ctx.params.to_dict()}
    outcome = ExperimentOutcome(result)
    if not report.stable:
        outcome.failure = 'unstable'
        outcome.failure_detail = (f'Условие диссипативности нарушено при eps = {p["eps"]}: '
                                  f'запас {report.margin:.6g} ≤ 0.')
        outcome.margin = report.margin
    return outcome


def run_bounds(ctx):
    p = ctx.options
    model = ctx.model
    xi = build_segment(p.get('xi'), ctx.params, model.d)
    cfg = SimConfig(h=ctx.h, T=p['T'], t0=0.0, seed=ctx.seed)
    if p.get('eps_list'):
        control = build_control(p.get('control'), model.m, ctx.h) or Control.zeros(0.0, p['T'], ctx.h, model.m)
        moments = controlled_moment_bounds(model, xi, p['eps_list'], control, cfg, p['n_replicas'],
                                           bound_factor=p['bound_factor'], threads=ctx.threads)
        result = {'moments': moments.to_dict()}
        positive = [eps for eps in p['eps_list'] if eps > 0]
        if len(positive) >= 2:
            result['convergence'] = skeleton_convergence(model, xi, positive, control, cfg, p['n_replicas'],
                                                         threads=ctx.threads).to_dict()
        rows = [{'eps': eps, 'sup_mean_norm': a, 'sup_moment_32': b}
                for eps, a, b in zip(moments.eps_values, moments.sup_mean_norm, moments.sup_moment_32)]
        return ExperimentOutcome(result, {'moments': rows})
    xi2 = build_segment(p['xi2'], ctx.params, model.d) if p.get('xi2') else None
    report = empirical_bounds(model, xi, p['eps'], cfg, p['n_replicas'], xi2=xi2, threads=ctx.threads)
    return ExperimentOutcome(report.to_dict(), {'bounds': report.to_rows()})


EXPERIMENTS = {
    'simulate': run_simulate,
    'pullback': run_pullback,
    'stationarity': run_stationarity,
    'rate': run_rate,
    'quasipotential': run_quasipotential,
    'ldp-slope': run_ldp_slope,
    'variational-check': run_variational_check,
    'check-model': run_check_model,
    'bounds': run_bounds,
}
