"""
Семейство коэффициентов уравнения с бесконечным запаздыванием:

    b(φ) = −A·φ(0) + B·∫φ dμ1 + f(φ(0)),
    σ(φ) = Σ0 + Σ1·∫φ dμ2,

где Σ1 действует на вектор ∫φ dμ2 как тензор формы (d, m, d).

Здесь же считаются константы диссипативности λ1, λ2, λ3 и запас устойчивости.
"""

from dataclasses import dataclass, field
from functools import cached_property
import logging
import math

import numpy as np

from .exceptions import ConfigError, DivergentMomentError, ModelRefusalError
from .fading_memory import (
    DelayMeasure, MemoryParams, Segment, choose_window, delay_quadrature, measure_moment,
)

logger = logging.getLogger(__name__)


def _zero(x, amplitude):
    return np.zeros_like(x)


def _tanh(x, amplitude):
    return amplitude * np.tanh(x)


def _saturated_cubic(x, amplitude):
    clipped = np.clip(x, -1.0, 1.0)
    return amplitude * (clipped - clipped ** 3 / 3.0)


# name -> (функция, константа Липшица, односторонняя константа), обе на единицу амплитуды
NONLINEARITIES = {
    'zero': (_zero, lambda a: 0.0, lambda a: 0.0),
    'tanh': (_tanh, abs, lambda a: max(a, 0.0)),
    'saturated-cubic': (_saturated_cubic, abs, lambda a: max(a, 0.0)),
}


@dataclass(frozen=True)
class Nonlinearity:
    name: str = 'zero'
    amplitude: float = 0.0

    def __post_init__(self):
        if self.name not in NONLINEARITIES:
            raise ConfigError(
                f'Неизвестная нелинейность «{self.name}». Доступны: {", ".join(sorted(NONLINEARITIES))}.')

    def __call__(self, x):
        return NONLINEARITIES[self.name][0](x, self.amplitude)

    @property
    def lipschitz(self):
        return float(NONLINEARITIES[self.name][1](self.amplitude))

    @property
    def one_sided(self):
        # sup (x − y)·(f(x) − f(y))/|x − y|² для покоординатно монотонных f
        return float(NONLINEARITIES[self.name][2](self.amplitude))

    @property
    def is_zero(self):
        return self.name == 'zero' or self.amplitude == 0


def _as_matrix(value, shape, name):
    array = np.array(value, dtype=float)
    if array.shape != shape:
        raise ConfigError(f'{name}: ожидалась форма {shape}, получено {array.shape}.')
    if not np.all(np.isfinite(array)):
        raise ConfigError(f'{name}: матрица содержит нечисловые значения.')
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class CoefficientModel:
    d: int
    m: int
    A: np.ndarray
    B: np.ndarray
    mu1: DelayMeasure
    mu2: DelayMeasure
    Sigma0: np.ndarray
    Sigma1: np.ndarray | None = None
    nonlinearity: Nonlinearity = field(default_factory=Nonlinearity)
    name: str = 'affine'

    def __post_init__(self):
        d, m = self.d, self.m
        if d < 1 or m < 1:
            raise ConfigError('Размерности d и m должны быть положительными.')
        object.__setattr__(self, 'A', _as_matrix(self.A, (d, d), 'A'))
        object.__setattr__(self, 'B', _as_matrix(self.B, (d, d), 'B'))
        object.__setattr__(self, 'Sigma0', _as_matrix(self.Sigma0, (d, m), 'Sigma0'))
        sigma1 = np.zeros((d, m, d)) if self.Sigma1 is None else self.Sigma1
        object.__setattr__(self, 'Sigma1', _as_matrix(sigma1, (d, m, d), 'Sigma1'))
        if np.linalg.eigvalsh(self.A_sym)[0] <= 0:
            raise ConfigError('Симметричная часть A должна быть положительно определённой.')

    @cached_property
    def A_sym(self):
        return 0.5 * (self.A + self.A.T)

    @cached_property
    def norm_B(self):
        return float(np.linalg.norm(self.B, 2))

    @cached_property
    def norm_Sigma1(self):
        return float(np.linalg.norm(self.Sigma1.reshape(self.d * self.m, self.d), 2))

    @property
    def additive(self):
        return not np.any(self.Sigma1)

    # Константы диссипативности

    @cached_property
    def lambda1(self):
        lam_min = float(np.linalg.eigvalsh(self.A_sym)[0])
        return lam_min - 0.5 * self.norm_B - self.nonlinearity.one_sided

    @cached_property
    def lambda2(self):
        return 0.5 * self.norm_B

    @cached_property
    def lambda3(self):
        return self.norm_Sigma1 ** 2

    def moments(self, r):
        """Моменты μ1^{(2r)} и μ2^{(2r)}; расходящийся момент при нулевой константе даёт inf."""
        return (self._moment(self.mu1, r, self.lambda2), self._moment(self.mu2, r, self.lambda3))

    @staticmethod
    def _moment(mu, r, weight):
        try:
            return measure_moment(mu, 2.0 * r)
        except DivergentMomentError:
            if weight > 0:
                raise
            return math.inf

    def _delay_terms(self, r, eps):
        mu1, mu2 = self.moments(r)
        drift = 2.0 * self.lambda2 * mu1 if self.lambda2 > 0 else 0.0
        noise = eps * self.lambda3 * mu2 if self.lambda3 > 0 and eps > 0 else 0.0
        return drift, noise

    def margin(self, r, eps):
        drift, noise = self._delay_terms(r, eps)
        return 2.0 * self.lambda1 - drift - noise

    def lambda_max(self, r, eps):
        return min(self.margin(r, eps), 2.0 * r)

    def eps0(self, r):
        drift, noise = self._delay_terms(r, 1.0)
        if noise == 0:
            return 1.0
        return min((2.0 * self.lambda1 - drift) / noise - 1.0, 1.0)

    def lipschitz_constant(self, r):
        """Константа c_k условия Липшица для сноса в норме C_r."""
        return (float(np.linalg.norm(self.A, 2)) + self.norm_B * measure_moment(self.mu1, r)
                + self.nonlinearity.lipschitz)

    def require_stable(self, r, eps):
        margin = self.margin(r, eps)
        if margin <= 0:
            raise ModelRefusalError(
                f'Условие диссипативности нарушено при eps = {eps}: запас {margin:.6g} ≤ 0.',
                margin=margin)
        return margin

    def default_step(self):
        depths = [-lag for mu in (self.mu1, self.mu2) for lag, weight in mu.atoms if weight > 0 and lag < 0]
        if not depths:
            return 0.01
        return min(0.01, max(depths) / 10.0)

    def memory_params(self, r, h=None, tail_tol=1e-6, norm_bound=1.0, L=None):
        h = self.default_step() if h is None else h
        if L is None:
            L = choose_window(r, norm_bound, [self.mu1, self.mu2], tail_tol, h)
        return MemoryParams(r=r, h=h, L=L, tail_tol=tail_tol)

    def bind(self, params):
        return BoundModel(self, params)

    def to_dict(self):
        return {
            'name': self.name,
            'd': self.d,
            'm': self.m,
            'A': self.A.tolist(),
            'B': self.B.tolist(),
            'sigma0': self.Sigma0.tolist(),
            'sigma1': self.Sigma1.tolist(),
            'nonlinearity': {'name': self.nonlinearity.name, 'amplitude': self.nonlinearity.amplitude},
            'mu1': self.mu1.to_dict(),
            'mu2': self.mu2.to_dict(),
        }


class BoundModel:
    """Коэффициенты модели, привязанные к сетке памяти и векторизованные по репликам."""

    def __init__(self, model, params):
        self.model = model
        self.params = params
        self.quad1 = delay_quadrature(model.mu1, params)
        self.quad2 = delay_quadrature(model.mu2, params)
        self._has_delay = bool(np.any(model.B))

    def drift(self, window, tail):
        """window: (n_lags + 1, n_rep, d), tail: (n_rep, d) -> (n_rep, d)."""
        model = self.model
        head = window[0]
        out = -head @ model.A.T
        if self._has_delay:
            out = out + self.quad1.apply(window, tail, 1) @ model.B.T
        if not model.nonlinearity.is_zero:
            out = out + model.nonlinearity(head)
        return out

    def diffusion(self, window, tail):
        """-> (n_rep, d, m)."""
        model = self.model
        n_rep = tail.shape[0]
        if model.additive:
            return np.broadcast_to(model.Sigma0, (n_rep, model.d, model.m))
        z = self.quad2.apply(window, tail, 1)
        return model.Sigma0 + np.einsum('ijk,nk->nij', model.Sigma1, z)


def _single(segment, model):
    if segment.d != model.d:
        raise ConfigError(f'Размерность сегмента {segment.d} не совпадает с размерностью модели {model.d}.')
    return segment.values[:, None, :], segment.tail_coeff[None, :]


def eval_drift(model, segment):
    window, tail = _single(segment, model)
    return model.bind(segment.params).drift(window, tail)[0]


def eval_diffusion(model, segment):
    window, tail = _single(segment, model)
    return np.array(model.bind(segment.params).diffusion(window, tail)[0])


@dataclass
class DissipativityReport:
    lambda1: float
    lambda2: float
    lambda3: float
    mu1_moment: float
    mu2_moment: float
    r: float
    eps: float
    margin: float
    lambda_max: float
    eps0: float
    stable: bool
    lipschitz_constant: float
    empirical_lambda1: float | None = None
    empirical_lambda2: float | None = None
    empirical_lambda3: float | None = None
    empirical_lipschitz: float | None = None
    n_samples: int = 0
    consistent: bool = True

    def margin_at(self, eps):
        drift = 2.0 * self.lambda2 * self.mu1_moment if self.lambda2 > 0 else 0.0
        noise = eps * self.lambda3 * self.mu2_moment if self.lambda3 > 0 and eps > 0 else 0.0
        return 2.0 * self.lambda1 - drift - noise

    def lambda_max_at(self, eps):
        return min(self.margin_at(eps), 2.0 * self.r)

    def stable_at(self, eps):
        return self.margin_at(eps) > 0

    def admissible_lambda(self, eps, fraction=0.5):
        """Скорость λ ∈ (0, λ_max(eps)), для которой выполнены оценки сжатия."""
        lam = self.lambda_max_at(eps)
        if lam <= 0:
            raise ModelRefusalError(f'Нет допустимой скорости при eps = {eps}.', margin=self.margin_at(eps))
        return fraction * lam

    def to_dict(self):
        return dict(self.__dict__)


def _empirical_constants(model, params, n_samples, seed):
    rng = np.random.default_rng(seed)
    n_lags = params.n_lags
    bound = model.bind(params)
    scale = np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=n_samples))
    shape = (n_lags + 1, n_samples, model.d)
    phi = rng.standard_normal(shape) * scale[None, :, None]
    psi = rng.standard_normal(shape) * scale[None, :, None]
    zero_tail = np.zeros((n_samples, model.d))

    delta = phi - psi
    delta_head = delta[0]
    delta_b = bound.drift(phi, zero_tail) - bound.drift(psi, zero_tail)
    delta_sigma = (np.asarray(bound.diffusion(phi, zero_tail))
                   - np.asarray(bound.diffusion(psi, zero_tail)))
    head_sq = np.sum(delta_head ** 2, axis=-1)
    inner = np.sum(delta_head * delta_b, axis=-1)
    int1 = bound.quad1.apply(delta, zero_tail, 2)
    int2 = bound.quad2.apply(delta, zero_tail, 2)
    sigma_sq = np.sum(delta_sigma ** 2, axis=(1, 2))
    weighted = np.max(params.weights[:, None] * np.linalg.norm(delta, axis=-1), axis=0)
    b_norm = np.linalg.norm(delta_b, axis=-1)

    positive_head = head_sq > 0
    lam1 = float(np.min((-inner + model.lambda2 * int1)[positive_head] / head_sq[positive_head]))
    positive_int1 = int1 > 1e-300
    lam2 = float(np.max((inner + model.lambda1 * head_sq)[positive_int1] / int1[positive_int1])) \
        if np.any(positive_int1) else 0.0
    positive_int2 = int2 > 1e-300
    lam3 = float(np.max(sigma_sq[positive_int2] / int2[positive_int2])) if np.any(positive_int2) else 0.0
    lip = float(np.max(b_norm / weighted))
    return lam1, lam2, lam3, lip


def dissipativity_report(model, r, eps, n_samples=1000, seed=0, params=None):
    """
    Аналитические константы диссипативности и их выборочная проверка
    на случайных парах сегментов.
    """
    if eps < 0:
        raise ConfigError(f'eps должно быть неотрицательным, получено {eps}.')
    mu1, mu2 = model.moments(r)
    margin = model.margin(r, eps)
    report = DissipativityReport(
        lambda1=model.lambda1,
        lambda2=model.lambda2,
        lambda3=model.lambda3,
        mu1_moment=mu1,
        mu2_moment=mu2,
        r=r,
        eps=eps,
        margin=margin,
        lambda_max=min(margin, 2.0 * r),
        eps0=model.eps0(r),
        stable=margin > 0,
        lipschitz_constant=model.lipschitz_constant(r),
    )
    if n_samples > 0:
        if params is None:
            params = model.memory_params(r)
        lam1, lam2, lam3, lip = _empirical_constants(model, params, n_samples, seed)
        report.empirical_lambda1 = lam1
        report.empirical_lambda2 = lam2
        report.empirical_lambda3 = lam3
        report.empirical_lipschitz = lip
        report.n_samples = n_samples
        tol = 1e-6
        report.consistent = (
            lam1 >= model.lambda1 - tol * (1.0 + abs(model.lambda1))
            and lam2 <= model.lambda2 + tol * (1.0 + model.lambda2)
            and lam3 <= model.lambda3 + tol * (1.0 + model.lambda3)
            and lip <= report.lipschitz_constant * (1.0 + tol) + tol
        )
        if not report.consistent:
            logger.warning('Выборочные константы противоречат аналитическим: %s', report.to_dict())
    logger.info('Запас диссипативности при eps=%s: %.6g (λ_max = %.6g)', eps, margin, report.lambda_max)
    return report


def zero_segment(model, params):
    return Segment.zeros(model.d, params)


def affine_model(A, B, sigma0, mu1=None, mu2=None, sigma1=None, nonlinearity=None, name='affine'):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    sigma0 = np.asarray(sigma0, dtype=float)
    d = A.shape[0]
    if sigma0.ndim < 2:
        sigma0 = np.atleast_2d(sigma0).reshape(d, -1)
    return CoefficientModel(
        d=d,
        m=sigma0.shape[1],
        A=A,
        B=np.atleast_2d(np.asarray(B, dtype=float)),
        mu1=mu1 or DelayMeasure.atom(0.0),
        mu2=mu2 or DelayMeasure.atom(0.0),
        Sigma0=sigma0,
        Sigma1=None if sigma1 is None else np.asarray(sigma1, dtype=float).reshape(d, sigma0.shape[1], d),
        nonlinearity=nonlinearity or Nonlinearity(),
        name=name,
    )

