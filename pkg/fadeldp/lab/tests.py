# Тесты численной лаборатории fadeldp: память, схемы, pull-back, функция действия,
# большие уклонения, конфигурация и командная строка.

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TransactionTestCase, tag
from rest_framework.exceptions import ValidationError as DRFValidationError
from io import StringIO
from pathlib import Path
import inspect
import json
import math
import tempfile

import numpy as np
from scipy import stats
from scipy.integrate import solve_ivp

from .artifacts import config_hash, read_path_binary
from .coefficients import Nonlinearity, affine_model, dissipativity_report, eval_diffusion, eval_drift
from .exceptions import (
    BurnInError, ConfigError, DivergenceError, DivergentMomentError, InfeasibleRateError,
    InsufficientReplicasError, InvalidMeasureError, InvalidSegmentError, ModelRefusalError,
    UnsupportedError, handle_exception,
)
from .experiments import build_model
from .fading_memory import (
    DelayMeasure, MemoryParams, PathOnGrid, Segment, choose_window, cr_norm, delay_integral,
    measure_moment, path_norm, segment_norms, shift_segment, tail_moment,
)
from .ldp_harness import EventSpec, FunctionalSpec, Start, ldp_slope, rare_event_mc, tilted_mc, variational_check
from .models import ExperimentRun, SweepCache
from .pullback import controlled_pullback_uniform, pullback_solve, skeleton_pullback, stationarity_test
from .rate import (
    FromInitial, RateProblem, StationaryStart, TerminalPoint, continuity_probe, contraction_project,
    direct_rate, minimize_rate, quasipotential, require_feasible,
)
from .runner import parse_config, prepare_config
from .scenarios import scenario_config
from .serializers import LdpSlopeParamsSerializer
from .simulate import (
    Control, PathBatch, SimConfig, controlled_moment_bounds, empirical_bounds, grid_increments, integrate_skeleton,
    sample_wiener, shift_wiener, simulate_batch, skeleton_convergence,
)


def delay_oracle(a, b, tau, history, T):
    """Метод шагов для y' = −a·y(t) + b·y(t − τ) с постоянной историей; возвращает t -> y(t)."""
    pieces = []

    def value(t):
        if t <= 0.0:
            return history
        for start, end, sol in pieces:
            if start <= t <= end + 1e-12:
                return float(sol(min(t, end))[0])
        raise ValueError(f'Момент {t} вне уже решённых отрезков.')

    start, y0 = 0.0, history
    while start < T - 1e-12:
        end = min(start + tau, T)
        sol = solve_ivp(lambda t, y: [-a * y[0] + b * value(t - tau)], (start, end), [y0],
                        method='DOP853', rtol=1e-12, atol=1e-14, dense_output=True)
        pieces.append((start, end, sol.sol))
        start, y0 = end, float(sol.y[0, -1])
    return value


def euler_ou_variance(eps, h, n_steps):
    """Точная дисперсия схемы Эйлера для dY = −Y dt + √ε dW из нуля."""
    q = (1.0 - h) ** 2
    return eps * h * (1.0 - q ** n_steps) / (1.0 - q)


# ВСПОМОГАТЕЛЬНЫЕ МИКСИНЫ

class ModelMixin:
    """Модели встроенных сценариев и сетки памяти."""

    @classmethod
    def scenario_model(cls, name):
        return build_model(scenario_config(name)['model'])

    @classmethod
    def unstable_model(cls):
        # Запаздывание без сдвига сильнее сноса: запас диссипативности отрицательный
        return affine_model([[1.0]], [[2.0]], [[1.0]], name='unstable')

    @classmethod
    def random_history(cls, params, n_steps, n_paths, keep_lags, seed=0):
        """
        Истории случайных путей формы (n_lags + 1 + n_steps, n_paths, 1).

        Начальный сегмент обнуляется глубже keep_lags, поэтому за n_steps
        шагов из окна выпадают только нули и хвосты остаются нулевыми.
        """
        rng = np.random.default_rng(seed)
        initial = rng.standard_normal((params.n_lags + 1, n_paths, 1))
        initial[keep_lags + 1:] = 0.0
        states = rng.standard_normal((n_steps, n_paths, 1))
        return np.concatenate([initial[::-1], states])


# 1. ПРОСТРАНСТВО ПАМЯТИ И МЕРЫ ЗАПАЗДЫВАНИЯ

class MemoryParamsTest(SimpleTestCase):
    """Параметры сетки памяти."""

    def test_rejects_nonpositive_r(self):
        """r ≤ 0 недопустимо."""
        with self.assertRaises(ConfigError):
            MemoryParams(r=0.0, h=0.01, L=1.0)

    def test_rejects_window_not_multiple_of_step(self):
        """Окно должно быть кратно шагу."""
        with self.assertRaises(ConfigError):
            MemoryParams(r=1.0, h=0.01, L=0.015)

    def test_grid_and_weights(self):
        """Лаги 0, −h, …, −L и веса e^{rτ}."""
        params = MemoryParams(r=2.0, h=0.1, L=1.0)
        self.assertEqual(params.n_lags, 10)
        self.assertAlmostEqual(params.lags[-1], -1.0, places=12)
        np.testing.assert_allclose(params.weights, np.exp(2.0 * params.lags), rtol=1e-15)


class SegmentNormTest(SimpleTestCase):
    """Сегменты и норма ‖·‖_r."""

    def setUp(self):
        self.params = MemoryParams(r=1.0, h=0.01, L=1.0)

    def test_constant_segment_norm(self):
        """Норма постоянного сегмента равна модулю константы."""
        self.assertAlmostEqual(cr_norm(Segment.constant([-3.0, 4.0], self.params)), 5.0, places=12)

    def test_exponential_profile_has_unit_norm(self):
        """φ(τ) = e^{−rτ} выравнивается весами до единицы."""
        segment = Segment.from_function(lambda tau: math.exp(-tau), self.params)
        self.assertAlmostEqual(cr_norm(segment), 1.0, places=12)

    def test_tail_larger_than_grid_is_rejected(self):
        """Хвост, превышающий взвешенную часть сетки, не принадлежит C_r."""
        values = np.zeros(self.params.n_lags + 1)
        with self.assertRaises(InvalidSegmentError):
            Segment(0.0, values, [1.0], self.params)

    def test_wrong_window_length_is_rejected(self):
        """Число значений должно совпадать с числом узлов окна."""
        with self.assertRaises(InvalidSegmentError):
            Segment(0.0, np.zeros(5), [0.0], self.params)

    def test_segment_is_immutable(self):
        """Значения сегмента доступны только для чтения."""
        segment = Segment.constant(1.0, self.params)
        with self.assertRaises(ValueError):
            segment.values[0, 0] = 2.0

    def test_shift_moves_head_and_absorbs_tail(self):
        """Сдвиг на h: новое значение в голове, выпавший узел уходит в хвост."""
        segment = Segment.constant(1.0, self.params)
        shifted = shift_segment(segment, [0.5])
        self.assertEqual(shifted.head[0], 0.5)
        np.testing.assert_array_equal(shifted.values[1:], segment.values[:-1])
        gain = self.params.h / self.params.L
        expected = gain * math.exp(-self.params.r * (self.params.L + self.params.h))
        self.assertAlmostEqual(float(shifted.tail_coeff[0]), expected, places=15)
        self.assertAlmostEqual(shifted.head_time, self.params.h, places=15)

    def test_value_at_interpolates_and_uses_tail(self):
        """Линейная интерполяция на окне и экспоненциальный хвост за ним."""
        segment = Segment(0.0, -self.params.lags, [0.3], self.params)
        self.assertAlmostEqual(float(segment.value_at(-0.015)[0]), 0.015, places=12)
        self.assertAlmostEqual(float(segment.value_at(-2.0)[0]), 0.3 * math.exp(2.0), places=12)
        with self.assertRaises(InvalidSegmentError):
            segment.value_at(0.5)


class NormInequalityTest(SimpleTestCase, ModelMixin):
    """Неравенства для норм сегментов на 10³ случайных путях."""

    n_paths = 1000
    n_steps = 40

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.params = MemoryParams(r=1.0, h=0.05, L=5.0)
        cls.history = cls.random_history(cls.params, cls.n_steps, cls.n_paths,
                                         keep_lags=cls.params.n_lags - cls.n_steps, seed=11)
        tails = np.zeros((cls.n_steps + 1, cls.n_paths, 1))
        cls.norms = segment_norms(cls.history, tails, cls.params)
        cls.times = cls.params.h * np.arange(cls.n_steps + 1)
        cls.states = cls.history[cls.params.n_lags:, :, 0]

    def test_batch_norms_match_path_on_grid(self):
        """Векторные нормы совпадают с нормами сегментов PathOnGrid."""
        n_lags = self.params.n_lags
        initial = Segment(0.0, self.history[:n_lags + 1, 0][::-1], [0.0], self.params)
        path = PathOnGrid(0.0, self.params.h, initial, self.history[n_lags:, 0])
        np.testing.assert_allclose(path.segment_norms(), self.norms[:, 0], rtol=1e-14)
        np.testing.assert_array_equal(path.tails, 0.0)
        t = float(self.times[17])
        self.assertAlmostEqual(cr_norm(path.segment_at(t)), self.norms[17, 0], places=14)

    def test_norm_shift_bound(self):
        """‖φ_t‖² ≤ e^{2r(T−t)}·‖φ_T‖² для всех узлов t ≤ T."""
        T = self.times[-1]
        factors = np.exp(2.0 * self.params.r * (T - self.times))[:, None]
        rhs = factors * self.norms[-1][None, :] ** 2
        self.assertTrue(np.all(self.norms ** 2 <= rhs * (1.0 + 1e-10)))

    def test_norm_split_bound(self):
        """‖φ_t‖² ≤ e^{−2rt}‖φ_0‖² + e^{−λt}·sup_{s≤t} e^{λs}|φ(s)|² при 0 < λ ≤ 2r."""
        r = self.params.r
        for lam in (0.5, 1.0, 2.0):
            running = np.maximum.accumulate(np.exp(lam * self.times)[:, None] * self.states ** 2, axis=0)
            rhs = (np.exp(-2.0 * r * self.times)[:, None] * self.norms[0][None, :] ** 2
                   + np.exp(-lam * self.times)[:, None] * running)
            self.assertTrue(np.all(self.norms ** 2 <= rhs * (1.0 + 1e-10)), msg=f'λ = {lam}')

    def test_measure_integral_inequality(self):
        """∫∫ e^{λs}|φ(s+τ)|²μ(dτ)ds ≤ μ^{(2r)}/(2r−λ)·‖φ_0‖² + μ^{(2r)}∫ e^{λs}|φ(s)|²ds."""
        r, h = self.params.r, self.params.h
        n_lags = self.params.n_lags
        mu = DelayMeasure(atoms=((0.0, 0.5), (-0.5, 0.3), (-2.0, 0.2)))
        moment = measure_moment(mu, 2.0 * r)
        s = h * np.arange(self.n_steps)
        for lam in (0.5, 1.0, 1.9):
            discount = np.exp(lam * s)[:, None]
            lhs = np.zeros(self.n_paths)
            for lag, weight in mu.atoms:
                shift = int(round(-lag / h))
                shifted = self.history[n_lags - shift:n_lags - shift + self.n_steps, :, 0]
                lhs += weight * h * np.sum(discount * shifted ** 2, axis=0)
            # Левая сумма Римана завышает ∫ e^{−(2r−λ)s} ds не более чем в (1 + (2r−λ)h) раз
            quadrature = 1.0 + (2.0 * r - lam) * h
            rhs = (moment / (2.0 * r - lam) * quadrature * self.norms[0] ** 2
                   + moment * h * np.sum(discount * self.states[:-1] ** 2, axis=0))
            self.assertTrue(np.all(lhs <= rhs * (1.0 + 1e-10)), msg=f'λ = {lam}')


class DelayMeasureTest(SimpleTestCase):
    """Меры запаздывания, моменты и квадратуры."""

    def test_moments_match_closed_forms(self):
        """μ^{(κ)} для атома, плотности и их смеси."""
        atom = DelayMeasure.atom(-0.1)
        self.assertAlmostEqual(measure_moment(atom, 2.0) / math.exp(0.2), 1.0, delta=1e-12)
        density = DelayMeasure.exponential(5.0)
        self.assertAlmostEqual(measure_moment(density, 2.0) / (5.0 / 3.0), 1.0, delta=1e-12)
        mixed = DelayMeasure.exponential(5.0, atoms=((-0.1, 0.5),))
        expected = 0.5 * math.exp(0.2) + 0.5 * 5.0 / 3.0
        self.assertAlmostEqual(measure_moment(mixed, 2.0) / expected, 1.0, delta=1e-12)
        self.assertAlmostEqual(measure_moment(mixed, 0.0), 1.0, delta=1e-12)

    def test_divergent_moment(self):
        """β ≤ κ: момент расходится."""
        with self.assertRaises(DivergentMomentError):
            measure_moment(DelayMeasure.exponential(2.0), 2.0)

    def test_invalid_measures(self):
        """Масса не 1, атом справа от нуля и отрицательный вес отклоняются."""
        with self.assertRaises(InvalidMeasureError):
            DelayMeasure(atoms=((0.0, 0.5),))
        with self.assertRaises(InvalidMeasureError):
            DelayMeasure(atoms=((0.1, 1.0),))
        with self.assertRaises(InvalidMeasureError):
            DelayMeasure(atoms=((0.0, 1.5), (-1.0, -0.5)))

    def test_integral_of_constant_segment(self):
        """∫ c dμ без хвоста теряет только массу за окном: c·(1 − e^{−βL})."""
        params = MemoryParams(r=1.0, h=0.01, L=2.0)
        segment = Segment.constant(3.0, params)
        density = DelayMeasure.exponential(5.0)
        expected = 3.0 * (1.0 - math.exp(-10.0))
        self.assertAlmostEqual(float(delay_integral(segment, density)[0]) / expected, 1.0, delta=1e-12)
        self.assertAlmostEqual(delay_integral(segment, density, power=2) / (3.0 * expected), 1.0, delta=1e-12)
        self.assertAlmostEqual(float(delay_integral(segment, DelayMeasure.atom(-0.1))[0]), 3.0, places=12)

    def test_atom_between_nodes_is_interpolated(self):
        """Атом между узлами сетки раскладывается на соседние узлы."""
        params = MemoryParams(r=1.0, h=0.01, L=0.1)
        segment = Segment.from_function(lambda tau: tau, params)
        value = float(delay_integral(segment, DelayMeasure.atom(-0.015))[0])
        self.assertAlmostEqual(value, -0.015, places=12)

    def test_jensen_inequality(self):
        """|∫φ dμ|² ≤ ∫|φ|² dμ на случайных сегментах."""
        params = MemoryParams(r=1.0, h=0.05, L=3.0)
        mu = DelayMeasure.exponential(4.0, atoms=((0.0, 0.2), (-0.5, 0.3)))
        rng = np.random.default_rng(3)
        for _ in range(200):
            segment = Segment(0.0, rng.standard_normal((params.n_lags + 1, 2)), np.zeros(2), params)
            linear = delay_integral(segment, mu)
            self.assertLessEqual(float(np.dot(linear, linear)), delay_integral(segment, mu, power=2) + 1e-12)

    def test_window_choice_bounds_tail(self):
        """Выбранное окно — наименьшее кратное h с хвостом не больше допуска."""
        mu = DelayMeasure.exponential(5.0)
        L = choose_window(1.0, 1.0, [mu], 1e-6, 0.01)
        self.assertLessEqual(tail_moment(mu, 2.0, L), 1e-6)
        self.assertGreater(tail_moment(mu, 2.0, L - 0.01), 1e-6)
        self.assertAlmostEqual(L / 0.01, round(L / 0.01), places=9)

    def test_window_covers_deepest_atom(self):
        """Окно покрывает самый глубокий атом."""
        self.assertAlmostEqual(choose_window(1.0, 1.0, [DelayMeasure.atom(-0.3)], 1e-6, 0.01), 0.3, places=12)

    def test_truncated_path_norm(self):
        """|||Φ|||² для пути с единичными сегментами равна 1 − 2^{−n_max}."""
        params = MemoryParams(r=1.0, h=0.1, L=0.5)
        initial = Segment.constant(1.0, params)
        path = PathOnGrid(0.0, 0.1, initial, np.ones(31))
        value, remainder = path_norm(path, 3)
        self.assertAlmostEqual(value, 1.0 - 0.125, places=12)
        self.assertEqual(remainder, 0.125)
        with self.assertRaises(ConfigError):
            path_norm(path, 4)


# 2. КОЭФФИЦИЕНТЫ И ДИССИПАТИВНОСТЬ

class CoefficientModelTest(SimpleTestCase, ModelMixin):
    """Константы λ1, λ2, λ3 и запас устойчивости."""

    def test_delay_ou_margin(self):
        """delay-ou: запас 2λ1 − 2λ2·μ1^{(2r)} ≈ 2.889, λ_max = 2r = 2."""
        model = self.scenario_model('delay-ou')
        self.assertAlmostEqual(model.lambda1, 1.75, places=12)
        self.assertAlmostEqual(model.lambda2, 0.25, places=12)
        self.assertEqual(model.lambda3, 0.0)
        self.assertAlmostEqual(model.margin(1.0, 0.25), 3.5 - 0.5 * math.exp(0.2), places=12)
        self.assertAlmostEqual(model.margin(1.0, 0.25), 2.889, places=3)
        self.assertEqual(model.lambda_max(1.0, 0.25), 2.0)

    def test_multiplicative_margin_depends_on_eps(self):
        """Мультипликативный шум уменьшает запас на ε·λ3·μ2^{(2r)}."""
        model = self.scenario_model('multiplicative')
        self.assertAlmostEqual(model.lambda3, 0.01, places=12)
        report = dissipativity_report(model, 1.0, 0.0, n_samples=0)
        self.assertAlmostEqual(report.margin_at(0.5), report.margin - 0.5 * 0.01 * 5.0 / 3.0, places=12)
        self.assertTrue(report.stable_at(0.5))

    def test_moments_reported_for_zero_constants(self):
        """При λ2 = λ3 = 0 в отчёт всё равно пишутся сами моменты μ1^{(2r)}, μ2^{(2r)}."""
        model = self.scenario_model('ou')
        self.assertEqual(model.lambda2, 0.0)
        self.assertEqual(model.lambda3, 0.0)
        report = dissipativity_report(model, 1.0, 0.5, n_samples=0)
        self.assertAlmostEqual(report.mu1_moment, 1.0, places=12)
        self.assertAlmostEqual(report.mu2_moment, 1.0, places=12)
        self.assertAlmostEqual(report.margin, 2.0, places=12)
        delay = self.scenario_model('delay-ou')
        self.assertAlmostEqual(dissipativity_report(delay, 1.0, 0.25, n_samples=0).mu2_moment, 1.0, places=12)

    def test_empirical_constants_agree(self):
        """Выборочные константы не противоречат аналитическим."""
        model = self.scenario_model('delay-ou')
        report = dissipativity_report(model, 1.0, 0.25, n_samples=500, seed=1)
        self.assertTrue(report.stable)
        self.assertTrue(report.consistent)
        self.assertGreaterEqual(report.empirical_lambda1, model.lambda1 - 1e-9)
        self.assertLessEqual(report.empirical_lipschitz, report.lipschitz_constant * (1.0 + 1e-9))

    def test_unstable_model_is_refused(self):
        """Отрицательный запас: отчёт помечает модель, require_stable отказывает."""
        model = self.unstable_model()
        report = dissipativity_report(model, 1.0, 0.0, n_samples=0)
        self.assertFalse(report.stable)
        self.assertAlmostEqual(report.margin, -2.0, places=12)
        with self.assertRaises(ModelRefusalError) as ctx:
            model.require_stable(1.0, 0.0)
        self.assertAlmostEqual(ctx.exception.margin, -2.0, places=12)

    def test_drift_and_diffusion_evaluation(self):
        """b(φ) = −2φ(0) + 0.5φ(−0.1), σ(φ) = 0.2 + 0.1∫φ dμ2."""
        model = self.scenario_model('delay-ou')
        params = model.memory_params(1.0)
        segment = Segment.from_function(lambda tau: 1.0 + tau, params)
        self.assertAlmostEqual(float(eval_drift(model, segment)[0]), -2.0 + 0.45, places=12)

        mult = self.scenario_model('multiplicative')
        params = mult.memory_params(1.0)
        sigma = eval_diffusion(mult, Segment.constant(1.0, params))
        expected = 0.2 + 0.1 * (1.0 - math.exp(-5.0 * params.L))
        self.assertAlmostEqual(float(sigma[0, 0]), expected, places=12)

    def test_requires_positive_definite_a(self):
        """Симметричная часть A должна быть положительно определённой."""
        with self.assertRaises(ConfigError):
            affine_model([[-1.0]], [[0.0]], [[1.0]])

    def test_unknown_nonlinearity(self):
        """Нелинейность задаётся только из реестра."""
        with self.assertRaises(ConfigError):
            Nonlinearity('cubic', 1.0)


# 3. СХЕМЫ ИНТЕГРИРОВАНИЯ И ШУМ

class SchemeOrderTest(SimpleTestCase, ModelMixin):
    """Порядок сходимости Эйлера и Хойна на детерминированных задачах."""

    steps = (0.01, 0.005, 0.0025)

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.oracle = staticmethod(delay_oracle(2.0, 0.5, 0.1, 1.0, 1.0))
        cls.check_times = [0.01 * i for i in range(101)]

    def _errors(self, scheme):
        model = self.scenario_model('delay-ou')
        errors = []
        for h in self.steps:
            params = model.memory_params(1.0, h=h)
            cfg = SimConfig(h=h, T=1.0, scheme=scheme)
            path = integrate_skeleton(model, Segment.constant(1.0, params), None, cfg)
            errors.append(max(abs(float(path.value_at(t)[0]) - self.oracle(t)) for t in self.check_times))
        return errors

    def test_euler_first_order(self):
        """Эйлер: отношение ошибок при делении шага пополам 2.0 ± 0.2."""
        errors = self._errors('euler')
        for coarse, fine in zip(errors, errors[1:]):
            self.assertAlmostEqual(coarse / fine, 2.0, delta=0.2)

    def test_heun_second_order(self):
        """Хойн: отношение ошибок при делении шага пополам 4.0 ± 0.5."""
        errors = self._errors('heun')
        for coarse, fine in zip(errors, errors[1:]):
            self.assertAlmostEqual(coarse / fine, 4.0, delta=0.5)

    def test_euler_recursion_without_delay(self):
        """Без запаздывания Эйлер даёт (1 − h)^k."""
        model = self.scenario_model('ou')
        params = model.memory_params(1.0, h=0.01)
        path = integrate_skeleton(model, Segment.constant(1.0, params), None, SimConfig(h=0.01, T=1.0))
        np.testing.assert_allclose(path.states[:, 0], 0.99 ** np.arange(101), rtol=1e-12)

    def test_skeleton_with_constant_control(self):
        """y' = −y + 1 из нуля: y(1) = 1 − e^{−1}."""
        model = self.scenario_model('ou')
        params = model.memory_params(1.0, h=0.01)
        control = Control.from_function(lambda s: 1.0, 0.0, 1.0, 0.01, 1)
        cfg = SimConfig(h=0.01, T=1.0, scheme='heun')
        path = integrate_skeleton(model, Segment.zeros(1, params), control, cfg)
        self.assertAlmostEqual(float(path.value_at(1.0)[0]), 1.0 - math.exp(-1.0), delta=1e-4)

    def test_heun_rejected_for_stochastic_runs(self):
        """Схема Хойна только для ε = 0."""
        model = self.scenario_model('ou')
        params = model.memory_params(1.0)
        with self.assertRaises(ConfigError):
            simulate_batch(model, Segment.zeros(1, params), 0.5, SimConfig(h=params.h, T=1.0, scheme='heun'))


class NoiseTest(SimpleTestCase, ModelMixin):
    """Воспроизводимость и согласованность шума."""

    def test_forward_extension_keeps_increments(self):
        """Продление вправо не меняет уже выданных приращений."""
        short = grid_increments(7, 3, 0, 100, 2, 0.01)
        long = grid_increments(7, 3, 0, 200, 2, 0.01)
        np.testing.assert_array_equal(long[:100], short)

    def test_backward_extension_keeps_increments(self):
        """Продление влево не меняет уже выданных приращений."""
        short = grid_increments(7, 3, -50, 50, 1, 0.01)
        long = grid_increments(7, 3, -100, 100, 1, 0.01)
        np.testing.assert_array_equal(long[50:], short)
        both = grid_increments(7, 3, -50, 150, 1, 0.01)
        np.testing.assert_array_equal(both[:50], short)
        np.testing.assert_array_equal(both[50:], grid_increments(7, 3, 0, 100, 1, 0.01))

    def test_streams_are_independent_of_batch(self):
        """Реплика определяется номером потока, а не составом пачки."""
        model = self.scenario_model('delay-ou')
        params = model.memory_params(1.0)
        xi = Segment.constant(1.0, params)
        cfg = SimConfig(h=params.h, T=1.0, seed=5)
        full = simulate_batch(model, xi, 0.25, cfg, stream_ids=range(10))
        part = simulate_batch(model, xi, 0.25, cfg, stream_ids=range(5, 10))
        np.testing.assert_allclose(part.replica(0).states, full.replica(5).states, rtol=0.0, atol=1e-13)
        again = simulate_batch(model, xi, 0.25, cfg, stream_ids=range(10))
        np.testing.assert_array_equal(again.history, full.history)
        other = simulate_batch(model, xi, 0.25, cfg.replace(seed=6), stream_ids=range(10))
        self.assertFalse(np.allclose(other.history, full.history))

    def test_wiener_shift(self):
        """W(0) = 0 и θ_s W(t) = W(s + t) − W(s)."""
        wiener = sample_wiener(-1.0, 1.0, 0.01, 1, seed=2)
        np.testing.assert_array_equal(wiener.value_at(0.0), 0.0)
        shifted = shift_wiener(wiener, 0.5)
        for t in (-1.2, -0.3, 0.0, 0.4):
            expected = wiener.value_at(0.5 + t) - wiener.value_at(0.5)
            np.testing.assert_allclose(shifted.value_at(t), expected, rtol=0.0, atol=1e-12)

    def test_control_energy(self):
        """½∫|v|² для постоянного управления."""
        control = Control.from_function(lambda s: 2.0, 0.0, 1.0, 0.01, 1)
        self.assertAlmostEqual(control.energy, 2.0, places=10)
        self.assertTrue(control.in_ball(4.5))
        with self.assertRaises(ConfigError):
            Control(0.0, 1.0, 0.01, np.zeros(50))

    def test_blowup_raises_divergence(self):
        """Неустойчивая модель без проверки запаса уходит за порог."""
        model = affine_model([[0.1]], [[5.0]], [[1.0]])
        params = model.memory_params(1.0)
        with self.assertRaises(ModelRefusalError):
            simulate_batch(model, Segment.constant(1.0, params), 0.0, SimConfig(h=params.h, T=10.0))
        with self.assertRaises(DivergenceError) as ctx:
            simulate_batch(model, Segment.constant(1.0, params), 0.0, SimConfig(h=params.h, T=10.0),
                           check_stability=False)
        self.assertIsNotNone(ctx.exception.step)
        code, message, _ = handle_exception(ctx.exception)
        self.assertEqual(code, 4)


class EmpiricalBoundsTest(SimpleTestCase, ModelMixin):
    """Оценки моментов и сжатия на общем шуме."""

    def test_contraction_rate_on_ou(self):
        """Разность решений OU на общем шуме убывает со скоростью ≈ 2 в квадрате нормы."""
        model = self.scenario_model('ou')
        params = model.memory_params(1.0)
        cfg = SimConfig(h=params.h, T=3.0, seed=1)
        report = empirical_bounds(model, Segment.constant(1.0, params), 0.5, cfg, 50,
                                  xi2=Segment.constant(-1.0, params))
        self.assertEqual(report.lambda_max, 2.0)
        self.assertAlmostEqual(report.fitted_rate, 2.0, delta=0.1)
        self.assertGreater(report.r_squared, 0.999)
        self.assertTrue(np.all(np.isfinite(report.mean_sq_norm)))

    def test_controlled_moments_are_uniform(self):
        """sup_t E‖Y^{ε,v}_t‖_r не растёт при уменьшении ε."""
        model = self.scenario_model('delay-ou')
        params = model.memory_params(1.0)
        control = Control.from_function(lambda s: 0.5, 0.0, 2.0, params.h, 1)
        report = controlled_moment_bounds(model, Segment.constant(1.0, params), [0.0, 0.05, 0.2], control,
                                          SimConfig(h=params.h, T=2.0), 50)
        self.assertTrue(report.uniform)
        self.assertEqual(len(report.sup_moment_32), 3)


# 4. PULL-BACK И СТАЦИОНАРНОСТЬ

class PullbackTest(SimpleTestCase, ModelMixin):
    """Сходимость решений из удалённых стартов."""

    def test_deterministic_rate_recovers_a(self):
        """OU при ε = 0: скорость убывания разностей равна a = 1 с точностью 1%."""
        model = self.scenario_model('ou')
        params = model.memory_params(1.0)
        cfg = SimConfig(h=params.h, T=1.0)
        run = pullback_solve(model, Segment.constant(1.0, params), 0.0, (0.0, 1.0), [2, 4, 6, 8, 10], cfg)
        self.assertAlmostEqual(run.fitted_rate, 1.0, delta=0.01)
        self.assertGreater(run.r_squared, 0.999)
        self.assertAlmostEqual(run.limit_path.T, 1.0, places=12)

    def test_stochastic_differences_decay(self):
        """delay-ou при ε = 0.25: sup-разности убывают, скорость положительна."""
        model = self.scenario_model('delay-ou')
        params = model.memory_params(1.0)
        cfg = SimConfig(h=params.h, T=1.0, seed=3)
        run = pullback_solve(model, Segment.constant(1.0, params), 0.25, (0.0, 1.0), [2, 4, 6, 8], cfg,
                             n_replicas=20)
        self.assertTrue(np.all(np.diff(run.sup_diffs) < 0))
        self.assertGreater(run.fitted_rate, 0.6)
        self.assertGreater(run.r_squared, 0.9)

    def test_skeleton_residual(self):
        """Предельный скелет с управлением удовлетворяет интегральному уравнению."""
        model = self.scenario_model('delay-ou')
        params = model.memory_params(1.0)
        control = Control.from_function(lambda s: 0.5, -10.0, 1.0, params.h, 1)
        cfg = SimConfig(h=params.h, T=1.0, scheme='heun')
        run = skeleton_pullback(model, Segment.constant(1.0, params), control, (0.0, 1.0), [2, 4, 6, 8, 10], cfg)
        self.assertTrue(run.residual_ok)
        # Стационарный уровень y = 0.5/(2 − 0.5)
        self.assertAlmostEqual(float(run.limit_path.states[-1, 0]), 1.0 / 3.0, delta=1e-3)

    def test_deterministic_limit_forgets_initial_segment(self):
        """delay-ou при ε = 0: предельный путь не зависит от начального сегмента с точностью 1e-6."""
        model = self.scenario_model('delay-ou')
        params = model.memory_params(1.0)
        cfg = SimConfig(h=params.h, T=1.0)
        segments = [
            Segment.zeros(1, params),
            Segment.constant(1.0, params),
            Segment.constant(-2.0, params),
            Segment(0.0, np.sin(3.0 * params.lags)[:, None], np.zeros(1), params),
        ]
        limits = [pullback_solve(model, xi, 0.0, (0.0, 1.0), [5, 10, 20], cfg).limit_path.states for xi in segments]
        for states in limits[1:]:
            self.assertLess(float(np.max(np.abs(states - limits[0]))), 1e-6)

    def test_invalid_start_list(self):
        """Список стартов должен строго возрастать."""
        model = self.scenario_model('ou')
        params = model.memory_params(1.0)
        with self.assertRaises(ConfigError):
            pullback_solve(model, Segment.zeros(1, params), 0.0, (0.0, 1.0), [4, 2], SimConfig(h=params.h, T=1.0))

    def test_uniform_controlled_pullback(self):
        """Скорость pull-back с управлением не вырождается при ε → 0."""
        model = self.scenario_model('delay-ou')
        params = model.memory_params(1.0)
        control = Control.from_function(lambda s: 0.5, -8.0, 1.0, params.h, 1)
        report = controlled_pullback_uniform(model, Segment.constant(1.0, params), [0.0, 0.05], control,
                                             (0.0, 1.0), [2, 4, 6, 8], SimConfig(h=params.h, T=1.0), 10)
        self.assertEqual(len(report.runs), 2)
        self.assertTrue(report.passed)


class StationarityTest(SimpleTestCase, ModelMixin):
    """Проверка стационарности маргинальных законов."""

    def test_ou_marginals(self):
        """OU после разгона: законы в разные моменты совпадают, дисперсия ≈ ε/2."""
        model = self.scenario_model('ou')
        params = model.memory_params(1.0)
        cfg = SimConfig(h=params.h, T=2.0, seed=4)
        report = stationarity_test(model, Segment.zeros(1, params), 0.5, cfg, 20, [0.0, 1.0, 2.0], 200,
                                   alpha=0.001, reference={'mean': [0.0], 'variance': [0.25]},
                                   n_permutations=100)
        self.assertLess(report.burn_in_diff, 1e-3)
        for item in report.ks_pairs + report.reference:
            self.assertGreater(item['pvalue'], 1e-4)
        for variances in report.variances:
            self.assertAlmostEqual(variances[0], 0.25, delta=0.08)
        self.assertEqual(len(report.energy_pairs), 3)
        self.assertEqual(len(report.marginal_rows()), 3)

    def test_too_few_replicas(self):
        """Меньше 100 реплик на момент времени недопустимо."""
        model = self.scenario_model('ou')
        params = model.memory_params(1.0)
        with self.assertRaises(InsufficientReplicasError):
            stationarity_test(model, Segment.zeros(1, params), 0.5, SimConfig(h=params.h, T=1.0), 20, [0.0, 1.0], 50)

    def test_short_burn_in_is_rejected(self):
        """Короткий разгон не забывает начальный сегмент."""
        model = self.scenario_model('ou')
        params = model.memory_params(1.0)
        with self.assertRaises(BurnInError):
            stationarity_test(model, Segment.constant(5.0, params), 0.5, SimConfig(h=params.h, T=1.0), 2,
                              [0.0, 1.0], 100)


# 5. ФУНКЦИЯ ДЕЙСТВИЯ И КВАЗИПОТЕНЦИАЛ

class RateFunctionTest(SimpleTestCase, ModelMixin):
    """Минимизация функции действия и прямое обращение."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model = cls.scenario_model('ou')
        cls.params = cls.model.memory_params(1.0, h=0.05)

    def test_direct_rate_round_trip(self):
        """Обращение скелета с известным управлением восстанавливает управление."""
        params = self.model.memory_params(1.0, h=0.01)
        control = Control.from_function(lambda s: 1.0, 0.0, 1.0, 0.01, 1)
        path = integrate_skeleton(self.model, Segment.zeros(1, params), control, SimConfig(h=0.01, T=1.0, scheme='heun'))
        result = direct_rate(self.model, path)
        self.assertLess(float(np.max(np.abs(result.control.values - 1.0))), 1e-3)
        self.assertAlmostEqual(result.value, 0.5, delta=1e-3)

    def test_direct_rate_requires_square_diffusion(self):
        """Прямое обращение только при d = m."""
        model = affine_model([[1.0]], [[0.0]], [[1.0, 0.5]])
        params = model.memory_params(1.0, h=0.05)
        path = PathOnGrid(0.0, 0.05, Segment.zeros(1, params), np.zeros(11))
        with self.assertRaises(UnsupportedError):
            direct_rate(model, path)

    def test_ou_point_target(self):
        """OU: достичь y = 1 за T = 2 стоит 1/(1 − e^{−4}) ≈ 1.0187 с точностью 1%."""
        problem = RateProblem(self.model, FromInitial(Segment.zeros(1, self.params)), TerminalPoint([1.0], 2.0),
                              n_random_starts=0)
        result = require_feasible(minimize_rate(problem))
        self.assertAlmostEqual(result.value / (1.0 / (1.0 - math.exp(-4.0))), 1.0, delta=0.01)
        self.assertAlmostEqual(float(result.path.states[-1, 0]), 1.0, delta=1e-3)

    def test_infeasible_result(self):
        """Недостижимый допуск даёт недопустимый результат и код 5."""
        problem = RateProblem(self.model, FromInitial(Segment.zeros(1, self.params)), TerminalPoint([1.0], 0.5),
                              tol=1e-14, max_rounds=1, max_iter=2, n_random_starts=0)
        result = minimize_rate(problem)
        self.assertFalse(result.feasible)
        with self.assertRaises(InfeasibleRateError) as ctx:
            require_feasible(result)
        self.assertEqual(handle_exception(ctx.exception)[0], 5)

    def test_quasipotential_curve(self):
        """Кривая T → I(T) убывает к y² = 1."""
        start = StationaryStart(Segment.zeros(1, self.params, head_time=-5.0), depth=5.0)
        qp = quasipotential(self.model, [1.0], [1.0, 2.0], start, control_step=0.1, n_random_starts=0)
        self.assertTrue(qp.feasible)
        self.assertTrue(qp.monotone)
        self.assertEqual(qp.T_star, 2.0)
        self.assertAlmostEqual(qp.value, 1.0 / (1.0 - math.exp(-4.0)), delta=0.02)

    def test_continuity_probe(self):
        """Сжатие по начальным данным и сходимость по слабо сходящимся управлениям."""
        model = self.scenario_model('delay-ou')
        params = model.memory_params(1.0)
        xi1, xi2 = Segment.constant(1.0, params), Segment.constant(-1.0, params)
        report = continuity_probe(model, 0.0, [(xi1, xi2)], [{'xi': xi1, 'amplitude': 1.0}],
                                  SimConfig(h=params.h, T=2.0), horizon=2.0)
        self.assertAlmostEqual(report.lam, 1.0, places=12)
        self.assertTrue(report.all_hold)
        # Возмущения (1/n)·sin(n·s) сходятся к нулю в L²
        control_distances = report.control_checks[0]['control_distances']
        self.assertTrue(all(b < a for a, b in zip(control_distances, control_distances[1:])))
        self.assertLess(control_distances[-1], 0.05)

    def test_continuity_probe_needs_shrinking_perturbations(self):
        """Без затухания амплитуды расстояние между управлениями не убывает: проверка не проходит."""
        model = self.scenario_model('delay-ou')
        params = model.memory_params(1.0)
        xi = Segment.constant(1.0, params)
        report = continuity_probe(model, 0.0, [], [{'xi': xi, 'amplitude': 1.0, 'power': 0.0}],
                                  SimConfig(h=params.h, T=2.0), horizon=2.0)
        self.assertFalse(report.control_checks[0]['converging'])


class RateInvariantTest(SimpleTestCase, ModelMixin):
    """Масштабирование, измельчение сетки управления и согласие с прямым обращением на delay-ou."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model = cls.scenario_model('delay-ou')
        cls.params = cls.model.memory_params(1.0)

    def solve(self, y, control_step=0.1):
        problem = RateProblem(self.model, FromInitial(Segment.zeros(1, self.params)), TerminalPoint([y], 2.0),
                              control_step=control_step, n_random_starts=0)
        return require_feasible(minimize_rate(problem))

    def test_doubling_target_quadruples_value(self):
        """Линейная модель: удвоение цели умножает стоимость на 4 с точностью 2%."""
        ratio = self.solve(2.0).value / self.solve(1.0).value
        self.assertAlmostEqual(ratio, 4.0, delta=0.08)

    def test_control_grid_refinement_is_monotone(self):
        """При h_v → h_v/2 стоимость не растёт."""
        values = [self.solve(1.0, step).value for step in (0.2, 0.1, 0.05)]
        for coarse, fine in zip(values, values[1:]):
            self.assertLessEqual(fine, coarse + 1e-4)

    def test_optimum_not_below_direct_rate(self):
        """Стоимость оптимума не меньше прямого обращения его собственного пути."""
        result = self.solve(1.0)
        direct = direct_rate(self.model, result.path)
        self.assertGreaterEqual(result.value, direct.value - 1e-3)


class ContractionProjectTest(SimpleTestCase, ModelMixin):
    """Стоимость удержания целого сегмента против стоимости конечной точки."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model = cls.scenario_model('ou')
        cls.params = cls.model.memory_params(1.0, h=0.05)
        cls.start = StationaryStart(Segment.zeros(1, cls.params, head_time=-5.0), depth=5.0)

    def test_equilibrium_segment_costs_nothing(self):
        """Равновесный сегмент достигается без управления."""
        result = contraction_project(self.model, Segment.zeros(1, self.params), [1.0], self.start,
                                     control_step=0.1, n_random_starts=0)
        self.assertTrue(result.feasible)
        self.assertAlmostEqual(result.value, 0.0, delta=1e-4)

    def test_constant_history_costs_at_least_point(self):
        """Постоянная история y = 1 достижима и стоит не меньше попадания в точку y = 1."""
        segment = contraction_project(self.model, Segment.constant(1.0, self.params), [2.0, 4.0], self.start,
                                      control_step=0.1, n_random_starts=0)
        point = quasipotential(self.model, [1.0], [2.0, 4.0], self.start, control_step=0.1, n_random_starts=0)
        self.assertTrue(segment.feasible)
        self.assertTrue(point.feasible)
        self.assertGreaterEqual(segment.value, point.value - 1e-3)
        self.assertLess(segment.value, 2.0 * point.value)


# 6. БОЛЬШИЕ УКЛОНЕНИЯ И ВАРИАЦИОННАЯ ФОРМУЛА

class RareEventTest(SimpleTestCase, ModelMixin):
    """Простое и взвешенное Монте-Карло."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model = cls.scenario_model('ou')
        cls.params = cls.model.memory_params(1.0)
        cls.start = Start(Segment.zeros(1, cls.params))
        cls.cfg = SimConfig(h=cls.params.h, T=1.0, seed=9)

    def test_event_validation(self):
        """Событие terminal_ball требует центр."""
        with self.assertRaises(ConfigError):
            EventSpec('terminal_ball', 1.0)
        with self.assertRaises(ConfigError):
            EventSpec('unknown', 1.0)

    def test_girsanov_weights_have_unit_mean(self):
        """Среднее веса равно 1 в пределах погрешности."""
        event = EventSpec('terminal_ball', 1.0, center=np.zeros(1))
        control = Control.from_function(lambda s: 0.5, 0.0, 1.0, self.params.h, 1)
        estimate = tilted_mc(self.model, self.start, 0.2, event, control, 4000, self.cfg)
        self.assertAlmostEqual(estimate.p_hat, 1.0, delta=4.0 * estimate.stderr)

    def test_tilted_and_plain_agree(self):
        """P(|Y(1) − 1| ≤ 0.25): простое и взвешенное МК согласуются с точным законом схемы."""
        event = EventSpec('terminal_ball', 1.0, center=np.ones(1), radius=0.25)
        sd = math.sqrt(euler_ou_variance(0.5, self.params.h, 100))
        exact = stats.norm.cdf(1.25 / sd) - stats.norm.cdf(0.75 / sd)
        plain = rare_event_mc(self.model, self.start, 0.5, event, 20000, self.cfg)
        control = Control.from_function(lambda s: 1.0, 0.0, 1.0, self.params.h, 1)
        tilted = tilted_mc(self.model, self.start, 0.5, event, control, 20000, self.cfg)
        self.assertAlmostEqual(plain.p_hat, exact, delta=5.0 * plain.stderr)
        self.assertAlmostEqual(tilted.p_hat, exact, delta=5.0 * tilted.stderr)
        combined = math.sqrt(plain.stderr ** 2 + tilted.stderr ** 2)
        self.assertAlmostEqual(plain.p_hat, tilted.p_hat, delta=4.0 * combined)
        self.assertGreater(tilted.ess, 30.0)

    def test_nested_balls_are_monotone(self):
        """Общие случайные числа: вероятность меньшего шара не больше вероятности большего."""
        estimates = []
        for radius in (0.1, 0.2, 0.4):
            event = EventSpec('terminal_ball', 1.0, center=np.ones(1), radius=radius)
            estimates.append(rare_event_mc(self.model, self.start, 0.5, event, 5000, self.cfg))
        for small, large in zip(estimates, estimates[1:]):
            self.assertLessEqual(small.p_hat, large.p_hat + 2.0 * (small.stderr + large.stderr))
            self.assertLessEqual(small.hits, large.hits)

    def test_exceed_event_follows_first_axis(self):
        """terminal_exceed в d = 2 смотрит только на первую координату Y(T)."""
        params = MemoryParams(r=1.0, h=0.1, L=0.1)
        terminal = np.array([[0.5, 2.0], [1.5, 0.0], [-1.5, 0.0]])
        history = np.stack([np.zeros_like(terminal), terminal])
        batch = PathBatch(0.0, 0.1, params, history, np.zeros((1, 3, 2)))
        event = EventSpec('terminal_exceed', 0.0, threshold=1.0)
        self.assertEqual(event.indicator(batch).tolist(), [False, True, False])

    def test_slope_tolerance_matches_command_default(self):
        """Допуск наклона по умолчанию одинаков в библиотеке и в конфигурации команды."""
        library_default = inspect.signature(ldp_slope).parameters['tol'].default
        self.assertEqual(library_default, 0.15)
        self.assertEqual(LdpSlopeParamsSerializer().fields['slope_tol'].default, library_default)

    def test_zero_hits_give_upper_bound(self):
        """Без попаданий оценка помечается как верхняя граница."""
        event = EventSpec('terminal_exceed', 1.0, threshold=50.0)
        estimate = rare_event_mc(self.model, self.start, 0.1, event, 200, self.cfg)
        self.assertEqual(estimate.hits, 0)
        self.assertTrue(estimate.upper_bound_only)
        self.assertFalse(estimate.reliable)
        self.assertLess(estimate.p_upper, 0.05)

    def test_requires_positive_eps(self):
        """Вероятность события считается только при ε > 0."""
        event = EventSpec('terminal_exceed', 1.0, threshold=1.0)
        with self.assertRaises(ConfigError):
            rare_event_mc(self.model, self.start, 0.0, event, 100, self.cfg)


class VariationalFormulaTest(SimpleTestCase):
    """−log E e^{−f(W)} против инфимума по сдвигам шума."""

    def test_clipped_linear_equality(self):
        """Для линейных функционалов равенство точное."""
        for k in (1, 2, 3):
            report = variational_check(FunctionalSpec('clipped_linear', (1.0, -0.5, 0.5)[:k]), 1.0, k)
            self.assertEqual(report.method, 'gauss-hermite')
            self.assertTrue(report.equality_ok, msg=f'k = {k}: gap {report.gap}')

    def test_zero_functional(self):
        """f = 0: обе стороны равны нулю."""
        report = variational_check(FunctionalSpec('zero'), 1.0, 1)
        self.assertAlmostEqual(report.lhs, 0.0, places=9)
        self.assertAlmostEqual(report.rhs, 0.0, places=9)

    def test_clipped_quadratic_one_sided(self):
        """Для усечённого квадрата детерминированные сдвиги дают верхнюю оценку."""
        for k in (1, 2, 3):
            report = variational_check(FunctionalSpec('clipped_quadratic', (1.0,), 0.0, 4.0), 1.0, k)
            self.assertTrue(report.one_sided_ok, msg=f'k = {k}')
            self.assertIsNone(report.equality_ok)

    def test_linear_functional_closed_form(self):
        """f(W) = W(1): обе стороны равны −1/2, оптимальный сдвиг v ≡ −1."""
        report = variational_check(FunctionalSpec('clipped_linear', (1.0,)), 1.0, 1)
        self.assertAlmostEqual(report.lhs, -0.5, delta=1e-3)
        self.assertAlmostEqual(report.rhs, -0.5, delta=1e-3)
        self.assertAlmostEqual(report.v_opt[0], -1.0, delta=1e-3)

    def test_monte_carlo_branch(self):
        """k = 4 считается Монте-Карло: равенство для линейного и неравенство для квадрата."""
        linear = variational_check(FunctionalSpec('clipped_linear', (1.0, -0.5, 0.5, 0.25)), 1.0, 4,
                                   seed=5, tol=0.02)
        self.assertEqual(linear.method, 'monte-carlo')
        self.assertTrue(linear.equality_ok, msg=f'gap {linear.gap}')
        quadratic = variational_check(FunctionalSpec('clipped_quadratic', (1.0,), 0.0, 4.0), 1.0, 4, seed=5)
        self.assertEqual(quadratic.method, 'monte-carlo')
        self.assertTrue(quadratic.one_sided_ok)
        self.assertIsNone(quadratic.equality_ok)

    def test_dimension_limit(self):
        """Размерность шума ограничена."""
        with self.assertRaises(UnsupportedError):
            variational_check(FunctionalSpec('zero'), 1.0, 7)


# 7. КОНФИГУРАЦИЯ

class ConfigTest(SimpleTestCase):
    """Проверка, слияние со сценарием и хэширование конфигурации."""

    def test_scenario_merge_and_default_eps(self):
        """Сценарий подставляет модель, память и eps по умолчанию."""
        config = prepare_config({}, kind='check-model', scenario='delay-ou')
        self.assertEqual(config['scenario'], 'delay-ou')
        self.assertEqual(config['model']['B'], [[0.5]])
        self.assertEqual(config['experiment']['params']['eps'], 0.25)
        self.assertEqual(config['seed'], 0)

    def test_file_blocks_override_scenario(self):
        """Блоки файла перекрывают сценарий по ключам."""
        config = prepare_config({'memory': {'h': 0.02}, 'experiment': {'params': {'eps': 0.1}}},
                                kind='check-model', scenario='ou', seed=3)
        self.assertEqual(config['memory']['h'], 0.02)
        self.assertEqual(config['memory']['r'], 1.0)
        self.assertEqual(config['experiment']['params']['eps'], 0.1)
        self.assertEqual(config['seed'], 3)

    def test_parse_is_idempotent(self):
        """Повторная проверка канонической конфигурации ничего не меняет."""
        raw = {'experiment': {'kind': 'rate', 'params': {'target': {'kind': 'point', 'y': [1.0], 'T': 2.0}}}}
        config = prepare_config(raw, scenario='ou')
        self.assertEqual(parse_config(config), config)
        self.assertNotIn('start', config['experiment']['params'])

    def test_hash_ignores_output_and_cache(self):
        """Хэш не зависит от папки вывода и флага кэша, но зависит от seed."""
        base = prepare_config({}, kind='pullback', scenario='ou')
        moved = prepare_config({}, kind='pullback', scenario='ou', output_dir='/tmp/elsewhere', cache=False)
        reseeded = prepare_config({}, kind='pullback', scenario='ou', seed=1)
        self.assertEqual(config_hash(base), config_hash(moved))
        self.assertNotEqual(config_hash(base), config_hash(reseeded))

    def test_errors_have_dotted_paths(self):
        """Ошибки вложенных полей адресуются путём через точку."""
        with self.assertRaises(DRFValidationError) as ctx:
            prepare_config({'memory': {'r': -1.0}}, kind='check-model', scenario='ou')
        code, message, _ = handle_exception(ctx.exception)
        self.assertEqual(code, 2)
        self.assertIn('memory.r', message)

        with self.assertRaises(DRFValidationError) as ctx:
            prepare_config({'experiment': {'params': {'n_list': [3]}}}, kind='pullback', scenario='ou')
        self.assertIn('experiment.params.n_list', handle_exception(ctx.exception)[1])

    def test_invalid_measure_in_config(self):
        """Мера с неединичной массой отклоняется при проверке."""
        raw = {'model': {'mu1': {'atoms': [{'lag': 0.0, 'weight': 0.5}]}}}
        with self.assertRaises(DRFValidationError) as ctx:
            prepare_config(raw, kind='check-model', scenario='ou')
        self.assertIn('model.mu1', handle_exception(ctx.exception)[1])

    def test_unknown_scenario_and_kind_mismatch(self):
        """Неизвестный сценарий и расхождение подкоманды с experiment.kind."""
        with self.assertRaises(ConfigError) as ctx:
            prepare_config({}, kind='simulate', scenario='lorenz')
        self.assertEqual(ctx.exception.code, 'unknown_scenario')
        with self.assertRaises(ConfigError) as ctx:
            prepare_config({'experiment': {'kind': 'rate'}}, kind='simulate', scenario='ou')
        self.assertEqual(ctx.exception.code, 'kind_mismatch')

    def test_target_requires_kind_fields(self):
        """Цель point требует y и T."""
        with self.assertRaises(DRFValidationError) as ctx:
            prepare_config({'experiment': {'params': {'target': {'kind': 'point', 'T': 1.0}}}},
                           kind='rate', scenario='ou')
        self.assertIn('experiment.params.target.y', handle_exception(ctx.exception)[1])


# 8. КОМАНДНАЯ СТРОКА И ЖУРНАЛ ЗАПУСКОВ

class CommandLineTest(TransactionTestCase):
    """python manage.py fadeldp ...: коды выхода, артефакты и кэш."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write_config(self, name, data):
        path = self.root / name
        path.write_text(json.dumps(data), encoding='utf-8')
        return str(path)

    def run_command(self, *args):
        out = StringIO()
        call_command('fadeldp', *args, stdout=out)
        return out.getvalue()

    def test_check_model_writes_artifacts(self):
        """check-model для delay-ou: код 0, артефакты и запись в журнале."""
        out_dir = self.root / 'check'
        output = self.run_command('check-model', '--scenario', 'delay-ou', '--out', str(out_dir))
        self.assertIn('margin', output)
        for name in ('config.json', 'result.json', 'manifest.json'):
            self.assertTrue((out_dir / name).exists(), msg=name)
        result = json.loads((out_dir / 'result.json').read_text(encoding='utf-8'))
        self.assertAlmostEqual(result['report']['margin'], 3.5 - 0.5 * math.exp(0.2), places=9)
        manifest = json.loads((out_dir / 'manifest.json').read_text(encoding='utf-8'))
        self.assertEqual({item['file'] for item in manifest['artifacts']}, {'config.json', 'result.json'})
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, ExperimentRun.STATUS_SUCCESS)
        self.assertEqual(run.exitCode, 0)
        self.assertTrue(run.manifestPath.endswith('manifest.json'))

    def test_simulate_is_reproducible(self):
        """simulate при ε = 0 даёт побайтно одинаковые файлы и верный двоичный путь."""
        config = self.write_config('sim.json', {
            'scenario': 'ou',
            'experiment': {'params': {'eps': 0.0, 'T': 1.0, 'xi': {'constant': [1.0]}, 'binary': True}},
        })
        first, second = self.root / 'a', self.root / 'b'
        self.run_command('simulate', '--config', config, '--out', str(first))
        self.run_command('simulate', '--config', config, '--out', str(second))
        for name in ('path.csv', 'result.json', 'path.bin'):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes(), msg=name)
        t0, h, states = read_path_binary(first / 'path.bin')
        self.assertEqual((t0, h), (0.0, 0.01))
        np.testing.assert_allclose(states[:, 0], 0.99 ** np.arange(101), rtol=1e-12)

    def test_cache_hit_on_rerun(self):
        """Повторный pull-back с той же конфигурацией берётся из кэша."""
        config = self.write_config('pb.json', {
            'scenario': 'delay-ou',
            'experiment': {'params': {'eps': 0.0, 'xi': {'constant': [1.0]}}},
        })
        self.run_command('pullback', '--config', config, '--out', str(self.root / 'first'))
        output = self.run_command('pullback', '--config', config, '--out', str(self.root / 'second'))
        self.assertIn('(из кэша)', output)
        self.assertEqual(SweepCache.objects.get().hits, 1)
        self.assertEqual(ExperimentRun.objects.filter(cacheHit=True).count(), 1)
        first = (self.root / 'first' / 'result.json').read_bytes()
        self.assertEqual(first, (self.root / 'second' / 'result.json').read_bytes())

        self.run_command('pullback', '--config', config, '--out', str(self.root / 'third'), '--no-cache')
        self.assertEqual(SweepCache.objects.get().hits, 1)

    def test_unstable_model_exit_code(self):
        """Неустойчивая модель: отчёт записан, код выхода 3."""
        config = self.write_config('unstable.json', {
            'model': {
                'name': 'unstable', 'd': 1, 'm': 1, 'A': [[1.0]], 'B': [[2.0]], 'sigma0': [[1.0]],
                'mu1': {'atoms': [{'lag': 0.0, 'weight': 1.0}]},
                'mu2': {'atoms': [{'lag': 0.0, 'weight': 1.0}]},
            },
            'memory': {'r': 1.0},
            'experiment': {'kind': 'check-model'},
        })
        out_dir = self.root / 'unstable'
        with self.assertRaises(CommandError) as ctx:
            self.run_command('check-model', '--config', config, '--out', str(out_dir))
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertTrue((out_dir / 'result.json').exists())
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, ExperimentRun.STATUS_FAILED)
        self.assertEqual(run.exitCode, 3)

    def test_infeasible_rate_exit_code(self):
        """Недопустимая задача о функции действия: код выхода 5."""
        config = self.write_config('rate.json', {
            'scenario': 'ou',
            'memory': {'h': 0.05},
            'experiment': {'params': {
                'target': {'kind': 'point', 'y': [1.0], 'T': 0.5},
                'tol': 1e-14, 'max_rounds': 1, 'max_iter': 2, 'n_random_starts': 0,
            }},
        })
        out_dir = self.root / 'rate'
        with self.assertRaises(CommandError) as ctx:
            self.run_command('rate', '--config', config, '--out', str(out_dir))
        self.assertEqual(ctx.exception.returncode, 5)
        self.assertTrue((out_dir / 'control.csv').exists())

    def test_config_errors_exit_code(self):
        """Ошибки конфигурации: код выхода 2."""
        with self.assertRaises(CommandError) as ctx:
            self.run_command('simulate')
        self.assertEqual(ctx.exception.returncode, 2)

        with self.assertRaises(CommandError) as ctx:
            self.run_command('simulate', '--scenario', 'lorenz')
        self.assertEqual(ctx.exception.returncode, 2)

        config = self.write_config('bad.json', {'scenario': 'ou', 'memory': {'r': -1.0}})
        with self.assertRaises(CommandError) as ctx:
            self.run_command('simulate', '--config', config)
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('memory.r', str(ctx.exception))

        broken = self.root / 'broken.json'
        broken.write_text('{"scenario": ', encoding='utf-8')
        with self.assertRaises(CommandError) as ctx:
            self.run_command('simulate', '--config', str(broken))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_scenarios_listing(self):
        """Список встроенных сценариев."""
        output = self.run_command('scenarios')
        for name in ('ou', 'delay-ou', 'multiplicative'):
            self.assertIn(name, output)


# 9. ПРИЁМОЧНЫЕ ПРОГОНЫ (медленные, запускаются с FADELDP_SLOW_TESTS=True)

@tag('slow')
class AcceptanceTest(SimpleTestCase, ModelMixin):
    """Настольные проверки стационарности, сходимости и наклона больших уклонений."""

    def test_ou_stationary_law(self):
        """OU, ε = 0.5, 10⁵ реплик: дисперсия 0.25 в пределах 3 ст. ошибок, KS против N(0, 0.25)."""
        model = self.scenario_model('ou')
        params = model.memory_params(1.0, h=0.005)
        cfg = SimConfig(h=0.005, T=1.0, seed=21)
        n = 100_000
        report = stationarity_test(model, Segment.zeros(1, params), 0.5, cfg, 20, [0.0, 1.0], n,
                                   reference={'mean': [0.0], 'variance': [0.25]}, n_permutations=50)
        stderr = 0.25 * math.sqrt(2.0 / (n - 1))
        for variances in report.variances:
            self.assertAlmostEqual(variances[0], 0.25, delta=3.0 * stderr)
        for item in report.reference:
            self.assertGreaterEqual(item['pvalue'], 0.01)

    def test_pullback_decay_delay_ou(self):
        """delay-ou, ε = 0.25: R² > 0.9 и разности на самом глубоком старте < 10⁻³."""
        model = self.scenario_model('delay-ou')
        params = model.memory_params(1.0)
        run = pullback_solve(model, Segment.constant(1.0, params), 0.25, (0.0, 1.0), [2, 4, 6, 8, 10],
                             SimConfig(h=params.h, T=1.0, seed=2), n_replicas=100)
        self.assertGreater(run.fitted_rate, 0.0)
        self.assertGreater(run.r_squared, 0.9)
        self.assertLess(run.sup_diffs[-1], 1e-3)

    def test_quasipotential_limit(self):
        """OU: кривая T → I(T) сходится к y² = 1 с точностью 2% при T = 8."""
        model = self.scenario_model('ou')
        params = model.memory_params(1.0, h=0.05)
        start = StationaryStart(Segment.zeros(1, params, head_time=-5.0), depth=5.0)
        qp = quasipotential(model, [1.0], [2.0, 4.0, 8.0], start, control_step=0.1, n_random_starts=0)
        self.assertAlmostEqual(qp.value, 1.0, delta=0.02)
        self.assertTrue(qp.monotone)

    def test_controlled_to_skeleton_slope(self):
        """Среднее расстояние до скелета убывает как ε^{1/2}."""
        model = self.scenario_model('delay-ou')
        params = model.memory_params(1.0)
        control = Control.from_function(lambda s: 0.5, 0.0, 3.0, params.h, 1)
        report = skeleton_convergence(model, Segment.constant(1.0, params), [0.2, 0.1, 0.05, 0.025], control,
                                      SimConfig(h=params.h, T=3.0, seed=8), 200)
        self.assertAlmostEqual(report.slope, 0.5, delta=0.1)

    def test_ldp_slope_ou(self):
        """Экстраполяция ε·log p̂ к ε → 0 совпадает с −I в пределах 15%."""
        model = self.scenario_model('ou')
        params = model.memory_params(1.0, h=0.02)
        start = Start(Segment.zeros(1, params))
        event = EventSpec('terminal_exceed', 2.0, threshold=1.0)
        problem = RateProblem(model, FromInitial(start.xi), TerminalPoint([1.0], 2.0), n_random_starts=0)
        rate_pred = require_feasible(minimize_rate(problem))
        report = ldp_slope(model, start, event, [0.2, 0.1, 0.05], 20000, rate_pred,
                           SimConfig(h=0.02, T=2.0, seed=13), tol=0.15)
        self.assertTrue(report.passed, msg=str(report.to_dict()))

    def test_uniform_controlled_pullback_rates(self):
        """min по ε ∈ {0.05, 0.2} скоростей pull-back не меньше 0.3·λ_max."""
        model = self.scenario_model('delay-ou')
        params = model.memory_params(1.0)
        control = Control.from_function(lambda s: 0.5, -10.0, 1.0, params.h, 1)
        report = controlled_pullback_uniform(model, Segment.constant(1.0, params), [0.05, 0.2], control,
                                             (0.0, 1.0), [2, 4, 6, 8, 10], SimConfig(h=params.h, T=1.0, seed=5),
                                             100)
        self.assertTrue(report.passed, msg=str(report.to_dict()))
