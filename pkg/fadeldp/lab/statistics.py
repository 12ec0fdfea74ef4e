# Статистические помощники: перестановочный тест энергетического расстояния,
# доверительные интервалы наклона, взвешенная регрессия и границы Клоппера–Пирсона

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist


def energy_distance(x, y):
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    return float(2.0 * cdist(x, y).mean() - cdist(x, x).mean() - cdist(y, y).mean())


def energy_distance_test(x, y, n_permutations=200, rng=None):
    """Перестановочный тест равенства распределений; возвращает (статистика, p-значение)."""
    rng = rng or np.random.default_rng(0)
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    pooled = np.vstack([x, y])
    distances = cdist(pooled, pooled)
    n_x = len(x)

    def statistic(index):
        ix, iy = index[:n_x], index[n_x:]
        return (2.0 * distances[np.ix_(ix, iy)].mean() - distances[np.ix_(ix, ix)].mean()
                - distances[np.ix_(iy, iy)].mean())

    observed = statistic(np.arange(len(pooled)))
    if observed <= 0:
        return float(observed), 1.0
    exceed = sum(1 for _ in range(n_permutations) if statistic(rng.permutation(len(pooled))) >= observed)
    return float(observed), (exceed + 1) / (n_permutations + 1)


def slope_interval(x, y, level=0.95):
    """Наклон МНК и его доверительный интервал по распределению Стьюдента."""
    fit = stats.linregress(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    dof = len(x) - 2
    half = stats.t.ppf(0.5 + level / 2.0, dof) * fit.stderr if dof > 0 else np.inf
    return float(fit.slope), (float(fit.slope - half), float(fit.slope + half))


def weighted_linear_fit(x, y, se):
    """
    Взвешенная МНК-прямая y = c0 + c1·x с весами 1/se².
    Возвращает (c0, c1, стандартная ошибка c0).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    se = np.maximum(np.asarray(se, dtype=float), 1e-12)
    if len(x) == 1:
        return float(y[0]), 0.0, float(se[0])
    coeffs, cov = np.polyfit(x, y, 1, w=1.0 / se, cov='unscaled')
    slope, intercept = coeffs
    return float(intercept), float(slope), float(np.sqrt(max(cov[1, 1], 0.0)))


def clopper_pearson(k, n, level=0.95):
    """Точный двусторонний интервал для доли успехов k из n."""
    alpha = 1.0 - level
    lower = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2.0, k, n - k + 1))
    upper = 1.0 if k == n else float(stats.beta.ppf(1.0 - alpha / 2.0, k + 1, n - k))
    return lower, upper
