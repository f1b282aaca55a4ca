"""
Постобработка: развертка ошибок считывания, оценка точности 1-p по схемам оценки,
коррекция деполяризующего шума, квадратичная экстраполяция к нулевому шуму и
усреднение по рандомизированным экземплярам.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import curve_fit

from .logger import log_warning

# Режимы оценки точности по выходу схемы оценки
MODE_SIGMA_Z_LAST = "sigma_z_last"
MODE_ALL_ZEROS = "all_zeros_probability"
FIDELITY_MODES = (MODE_SIGMA_Z_LAST, MODE_ALL_ZEROS)

DEFAULT_UNFOLD_ITERATIONS = 100
# Ниже этого 1-p коррекция усиливает шум настолько, что результат бессмысленен
FIDELITY_FLOOR = 0.02
STOCHASTIC_TOL = 1e-12


class MitigationError(ValueError):
    """Ошибка постобработки: пустые данные, несогласованные уровни шума и т.п."""


class FidelityError(MitigationError):
    """1-p <= 0: состояние полностью деполяризовано, коррекция невозможна."""


class UnreliableFidelityError(MitigationError):
    """1-p ниже порога: коррекция усиливает шум до бессмысленных значений."""


# ---------------------------------------------------------------------------
# Матрица ошибок считывания и развертка
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    """
    Матрица отклика считывания (столбец - истинное состояние, строка - наблюдаемое).

    Хранится либо покубитно (тензорное произведение матриц 2x2), либо полной
    матрицей 2^n x 2^n.
    """
    width: int
    matrices: Optional[Tuple[np.ndarray, ...]] = field(default=None, compare=False)
    full: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if (self.matrices is None) == (self.full is None):
            raise MitigationError("Нужно задать ровно одно: покубитные матрицы или полную матрицу")
        if self.matrices is not None:
            matrices = tuple(np.asarray(m, dtype=float) for m in self.matrices)
            if len(matrices) != self.width or any(m.shape != (2, 2) for m in matrices):
                raise MitigationError(f"Нужно {self.width} матриц 2x2")
            for m in matrices:
                _check_stochastic(m)
            object.__setattr__(self, "matrices", matrices)
        else:
            full = np.asarray(self.full, dtype=float)
            dim = 2 ** self.width
            if full.shape != (dim, dim):
                raise MitigationError(f"Полная матрица должна быть {dim}x{dim}")
            _check_stochastic(full)
            object.__setattr__(self, "full", full)

    @classmethod
    def identity(cls, width):
        return cls(width, matrices=tuple(np.eye(2) for _ in range(width)))

    @property
    def mode(self):
        return "product" if self.matrices is not None else "full"

    def response(self):
        """Плотная матрица отклика 2^n x 2^n."""
        if self.full is not None:
            return self.full
        result = np.array([[1.0]])
        for m in self.matrices:
            result = np.kron(result, m)
        return result

    def is_identity(self):
        if self.matrices is not None:
            return all(np.array_equal(m, np.eye(2)) for m in self.matrices)
        return bool(np.array_equal(self.full, np.eye(self.full.shape[0])))

    def to_dict(self):
        if self.matrices is not None:
            return {"width": self.width, "mode": "product",
                    "matrices": [[[float(x) for x in row] for row in m] for m in self.matrices]}
        return {"width": self.width, "mode": "full", "full": [[float(x) for x in row] for row in self.full]}

    @classmethod
    def from_dict(cls, data):
        width = int(data["width"])
        if data.get("mode", "product") == "product":
            return cls(width, matrices=tuple(np.array(m, dtype=float) for m in data["matrices"]))
        return cls(width, full=np.array(data["full"], dtype=float))


def _check_stochastic(matrix):
    if np.any(matrix < -STOCHASTIC_TOL) or np.any(matrix > 1 + STOCHASTIC_TOL):
        raise MitigationError("Элементы матрицы отклика вне [0, 1]")
    if np.max(np.abs(matrix.sum(axis=0) - 1.0)) > STOCHASTIC_TOL:
        raise MitigationError("Столбцы матрицы отклика не суммируются в 1")


def _frequencies(counts):
    if counts.shots <= 0 or not counts.counts:
        raise MitigationError("Пустая гистограмма: развертка невозможна")
    return counts.to_vector() / counts.shots


def forward_fold(distribution, confusion):
    """Распределение, которое увидит детектор: R p."""
    return confusion.response() @ np.asarray(distribution, dtype=float)


def unfold(counts, confusion, iterations=DEFAULT_UNFOLD_ITERATIONS, prior=None):
    """
    Итеративная байесовская развертка гистограммы.

    t_{k+1}(i) = sum_j R_ji t_k(i) m_j / (R t_k)_j, начиная с равномерного априорного
    распределения. При единичной матрице отклика возвращает эмпирические частоты.

    Args:
        counts: Гистограмма измерений
        confusion: Матрица отклика считывания
        iterations: Число итераций (>= 1)
        prior: Начальное распределение (по умолчанию равномерное)

    Returns:
        np.ndarray: Неотрицательное нормированное распределение истинных исходов

    Raises:
        MitigationError: Пустая гистограмма или iterations < 1
    """
    if iterations < 1:
        raise MitigationError(f"Число итераций развертки должно быть >= 1: {iterations}")
    if confusion.width != counts.width:
        raise MitigationError(f"Ширина матрицы отклика {confusion.width} != ширине гистограммы {counts.width}")
    measured = _frequencies(counts)
    if confusion.is_identity():
        return measured

    response = confusion.response()
    dim = measured.size
    estimate = np.full(dim, 1.0 / dim) if prior is None else np.asarray(prior, dtype=float) / np.sum(prior)
    for _ in range(iterations):
        folded = response @ estimate
        ratio = np.divide(measured, folded, out=np.zeros_like(measured), where=folded > 0)
        estimate = estimate * (response.T @ ratio)
    estimate = np.clip(estimate, 0.0, None)
    return estimate / estimate.sum()


def unfold_inverse(counts, confusion):
    """Прямое обращение матрицы отклика (псевдообратная); может дать отрицательные значения."""
    return np.linalg.pinv(confusion.response()) @ _frequencies(counts)


def total_variation(p, q):
    return 0.5 * float(np.sum(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))))


def distribution_value(distribution, mode=MODE_SIGMA_Z_LAST):
    """
    Значение по распределению исходов: <sigma_z> последнего кубита или P(0...0).

    Последний кубит - младший бит индекса базисного состояния.
    """
    distribution = np.asarray(distribution, dtype=float)
    if mode == MODE_SIGMA_Z_LAST:
        signs = 1.0 - 2.0 * (np.arange(distribution.size) & 1)
        return float(np.dot(distribution, signs))
    if mode == MODE_ALL_ZEROS:
        return float(distribution[0])
    raise MitigationError(f"Неизвестный режим оценки точности: {mode}")


# ---------------------------------------------------------------------------
# Усреднение
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Aggregate:
    """Среднее, выборочное стандартное отклонение и стандартная ошибка среднего."""
    mean: float
    std: float
    sem: float
    count: int
    single_sample: bool = False


def aggregate(values):
    """
    Усредняет значения по экземплярам (в порядке индексов экземпляров).

    Args:
        values: Последовательность вещественных значений

    Returns:
        Aggregate: Среднее, SD (знаменатель n-1), SEM = SD/sqrt(n)

    Raises:
        MitigationError: Пустой вход
    """
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        raise MitigationError("Нечего усреднять: пустой вход")
    mean = float(np.mean(values))
    if values.size == 1:
        return Aggregate(mean, 0.0, 0.0, 1, single_sample=True)
    std = float(np.std(values, ddof=1))
    return Aggregate(mean, std, std / math.sqrt(values.size), int(values.size))


# ---------------------------------------------------------------------------
# Оценка точности и коррекция
# ---------------------------------------------------------------------------

@dataclass
class FidelityEstimate:
    """
    Оценка 1-p по кратностям размножения CNOT.

    Attributes:
        one_minus_p: Кратность -> среднее 1-p (не больше 1)
        sem: Кратность -> стандартная ошибка среднего
        instances: Кратность -> число экземпляров
        clipped: Кратность -> было ли сырое среднее больше 1
        nonpositive: Кратность -> было ли сырое среднее не больше 0 (коррекция по нему невозможна)
        samples: Кратность -> значения по экземплярам
        mode: Режим оценки
    """
    one_minus_p: Dict[int, float]
    sem: Dict[int, float]
    instances: Dict[int, int]
    clipped: Dict[int, bool] = field(default_factory=dict)
    samples: Dict[int, Tuple[float, ...]] = field(default_factory=dict)
    mode: str = MODE_SIGMA_Z_LAST
    nonpositive: Dict[int, bool] = field(default_factory=dict)

    @property
    def folds(self):
        return tuple(sorted(self.one_minus_p))


def estimate_fidelity(estimation_outputs, mode=MODE_SIGMA_Z_LAST):
    """
    Оценивает 1-p по выходам схем оценки для каждой кратности.

    Args:
        estimation_outputs: Кратность -> последовательность по экземплярам; элемент - либо
            готовое точное значение (float), либо распределение исходов после развертки
        mode: MODE_SIGMA_Z_LAST или MODE_ALL_ZEROS

    Returns:
        FidelityEstimate: Средние по экземплярам (с обрезкой сверху до 1, с флагом для среднего <= 0) и их SEM

    Raises:
        MitigationError: Пустой вход или неизвестный режим
    """
    if mode not in FIDELITY_MODES:
        raise MitigationError(f"Неизвестный режим оценки точности: {mode}")
    if not estimation_outputs:
        raise MitigationError("Нет выходов схем оценки")

    values, sems, counts, clipped, nonpositive, samples = {}, {}, {}, {}, {}, {}
    for fold in sorted(estimation_outputs):
        outputs = list(estimation_outputs[fold])
        if not outputs:
            raise MitigationError(f"Нет экземпляров для кратности {fold}")
        per_instance = tuple(float(out) if np.isscalar(out) else distribution_value(out, mode)
                             for out in outputs)
        agg = aggregate(per_instance)
        values[fold] = min(agg.mean, 1.0)
        clipped[fold] = agg.mean > 1.0
        if clipped[fold]:
            log_warning("Среднее 1-p больше 1, значение обрезано до 1",
                        {"fold": fold, "raw_mean": agg.mean, "sem": agg.sem})
        nonpositive[fold] = agg.mean <= 0.0
        if nonpositive[fold]:
            log_warning("Среднее 1-p не больше 0, коррекция для этой кратности невозможна",
                        {"fold": fold, "raw_mean": agg.mean, "sem": agg.sem})
        sems[fold] = agg.sem
        counts[fold] = agg.count
        samples[fold] = per_instance
    return FidelityEstimate(values, sems, counts, clipped, samples, mode, nonpositive)


def correct_depolarizing(noisy_value, one_minus_p, c=0.0, floor=FIDELITY_FLOOR, allow_unreliable=False):
    """
    Коррекция деполяризующего шума: (noisy - c) / (1-p) + c.

    Args:
        noisy_value: Зашумленное ожидание
        one_minus_p: Оценка 1-p
        c: Коэффициент при тождественной строке наблюдаемой
        floor: Порог надежности 1-p
        allow_unreliable: Считать и ниже порога (с предупреждением)

    Returns:
        float: Скорректированное ожидание

    Raises:
        FidelityError: one_minus_p <= 0
        UnreliableFidelityError: one_minus_p < floor и allow_unreliable=False
    """
    if one_minus_p <= 0:
        raise FidelityError(f"1-p = {one_minus_p} <= 0: коррекция невозможна")
    if one_minus_p < floor:
        if not allow_unreliable:
            raise UnreliableFidelityError(f"1-p = {one_minus_p} ниже порога {floor}")
        log_warning("1-p ниже порога: коррекция сильно усиливает шум",
                    {"one_minus_p": one_minus_p, "floor": floor})
    return (noisy_value - c) / one_minus_p + c


# ---------------------------------------------------------------------------
# Экстраполяция к нулевому шуму
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtrapolationResult:
    """Значение при n = 0, его неопределенность и линейные веса входных точек."""
    value: float
    uncertainty: float
    weights: Tuple[float, ...]
    factors: Tuple[float, ...]


def lagrange_weights(nodes, at=0.0):
    """Веса интерполяции Лагранжа в точке at."""
    nodes = [float(x) for x in nodes]
    weights = []
    for i, xi in enumerate(nodes):
        w = 1.0
        for j, xj in enumerate(nodes):
            if j != i:
                w *= (at - xj) / (xi - xj)
        weights.append(w)
    return tuple(weights)


def _split_points(points, uncertainties, minimum=3):
    points = [(float(n), float(y)) for n, y in points]
    factors = [n for n, _ in points]
    if len(set(factors)) != len(factors):
        raise MitigationError(f"Повторяющиеся кратности: {factors}")
    if len(points) < minimum:
        raise MitigationError(f"Нужно минимум {minimum} точки, получено {len(points)}")
    if uncertainties is None:
        sigmas = np.zeros(len(points))
    else:
        sigmas = np.asarray(list(uncertainties), dtype=float)
        if sigmas.size != len(points):
            raise MitigationError("Число неопределенностей не совпадает с числом точек")
    return np.array(factors), np.array([y for _, y in points]), sigmas


def zne_quadratic(points, uncertainties=None):
    """
    Квадратичная экстраполяция к n = 0.

    Три точки - точная интерполяция Лагранжа (для кратностей 1, 3, 5 веса
    1.875, -1.25, 0.375); больше трех - квадратичный МНК. Неопределенность
    распространяется через линейные веса.

    Args:
        points: Пары (кратность n, значение y)
        uncertainties: Неопределенности значений (необязательно)

    Returns:
        ExtrapolationResult: Значение при n = 0

    Raises:
        MitigationError: Повторяющиеся кратности или меньше трех точек
    """
    factors, ys, sigmas = _split_points(points, uncertainties)
    if factors.size == 3:
        weights = np.array(lagrange_weights(factors))
    else:
        vandermonde = np.vander(factors, 3, increasing=True)
        weights = np.linalg.pinv(vandermonde)[0]
    value = float(np.dot(weights, ys))
    uncertainty = float(math.sqrt(np.dot(weights ** 2, sigmas ** 2)))
    return ExtrapolationResult(value, uncertainty, tuple(float(w) for w in weights), tuple(factors))


def _exponential(n, amplitude, rate):
    return amplitude * np.exp(-rate * n)


def zne_exponential(points, uncertainties=None):
    """
    Диагностическая экстраполяция y = A exp(-b n) к n = 0 (значение A).

    Чувствительна к шуму данных; в итоговом результате не используется.

    Raises:
        MitigationError: Меньше трех точек или подгонка не сошлась
    """
    factors, ys, sigmas = _split_points(points, uncertainties)
    if np.all(ys > 0):
        slope, intercept = np.polyfit(factors, np.log(ys), 1)
        p0 = (math.exp(intercept), -slope)
    else:
        p0 = (float(ys[0]), 0.1)
    sigma = sigmas if np.all(sigmas > 0) else None
    try:
        params, covariance = curve_fit(_exponential, factors, ys, p0=p0, sigma=sigma,
                                       absolute_sigma=sigma is not None, maxfev=10000)
    except (RuntimeError, ValueError) as e:
        raise MitigationError(f"Экспоненциальная подгонка не сошлась: {e}") from e
    variance = covariance[0, 0] if np.all(np.isfinite(covariance)) else np.nan
    return ExtrapolationResult(float(params[0]), float(math.sqrt(variance)) if variance >= 0 else float("nan"),
                               (), tuple(factors))


# ---------------------------------------------------------------------------
# Полный конвейер: коррекция по кратностям, затем экстраполяция
# ---------------------------------------------------------------------------

@dataclass
class MitigatedValue:
    """
    Результат смягчения шума.

    Attributes:
        value: Экстраполированное значение
        uncertainty: Распространенная неопределенность
        corrected: Кратность -> скорректированное значение
        corrected_uncertainty: Кратность -> его неопределенность
        provenance: Использованные кратности и числа экземпляров
    """
    value: float
    uncertainty: float
    corrected: Dict[int, float] = field(default_factory=dict)
    corrected_uncertainty: Dict[int, float] = field(default_factory=dict)
    provenance: Dict[str, object] = field(default_factory=dict)


def _mean_and_sem(entry):
    if isinstance(entry, Aggregate):
        return entry.mean, entry.sem, entry.count
    if isinstance(entry, (tuple, list)):
        return float(entry[0]), float(entry[1]), None
    return float(entry), 0.0, None


def mitigate(target_values, fidelities, c=0.0, floor=FIDELITY_FLOOR, allow_unreliable=False):
    """
    Коррекция по каждой кратности и квадратичная экстраполяция к нулю.

    Args:
        target_values: Кратность -> Aggregate, (среднее, SEM) или число
        fidelities: FidelityEstimate с теми же кратностями
        c: Коэффициент при тождественной строке наблюдаемой
        floor: Порог надежности 1-p
        allow_unreliable: Разрешить коррекцию ниже порога

    Returns:
        MitigatedValue: Значение, неопределенность и промежуточные данные

    Raises:
        MitigationError: Наборы кратностей не совпадают (и ошибки компонентов)
    """
    folds = tuple(sorted(target_values))
    if folds != fidelities.folds:
        raise MitigationError(f"Кратности целевых схем {folds} != кратностям схем оценки {fidelities.folds}")

    corrected, corrected_sigma, target_counts = {}, {}, {}
    for fold in folds:
        y, sigma_y, count = _mean_and_sem(target_values[fold])
        f = fidelities.one_minus_p[fold]
        sigma_f = fidelities.sem.get(fold, 0.0)
        corrected[fold] = correct_depolarizing(y, f, c, floor, allow_unreliable)
        # Первый порядок для частного (y - c) / f
        corrected_sigma[fold] = math.sqrt((sigma_y / f) ** 2 + ((y - c) * sigma_f / f ** 2) ** 2)
        target_counts[fold] = count

    result = zne_quadratic([(fold, corrected[fold]) for fold in folds],
                           [corrected_sigma[fold] for fold in folds])
    provenance = {
        "folds": list(folds),
        "target_instances": target_counts,
        "estimation_instances": dict(fidelities.instances),
        "weights": list(result.weights),
    }
    return MitigatedValue(result.value, result.uncertainty, corrected, corrected_sigma, provenance)


def per_instance_mitigated(target_samples: Mapping[int, Sequence[float]], fidelities: Optional[FidelityEstimate],
                           c=0.0, floor=FIDELITY_FLOOR, allow_unreliable=False):
    """
    Значения, полностью обработанные по каждому экземпляру отдельно.

    Экземпляр i делится на среднее 1-p своей кратности (если fidelities заданы), затем
    экстраполируется по кратностям. Разброс этих значений - основная погрешность
    итоговой таблицы.

    Returns:
        list: По одному значению на индекс экземпляра, присутствующий во всех кратностях
    """
    folds = tuple(sorted(target_samples))
    count = min(len(target_samples[fold]) for fold in folds)
    values = []
    for i in range(count):
        points = []
        for fold in folds:
            y = target_samples[fold][i]
            if fidelities is not None:
                y = correct_depolarizing(y, fidelities.one_minus_p[fold], c, floor, allow_unreliable)
            points.append((fold, y))
        values.append(zne_quadratic(points).value)
    return values
