"""
Симулятор матрицы плотности с шумовыми каналами и оракул на векторе состояния.

Шум по умолчанию локальный: после каждого CNOT применяется когерентный ZZ-поворот на
угол epsilon и двухкубитная деполяризация с вероятностью p2 на паре кубитов этого CNOT.
Глобальный деполяризующий канал (1-p) rho + p I/2^n применяется в конце схемы, если задан.
Считывание искажается независимо по кубитам матрицами ошибок (столбец - истинное
значение, строка - наблюдаемое).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .circuit import (
    EINSUM_LETTERS, PAULI_MATRICES, Observable, apply_matrix, pauli_string_matrix, unitary_of,
)

# Предельные ширины для симуляций
DENSITY_WIDTH_CAP = 10
STATEVECTOR_WIDTH_CAP = 20

# Допуски инвариантов состояний
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
EIGENVALUE_TOL = 1e-10
NORM_TOL = 1e-12
IMAGINARY_TOL = 1e-10
STOCHASTIC_TOL = 1e-12

_ZZ_DIAGONAL = np.array([1.0, -1.0, -1.0, 1.0])


class SimulationError(ValueError):
    """Некорректное состояние, шумовая модель или параметры симуляции."""


def zz_rotation(angle):
    """exp(-i angle Z⊗Z / 2) - модель систематической ошибки калибровки CNOT."""
    return np.diag(np.exp(-0.5j * angle * _ZZ_DIAGONAL))


@dataclass(frozen=True)
class DensityMatrix:
    """Матрица плотности n кубитов (2^n x 2^n)."""
    width: int
    matrix: np.ndarray

    def check(self):
        """
        Проверяет эрмитовость, единичный след и неотрицательность спектра.

        Raises:
            SimulationError: Нарушен один из инвариантов
        """
        rho = self.matrix
        if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
            raise SimulationError("Матрица плотности не эрмитова")
        if abs(np.trace(rho) - 1.0) > TRACE_TOL:
            raise SimulationError(f"След матрицы плотности {np.trace(rho).real} != 1")
        if np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -EIGENVALUE_TOL:
            raise SimulationError("Матрица плотности имеет отрицательные собственные значения")
        return self

    def purity(self):
        return float(np.real(np.einsum("ij,ji->", self.matrix, self.matrix)))

    def probabilities(self):
        """Вероятности базисных состояний (диагональ), неотрицательные и нормированные."""
        probs = np.clip(np.real(np.diag(self.matrix)), 0.0, None)
        return probs / probs.sum()

    @classmethod
    def zero_state(cls, width):
        dim = 2 ** width
        rho = np.zeros((dim, dim), dtype=complex)
        rho[0, 0] = 1.0
        return cls(width, rho)

    @classmethod
    def from_statevector(cls, state):
        amps = state.amplitudes
        return cls(state.width, np.outer(amps, amps.conj()))


@dataclass(frozen=True)
class StateVector:
    """Чистое состояние n кубитов."""
    width: int
    amplitudes: np.ndarray

    def check(self):
        if abs(np.linalg.norm(self.amplitudes) - 1.0) > NORM_TOL:
            raise SimulationError("Норма вектора состояния отлична от 1")
        return self

    def probabilities(self):
        return np.abs(self.amplitudes) ** 2


def _validate_confusion_columns(matrices, width=None):
    matrices = tuple(np.asarray(m, dtype=float) for m in matrices)
    if width is not None and len(matrices) != width:
        raise SimulationError(f"Нужно {width} матриц считывания, получено {len(matrices)}")
    for q, m in enumerate(matrices):
        if m.shape != (2, 2):
            raise SimulationError(f"Матрица считывания кубита {q} должна быть 2x2")
        if np.any(m < 0) or np.any(m > 1):
            raise SimulationError(f"Элементы матрицы считывания кубита {q} вне [0, 1]")
        if np.max(np.abs(m.sum(axis=0) - 1.0)) > STOCHASTIC_TOL:
            raise SimulationError(f"Столбцы матрицы считывания кубита {q} не суммируются в 1")
    return matrices


def flip_confusion(p01, p10):
    """Матрица считывания по вероятностям 0->1 (p01) и 1->0 (p10)."""
    return np.array([[1.0 - p01, p10], [p01, 1.0 - p10]])


@dataclass(frozen=True)
class NoiseModel:
    """
    Синтетическая модель шума устройства.

    Attributes:
        p2: Вероятность двухкубитной деполяризации после каждого CNOT
        coherent_angle: Угол систематического ZZ-поворота после каждого CNOT (радианы)
        global_p: Вероятность глобальной деполяризации всей схемы (или None)
        readout: Матрицы ошибок считывания по кубитам (или None - идеальное считывание)
    """
    p2: float = 0.0
    coherent_angle: float = 0.0
    global_p: Optional[float] = None
    readout: Optional[Tuple[np.ndarray, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("p2", "global_p"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise SimulationError(f"{name} = {value} вне [0, 1]")
        if self.readout is not None:
            object.__setattr__(self, "readout", _validate_confusion_columns(self.readout))

    @classmethod
    def with_readout_flips(cls, width, p01, p10, **kwargs):
        """
        Модель с одинаковыми или покубитными вероятностями переворота при считывании.

        Args:
            width: Число кубитов
            p01: Вероятность прочитать 1 при истинном 0 (число или список по кубитам)
            p10: Вероятность прочитать 0 при истинной 1 (число или список по кубитам)
        """
        p01s = np.broadcast_to(np.asarray(p01, dtype=float), (width,))
        p10s = np.broadcast_to(np.asarray(p10, dtype=float), (width,))
        readout = tuple(flip_confusion(a, b) for a, b in zip(p01s, p10s))
        return cls(readout=readout, **kwargs)

    def readout_for(self, width):
        """Матрицы считывания для width кубитов (единичные при идеальном считывании)."""
        if self.readout is None:
            return tuple(np.eye(2) for _ in range(width))
        if len(self.readout) != width:
            raise SimulationError(f"Модель шума описывает {len(self.readout)} кубитов, схема - {width}")
        return self.readout

    @property
    def is_noiseless(self):
        ideal_readout = self.readout is None or all(np.array_equal(m, np.eye(2)) for m in self.readout)
        return self.p2 == 0 and self.coherent_angle == 0 and not self.global_p and ideal_readout


@dataclass
class CountHistogram:
    """
    Гистограмма исходов измерения.

    Attributes:
        width: Число кубитов
        counts: Битовая строка (кубит 0 слева) -> число исходов
        shots: Общее число измерений
    """
    width: int
    counts: Dict[str, int]
    shots: int

    def __post_init__(self):
        if sum(self.counts.values()) != self.shots:
            raise SimulationError("Сумма счетчиков не равна числу измерений")

    def to_vector(self):
        """Вектор счетчиков длины 2^n в порядке индексов базисных состояний."""
        vector = np.zeros(2 ** self.width)
        for bits, count in self.counts.items():
            vector[int(bits, 2)] = count
        return vector

    def frequencies(self):
        if self.shots == 0:
            raise SimulationError("Пустая гистограмма")
        return self.to_vector() / self.shots

    @classmethod
    def from_vector(cls, width, vector):
        counts = {format(i, f"0{width}b"): int(c) for i, c in enumerate(vector) if c}
        return cls(width, counts, int(sum(counts.values())))


# ---------------------------------------------------------------------------
# Каналы на тензорном представлении
# ---------------------------------------------------------------------------

def _as_tensor(matrix, width):
    return matrix.reshape((2,) * (2 * width))


def _as_matrix(tensor, width):
    dim = 2 ** width
    return tensor.reshape(dim, dim)


def _apply_unitary_tensor(rho_t, unitary, qubits, width):
    rho_t = apply_matrix(rho_t, unitary, qubits)
    return apply_matrix(rho_t, unitary.conj(), [width + q for q in qubits])


def _depolarize_tensor(rho_t, qubits, p, width):
    """(1-p) rho + p Tr_S(rho) ⊗ I_S / 2^|S| в тензорной форме."""
    if p == 0:
        return rho_t
    rows = list(EINSUM_LETTERS[:width])
    cols = list(EINSUM_LETTERS[width:2 * width])
    traced_cols = list(cols)
    for q in qubits:
        traced_cols[q] = rows[q]
    kept = [rows[q] for q in range(width) if q not in qubits] + [cols[q] for q in range(width) if q not in qubits]
    reduced = np.einsum("".join(rows + traced_cols) + "->" + "".join(kept), rho_t)

    operands = [reduced]
    subscripts = ["".join(kept)]
    half_identity = np.eye(2) / 2.0
    for q in qubits:
        operands.append(half_identity)
        subscripts.append(rows[q] + cols[q])
    mixed = np.einsum(",".join(subscripts) + "->" + "".join(rows + cols), *operands)
    return (1.0 - p) * rho_t + p * mixed


def _check_subset(qubits, width):
    qubits = tuple(int(q) for q in qubits)
    if not qubits or len(set(qubits)) != len(qubits) or any(q < 0 or q >= width for q in qubits):
        raise SimulationError(f"Некорректное подмножество кубитов {qubits} для ширины {width}")
    return qubits


def apply_depolarizing(rho, qubits, p):
    """
    Деполяризующий канал на подмножестве кубитов.

    Args:
        rho: Матрица плотности
        qubits: Подмножество кубитов (все кубиты - глобальный канал)
        p: Вероятность деполяризации в [0, 1]

    Returns:
        DensityMatrix: (1-p) rho + p (Tr_S rho) ⊗ I_S/2^|S|

    Raises:
        SimulationError: Некорректное подмножество или p вне [0, 1]
    """
    if not 0.0 <= p <= 1.0:
        raise SimulationError(f"Вероятность деполяризации {p} вне [0, 1]")
    width = rho.width
    qubits = _check_subset(qubits, width)
    if len(qubits) == width:
        return DensityMatrix(width, _global_depolarize(rho.matrix, p))
    tensor = _depolarize_tensor(_as_tensor(rho.matrix, width), qubits, p, width)
    return DensityMatrix(width, _as_matrix(tensor, width))


def _global_depolarize(matrix, p):
    dim = matrix.shape[0]
    trace = np.trace(matrix)
    return (1.0 - p) * matrix + p * trace * np.eye(dim, dtype=complex) / dim


def apply_unitary(rho, unitary, qubits):
    """rho -> U rho U^dagger для оператора на заданных кубитах."""
    tensor = _apply_unitary_tensor(_as_tensor(rho.matrix, rho.width), np.asarray(unitary), tuple(qubits), rho.width)
    return DensityMatrix(rho.width, _as_matrix(tensor, rho.width))


def simulate_density(circuit, noise=None, width_cap=DENSITY_WIDTH_CAP, check=True):
    """
    Симулирует схему на матрице плотности из |0...0><0...0|.

    Args:
        circuit: Схема
        noise: Модель шума (None - без шума); считывание здесь не применяется
        width_cap: Предельная ширина
        check: Проверять ли инварианты итогового состояния

    Returns:
        DensityMatrix: Итоговое состояние

    Raises:
        SimulationError: Ширина больше предела
    """
    noise = noise or NoiseModel()
    n = circuit.width
    if n > width_cap:
        raise SimulationError(f"Ширина {n} превышает предел {width_cap} для матрицы плотности")

    coherent = zz_rotation(noise.coherent_angle) if noise.coherent_angle else None
    rho_t = _as_tensor(DensityMatrix.zero_state(n).matrix, n)
    for layer in circuit.layers:
        for gate in layer:
            rho_t = _apply_unitary_tensor(rho_t, unitary_of(gate), gate.qubits, n)
            if gate.is_cnot:
                if coherent is not None:
                    rho_t = _apply_unitary_tensor(rho_t, coherent, gate.qubits, n)
                if noise.p2:
                    rho_t = _depolarize_tensor(rho_t, gate.qubits, noise.p2, n)

    matrix = _as_matrix(rho_t, n)
    if noise.global_p:
        matrix = _global_depolarize(matrix, noise.global_p)

    rho = DensityMatrix(n, np.ascontiguousarray(matrix))
    return rho.check() if check else rho


def simulate_statevector(circuit, width_cap=STATEVECTOR_WIDTH_CAP):
    """
    Бесшумная симуляция на векторе состояния из |0...0>.

    Raises:
        SimulationError: Ширина больше предела
    """
    n = circuit.width
    if n > width_cap:
        raise SimulationError(f"Ширина {n} превышает предел {width_cap} для вектора состояния")
    psi = np.zeros((2,) * n, dtype=complex)
    psi[(0,) * n] = 1.0
    for gate in circuit.gates():
        psi = apply_matrix(psi, unitary_of(gate), gate.qubits)
    return StateVector(n, psi.reshape(2 ** n)).check()


def _pauli_expectation(matrix, pauli, width):
    if set(pauli) <= {"I", "Z"}:
        diag = Observable(width, 0.0, ((1.0, pauli),)).diagonal()
        return np.dot(np.diag(matrix), diag)
    return np.einsum("ij,ji->", matrix, pauli_string_matrix(pauli))


def _pauli_expectation_statevector(state, pauli):
    n = state.width
    psi = state.amplitudes.reshape((2,) * n)
    image = psi
    for q, symbol in enumerate(pauli):
        if symbol != "I":
            image = apply_matrix(image, PAULI_MATRICES[symbol], (q,))
    return np.vdot(psi.reshape(-1), image.reshape(-1))


def expectation(state, observable):
    """
    Математическое ожидание наблюдаемой c + sum c_i tr(rho S_i).

    Args:
        state: DensityMatrix или StateVector
        observable: Наблюдаемая той же ширины

    Returns:
        float: Вещественное значение

    Raises:
        SimulationError: Ширины не совпадают или мнимая часть не пренебрежима
    """
    if state.width != observable.width:
        raise SimulationError(f"Ширина состояния {state.width} != ширине наблюдаемой {observable.width}")
    value = complex(observable.constant)
    for coef, pauli in observable.terms:
        if isinstance(state, StateVector):
            value += coef * _pauli_expectation_statevector(state, pauli)
        else:
            value += coef * _pauli_expectation(state.matrix, pauli, state.width)
    if abs(value.imag) > IMAGINARY_TOL:
        raise SimulationError(f"Мнимая часть ожидания {value.imag} превышает допуск")
    return float(value.real)


def sample_counts(rho, shots, readout=None, seed=None):
    """
    Выборка исходов измерения в вычислительном базисе с ошибками считывания.

    Args:
        rho: Матрица плотности
        shots: Число измерений (> 0)
        readout: Покубитные матрицы считывания (None - идеальное считывание)
        seed: Зерно генератора или np.random.Generator

    Returns:
        CountHistogram: Гистограмма наблюдаемых исходов

    Raises:
        SimulationError: shots <= 0
    """
    if shots <= 0:
        raise SimulationError(f"Число измерений должно быть положительным: {shots}")
    n = rho.width
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    probs = rho.probabilities()
    outcomes = rng.choice(2 ** n, size=shots, p=probs)

    shifts = np.arange(n - 1, -1, -1)
    bits = (outcomes[:, None] >> shifts) & 1
    if readout is not None:
        matrices = _validate_confusion_columns(readout, n)
        p01 = np.array([m[1, 0] for m in matrices])
        p10 = np.array([m[0, 1] for m in matrices])
        flip_prob = np.where(bits == 0, p01[None, :], p10[None, :])
        flips = rng.random(bits.shape) < flip_prob
        bits = bits ^ flips.astype(bits.dtype)

    observed = bits @ (1 << shifts)
    return CountHistogram.from_vector(n, np.bincount(observed, minlength=2 ** n))


def readout_distribution(probabilities, readout):
    """Точное распределение наблюдаемых исходов: (⊗ R_q) p."""
    response = np.array([[1.0]])
    for m in readout:
        response = np.kron(response, m)
    return response @ np.asarray(probabilities, dtype=float)


def random_density_matrix(width, rng, rank=None):
    """Случайная матрица плотности (для тестов и самопроверки)."""
    dim = 2 ** width
    rank = rank or dim
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return DensityMatrix(width, rho / np.trace(rho))


def random_statevector(width, rng):
    dim = 2 ** width
    amps = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return StateVector(width, amps / np.linalg.norm(amps))

