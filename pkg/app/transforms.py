"""
Преобразования схем: рандомизированная компиляция (твирлинг Паули для CNOT),
размножение CNOT для экстраполяции к нулевому шуму и построение схем оценки шума.

Все преобразования - чистые функции (схема, зерно) -> схема.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Dict, List, Optional, Sequence

import numpy as np

from .circuit import (
    CNOT_MATRIX, PAULI_MATRICES, SINGLE_QUBIT_KINDS, CircuitBuilder, Gate,
    cnot_skeleton_is_identity, equal_up_to_phase, phase_distance, unitary_of,
)
from .logger import log_warning

PAULI_LABELS = ("I", "X", "Y", "Z")

# Допустимые кратности размножения CNOT для экстраполяции
FOLD_FACTORS = (1, 3, 5)

# Допуск при выбрасывании тождественных однокубитных композиций
IDENTITY_TOL = 1e-12


class TransformError(ValueError):
    """Гейт вне закрытого алфавита или недопустимый параметр преобразования."""


@dataclass(frozen=True)
class TwirlAssignment:
    """
    Строка таблицы твирлинга: (P⊗Q) CNOT (R⊗S) = CNOT с точностью до фазы.

    R и S стоят до CNOT (на управляющем и целевом кубитах), P и Q - после.
    """
    p: str
    q: str
    r: str
    s: str

    def dressed_unitary(self):
        after = np.kron(PAULI_MATRICES[self.p], PAULI_MATRICES[self.q])
        before = np.kron(PAULI_MATRICES[self.r], PAULI_MATRICES[self.s])
        return after @ CNOT_MATRIX @ before

    def is_valid(self, atol=1e-12):
        return phase_distance(self.dressed_unitary(), CNOT_MATRIX) <= atol


# Все 16 допустимых строк; выбор независим и равномерен для каждого CNOT
TWIRL_TABLE = tuple(TwirlAssignment(*row) for row in (
    ("I", "I", "I", "I"), ("I", "X", "I", "X"), ("I", "Y", "Z", "Y"), ("I", "Z", "Z", "Z"),
    ("Y", "I", "Y", "X"), ("Y", "X", "Y", "I"), ("Y", "Y", "X", "Z"), ("Y", "Z", "X", "Y"),
    ("X", "I", "X", "X"), ("X", "X", "X", "I"), ("X", "Y", "Y", "Z"), ("X", "Z", "Y", "Y"),
    ("Z", "I", "Z", "I"), ("Z", "X", "Z", "X"), ("Z", "Y", "I", "Y"), ("Z", "Z", "I", "Z"),
))


def enumerate_twirl_assignments(atol=1e-12):
    """Перебор всех 256 наборов (P, Q, R, S) с отбором тех, что сохраняют CNOT."""
    return [assignment for assignment in (TwirlAssignment(*labels) for labels in product(PAULI_LABELS, repeat=4))
            if assignment.is_valid(atol)]


@dataclass(frozen=True)
class FoldFactor:
    """Нечетная положительная кратность размножения CNOT."""
    value: int

    def __post_init__(self):
        if int(self.value) != self.value or self.value < 1 or self.value % 2 == 0:
            raise TransformError(f"Кратность размножения должна быть нечетной и положительной: {self.value}")


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def zyz_angles(matrix):
    """
    Углы (theta, phi, lam) такие, что U(theta, phi, lam) = matrix с точностью до фазы.

    Args:
        matrix: Унитарная матрица 2x2

    Returns:
        tuple: Три угла Эйлера в радианах
    """
    v = np.asarray(matrix, dtype=complex)
    v = v / np.sqrt(np.linalg.det(v))
    a, b = v[0, 0], v[1, 0]
    theta = 2.0 * np.arctan2(abs(b), abs(a))
    total = -2.0 * np.angle(a) if abs(a) > IDENTITY_TOL else 0.0
    diff = 2.0 * np.angle(b) if abs(b) > IDENTITY_TOL else 0.0
    return float(theta), float((total + diff) / 2.0), float((total - diff) / 2.0)


def _merge_single_qubit(gates, qubit):
    """Сводит последовательность однокубитных гейтов к не более чем одному гейту."""
    gates = [gate for gate in gates if gate.kind != "I"]
    if len(gates) <= 1:
        return gates
    matrix = np.eye(2, dtype=complex)
    for gate in gates:
        matrix = unitary_of(gate) @ matrix
    if equal_up_to_phase(matrix, np.eye(2), atol=IDENTITY_TOL):
        return []
    return [Gate("U", (qubit,), zyz_angles(matrix))]


def _check_closed(gate):
    if gate.kind not in SINGLE_QUBIT_KINDS and not gate.is_cnot:
        raise TransformError(f"Гейт {gate.kind} вне закрытого алфавита")


def randomized_compile(circuit, seed=None, assignments: Optional[Sequence[TwirlAssignment]] = None):
    """
    Рандомизированная компиляция: каждый CNOT одевается случайной строкой таблицы твирлинга.

    Одевающие гейты сливаются с соседними однокубитными гейтами того же кубита, так что
    структура "слой CNOT - слой однокубитных гейтов" сохраняется.

    Args:
        circuit: Исходная схема
        seed: Зерно или np.random.Generator
        assignments: Явные строки твирлинга по порядку CNOT (вместо случайного выбора)

    Returns:
        Circuit: Схема с той же унитарной матрицей (с точностью до фазы) и тем же числом CNOT

    Raises:
        TransformError: Гейт вне закрытого алфавита или не хватает явных строк
    """
    rng = _rng(seed)
    explicit = iter(assignments) if assignments is not None else None
    n = circuit.width
    pending: Dict[int, List[Gate]] = {q: [] for q in range(n)}
    builder = CircuitBuilder(n)

    def flush(qubit):
        builder.extend(_merge_single_qubit(pending[qubit], qubit))
        pending[qubit] = []

    for layer in circuit.layers:
        cnots = []
        for gate in layer:
            _check_closed(gate)
            if gate.is_cnot:
                cnots.append(gate)
            else:
                pending[gate.qubits[0]].append(gate)
        if not cnots:
            continue

        rows = []
        for _ in cnots:
            if explicit is not None:
                try:
                    rows.append(next(explicit))
                except StopIteration:
                    raise TransformError("Явных строк твирлинга меньше, чем CNOT в схеме") from None
            else:
                rows.append(TWIRL_TABLE[int(rng.integers(len(TWIRL_TABLE)))])

        for gate, row in zip(cnots, rows):
            control, target = gate.qubits
            pending[control].append(Gate(row.r, (control,)))
            pending[target].append(Gate(row.s, (target,)))
            flush(control)
            flush(target)
        builder.extend(cnots)
        for gate, row in zip(cnots, rows):
            control, target = gate.qubits
            pending[control] = [Gate(row.p, (control,))]
            pending[target] = [Gate(row.q, (target,))]

    for qubit in range(n):
        flush(qubit)
    return builder.build()


def fold_cnots(circuit, factor):
    """
    Заменяет каждый CNOT на factor последовательных копий на той же паре.

    Args:
        circuit: Схема
        factor: Нечетная кратность (int или FoldFactor)

    Returns:
        Circuit: Схема с числом CNOT, умноженным на factor; без шума унитарная матрица та же
    """
    factor = factor if isinstance(factor, FoldFactor) else FoldFactor(factor)
    if factor.value == 1:
        return circuit
    builder = CircuitBuilder(circuit.width)
    for layer in circuit.layers:
        cnots = [gate for gate in layer if gate.is_cnot]
        builder.extend(gate for gate in layer if not gate.is_cnot)
        for _ in range(factor.value):
            builder.extend(cnots)
    return builder.build()


def random_rotation_layer(width, seed=None):
    """Слой независимых вращений U с равномерно выбранными углами Эйлера."""
    rng = _rng(seed)
    gates = []
    for qubit in range(width):
        theta = rng.uniform(0.0, np.pi)
        phi, lam = rng.uniform(0.0, 2.0 * np.pi, size=2)
        gates.append(Gate("U", (qubit,), (theta, phi, lam)))
    return gates


def derive_estimation_circuit(target, seed=None):
    """
    Схема оценки шума: CNOT целевой схемы без однокубитных гейтов между слоем
    случайных вращений и слоем их точных обратных.

    Идеальный выход - |0...0>, если CNOT-остов тождественен (для блоков XX-цепочки это так:
    CNOT каждого блока идут парой на одной паре кубитов).

    Args:
        target: Целевая схема
        seed: Зерно или np.random.Generator

    Returns:
        Circuit: Схема оценки с тем же числом и порядком CNOT
    """
    for gate in target.gates():
        _check_closed(gate)
    rotations = random_rotation_layer(target.width, seed)

    builder = CircuitBuilder(target.width)
    builder.extend(rotations)
    for layer in target.layers:
        builder.extend(gate for gate in layer if gate.is_cnot)
    builder.extend(gate.inverse() for gate in rotations)
    estimation = builder.build()

    if not cnot_skeleton_is_identity(target):
        log_warning("CNOT-остов целевой схемы не тождественен: идеальный выход схемы оценки не |0...0>",
                    {"width": target.width})
    return estimation
