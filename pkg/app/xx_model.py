"""
Модель: квенч XX-цепочки H = -J sum (X_j X_{j+1} + Y_j Y_{j+1}).

Схемы Троттера-Сузуки второго порядка e^{-iF dt/2} e^{-iG dt} e^{-iF dt/2}, где F -
связи (0,1), (2,3), ..., G - связи (1,2), (3,4), ...; начальное состояние - доменная стенка
|1...10...0>; наблюдаемая - sigma_z последнего спина.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .circuit import Circuit, CircuitBuilder, Gate, Observable, apply_matrix, cnot, unitary_of
from .simulator import StateVector, expectation, simulate_statevector

# Предельная ширина для точных оракулов
EXACT_WIDTH_CAP = 12


class ModelError(ValueError):
    """Некорректные параметры модели."""


@dataclass(frozen=True)
class ModelParams:
    """
    Параметры XX-цепочки и разбиения по времени.

    Attributes:
        n: Длина цепочки (>= 2)
        J: Константа связи
        dt: Шаг по времени (hbar = 1)
        steps: Число шагов Троттера
        merge_half_steps: Сливать соседние полушаги F между шагами в один слой
    """
    n: int = 6
    J: float = 1.0
    dt: float = 0.25
    steps: int = 15
    merge_half_steps: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ModelError(f"Длина цепочки должна быть не меньше 2: {self.n}")
        if not self.dt > 0:
            raise ModelError(f"Шаг по времени должен быть положительным: {self.dt}")
        if self.steps < 0:
            raise ModelError(f"Число шагов не может быть отрицательным: {self.steps}")

    def with_steps(self, steps):
        return replace(self, steps=steps)

    @property
    def f_bonds(self):
        return tuple((i, i + 1) for i in range(0, self.n - 1, 2))

    @property
    def g_bonds(self):
        return tuple((i, i + 1) for i in range(1, self.n - 1, 2))


def build_hamiltonian(params):
    """
    Гамильтониан в виде суммы строк Паули: 2(n-1) членов с коэффициентом -J.

    Плотная форма - Observable.matrix().
    """
    terms = []
    for j in range(params.n - 1):
        for symbol in ("X", "Y"):
            pauli = ["I"] * params.n
            pauli[j] = pauli[j + 1] = symbol
            terms.append((-params.J, "".join(pauli)))
    return Observable(params.n, 0.0, tuple(terms))


def sparse_hamiltonian(params):
    """Разреженная матрица гамильтониана (для эволюции длинных цепочек)."""
    paulis = {
        "I": sp.identity(2, format="csr", dtype=complex),
        "X": sp.csr_matrix(np.array([[0, 1], [1, 0]], dtype=complex)),
        "Y": sp.csr_matrix(np.array([[0, -1j], [1j, 0]], dtype=complex)),
    }
    dim = 2 ** params.n
    result = sp.csr_matrix((dim, dim), dtype=complex)
    for coef, pauli in build_hamiltonian(params).terms:
        term = paulis[pauli[0]]
        for symbol in pauli[1:]:
            term = sp.kron(term, paulis[symbol], format="csr")
        result = result + coef * term
    return result


def xxyy_block(theta, a=0, b=1, width=2):
    """
    Блок exp[-i theta (XX + YY)] из двух CNOT.

    Середина CNOT (RX(2 theta) ⊗ RZ(2 theta)) CNOT дает exp[-i theta (XX + ZZ)];
    сопряжение вращениями RX(pi/2) на обоих кубитах переводит ZZ в YY. Оба CNOT
    одинаково ориентированы, поэтому CNOT-остов блока тождественен.

    Args:
        theta: Угол
        a: Первый кубит (управляющий для обоих CNOT)
        b: Второй кубит
        width: Ширина схемы

    Returns:
        Circuit: Схема с ровно двумя CNOT
    """
    builder = CircuitBuilder(width)
    builder.extend(_block_gates(theta, a, b))
    return builder.build()


def _block_gates(theta, a, b):
    half_pi = math.pi / 2.0
    return [
        Gate("RX", (a,), (-half_pi,)),
        Gate("RX", (b,), (-half_pi,)),
        cnot(a, b),
        Gate("RX", (a,), (2.0 * theta,)),
        Gate("RZ", (b,), (2.0 * theta,)),
        cnot(a, b),
        Gate("RX", (a,), (half_pi,)),
        Gate("RX", (b,), (half_pi,)),
    ]


def domain_wall_prep(n):
    """X на первых ceil(n/2) кубитах: |111000> при n = 6."""
    return Circuit(n, (tuple(Gate("X", (q,)) for q in range(math.ceil(n / 2))),))


def magnetization_observable(n):
    """sigma_z на последнем кубите цепочки (c = 0)."""
    return Observable.single(n, n - 1, "Z")


def _bond_layer(builder, bonds, theta):
    for a, b in bonds:
        builder.extend(_block_gates(theta, a, b))


def trotter_circuit(params, prepare=True):
    """
    Схема Троттера-Сузуки второго порядка на params.steps шагов.

    Угол блока theta = -J dt / d (знак гамильтониана), d = 2 для полушага F и
    d = 1 для G и слитых слоев F.

    Args:
        params: Параметры модели
        prepare: Начинать с подготовки доменной стенки

    Returns:
        Circuit: 16 CNOT на шаг без слияния, 10 steps + 6 со слиянием (при n = 6)
    """
    n = params.n
    builder = CircuitBuilder(n, domain_wall_prep(n).gates() if prepare else None)
    half_theta = -params.J * params.dt / 2.0
    full_theta = -params.J * params.dt

    if params.merge_half_steps and params.steps > 0:
        _bond_layer(builder, params.f_bonds, half_theta)
        for step in range(params.steps):
            _bond_layer(builder, params.g_bonds, full_theta)
            last = step == params.steps - 1
            _bond_layer(builder, params.f_bonds, half_theta if last else full_theta)
    else:
        for _ in range(params.steps):
            _bond_layer(builder, params.f_bonds, half_theta)
            _bond_layer(builder, params.g_bonds, full_theta)
            _bond_layer(builder, params.f_bonds, half_theta)

    return builder.build()


def _check_exact_width(n):
    if n > EXACT_WIDTH_CAP:
        raise ModelError(f"Ширина {n} превышает предел {EXACT_WIDTH_CAP} для точного расчета")


def _domain_wall_state(n):
    return simulate_statevector(domain_wall_prep(n))


def exact_magnetization(params, t, trotterized=True):
    """
    Точная намагниченность <sigma_z> последнего спина в момент t.

    Args:
        params: Параметры модели (steps не используется)
        t: Время; в режиме trotterized должно быть кратно dt
        trotterized: Учитывать ли разбиение Троттера (иначе - точная экспонента e^{-iHt})

    Returns:
        float: Значение намагниченности

    Raises:
        ModelError: Ширина больше предела или t не кратно dt
    """
    _check_exact_width(params.n)
    observable = magnetization_observable(params.n)
    if trotterized:
        steps = int(round(t / params.dt))
        if abs(steps * params.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ModelError(f"Время {t} не кратно шагу {params.dt}")
        state = simulate_statevector(trotter_circuit(params.with_steps(steps)))
        return expectation(state, observable)

    psi0 = _domain_wall_state(params.n).amplitudes
    psi = expm_multiply(-1j * t * sparse_hamiltonian(params), psi0)
    return expectation(StateVector(params.n, psi / np.linalg.norm(psi)), observable)


def exact_series(params, trotterized=True):
    """
    Точная намагниченность после 0, 1, ..., params.steps шагов.

    В режиме trotterized состояние продвигается по одному шагу; слияние полушагов
    не меняет унитарную матрицу и здесь не нужно.
    """
    _check_exact_width(params.n)
    observable = magnetization_observable(params.n)
    if not trotterized:
        return [exact_magnetization(params, k * params.dt, trotterized=False) for k in range(params.steps + 1)]

    one_step = trotter_circuit(replace(params, steps=1, merge_half_steps=False), prepare=False)
    state = _domain_wall_state(params.n)
    values = [expectation(state, observable)]
    for _ in range(params.steps):
        state = _advance(state, one_step)
        values.append(expectation(state, observable))
    return values


def _advance(state, circuit):
    n = state.width
    psi = state.amplitudes.reshape((2,) * n)
    for gate in circuit.gates():
        psi = apply_matrix(psi, unitary_of(gate), gate.qubits)
    return StateVector(n, psi.reshape(2 ** n))
