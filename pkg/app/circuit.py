"""
Промежуточное представление квантовых схем.

Схема состоит из слоев; в слое гейты действуют на попарно непересекающиеся кубиты.
Алфавит гейтов закрыт: паули, H, вращения RX/RY/RZ, общее вращение U (три угла Эйлера)
и CNOT. Этого хватает для блоков XX-цепочки, твирлинга и схем оценки шума.

Порядок кубитов big-endian: кубит 0 соответствует старшему биту, т.е. самому левому
символу битовой строки. Состояние |111000> - это X на кубитах 0, 1, 2.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

# Предельная ширина для построения плотной унитарной матрицы схемы
UNITARY_WIDTH_CAP = 10

SINGLE_QUBIT_KINDS = ("I", "X", "Y", "Z", "H", "RX", "RY", "RZ", "U")
TWO_QUBIT_KINDS = ("CNOT",)
GATE_KINDS = SINGLE_QUBIT_KINDS + TWO_QUBIT_KINDS

# Число углов для каждого типа гейта
ANGLE_ARITY = {"RX": 1, "RY": 1, "RZ": 1, "U": 3}

PAULI_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

CNOT_MATRIX = np.array([
    [1, 0, 0, 0],
    [0, 1, 0, 0],
    [0, 0, 0, 1],
    [0, 0, 1, 0],
], dtype=complex)

_HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2.0)

# Запас букв для einsum-подстрок
EINSUM_LETTERS = string.ascii_letters


class CircuitError(ValueError):
    """Некорректный гейт, схема или наблюдаемая."""


def rx_matrix(theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def ry_matrix(theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz_matrix(theta):
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=complex)


def u_matrix(theta, phi, lam):
    """Общее вращение U(theta, phi, lam) = RZ(phi) RY(theta) RZ(lam)."""
    return rz_matrix(phi) @ ry_matrix(theta) @ rz_matrix(lam)


@dataclass(frozen=True)
class Gate:
    """
    Неизменяемый гейт.

    Attributes:
        kind: Тип гейта из GATE_KINDS
        qubits: Один индекс для однокубитных гейтов, (control, target) для CNOT
        angles: Углы в радианах (только для RX, RY, RZ, U)
    """
    kind: str
    qubits: Tuple[int, ...]
    angles: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))

        if self.kind not in GATE_KINDS:
            raise CircuitError(f"Неизвестный тип гейта: {self.kind}")
        expected_qubits = 2 if self.kind in TWO_QUBIT_KINDS else 1
        if len(self.qubits) != expected_qubits:
            raise CircuitError(f"Гейт {self.kind} действует на {expected_qubits} кубит(а), получено {self.qubits}")
        if len(set(self.qubits)) != len(self.qubits):
            raise CircuitError(f"Кубиты гейта {self.kind} должны различаться: {self.qubits}")
        if any(q < 0 for q in self.qubits):
            raise CircuitError(f"Отрицательный индекс кубита: {self.qubits}")
        arity = ANGLE_ARITY.get(self.kind, 0)
        if len(self.angles) != arity:
            raise CircuitError(f"Гейт {self.kind} требует {arity} углов, получено {len(self.angles)}")

    @property
    def is_cnot(self):
        return self.kind == "CNOT"

    def matrix(self):
        """Точная унитарная матрица гейта (2x2 или 4x4)."""
        return unitary_of(self)

    def inverse(self):
        """Обратный гейт: паули, H и CNOT самообратны, у вращений углы меняют знак."""
        if self.kind in ("RX", "RY", "RZ"):
            return Gate(self.kind, self.qubits, (-self.angles[0],))
        if self.kind == "U":
            theta, phi, lam = self.angles
            return Gate("U", self.qubits, (-theta, -lam, -phi))
        return self


def unitary_of(gate):
    """
    Возвращает унитарную матрицу гейта.

    Args:
        gate: Гейт

    Returns:
        np.ndarray: Матрица 2x2 или 4x4 (для CNOT в базисе |control target>)
    """
    kind = gate.kind
    if kind in PAULI_MATRICES:
        return PAULI_MATRICES[kind].copy()
    if kind == "H":
        return _HADAMARD.copy()
    if kind == "RX":
        return rx_matrix(gate.angles[0])
    if kind == "RY":
        return ry_matrix(gate.angles[0])
    if kind == "RZ":
        return rz_matrix(gate.angles[0])
    if kind == "U":
        return u_matrix(*gate.angles)
    return CNOT_MATRIX.copy()


@dataclass(frozen=True)
class Circuit:
    """
    Неизменяемая слоистая схема на width кубитах.

    Attributes:
        width: Число кубитов
        layers: Кортеж слоев; слой - кортеж гейтов на непересекающихся кубитах
    """
    width: int
    layers: Tuple[Tuple[Gate, ...], ...] = ()

    def __post_init__(self):
        if self.width < 1:
            raise CircuitError(f"Ширина схемы должна быть положительной: {self.width}")
        layers = tuple(tuple(layer) for layer in self.layers)
        for layer in layers:
            used = set()
            for gate in layer:
                for q in gate.qubits:
                    if q >= self.width:
                        raise CircuitError(f"Кубит {q} вне схемы ширины {self.width}")
                    if q in used:
                        raise CircuitError(f"Кубит {q} занят дважды в одном слое")
                    used.add(q)
        object.__setattr__(self, "layers", layers)

    def gates(self):
        """Гейты в порядке слоев."""
        return [gate for layer in self.layers for gate in layer]

    @property
    def depth(self):
        return len(self.layers)

    def __len__(self):
        return sum(len(layer) for layer in self.layers)


class CircuitBuilder:
    """
    Изменяемый построитель схемы с жадной упаковкой слоев.

    Гейт попадает в последний слой, если его кубиты там свободны, иначе открывает
    новый слой. Порядок гейтов на каждом кубите сохраняется.
    """

    def __init__(self, width, gates=None):
        if width < 1:
            raise CircuitError(f"Ширина схемы должна быть положительной: {width}")
        self.width = width
        self._layers: List[List[Gate]] = []
        self._last_used: set = set()
        for gate in gates or ():
            self.append(gate)

    def append(self, gate):
        for q in gate.qubits:
            if q >= self.width:
                raise CircuitError(f"Кубит {q} вне схемы ширины {self.width}")
        if self._layers and not self._last_used.intersection(gate.qubits):
            self._layers[-1].append(gate)
        else:
            self._layers.append([gate])
            self._last_used = set()
        self._last_used.update(gate.qubits)
        return self

    def extend(self, gates):
        for gate in gates:
            self.append(gate)
        return self

    def build(self):
        return Circuit(self.width, tuple(tuple(layer) for layer in self._layers))


def append(circuit, gate):
    """
    Добавляет гейт в схему, возвращая новую схему.

    Args:
        circuit: Исходная схема
        gate: Добавляемый гейт

    Returns:
        Circuit: Новая схема; гейт лег в последний слой, если его кубиты там свободны

    Raises:
        CircuitError: Индекс кубита вне ширины схемы
    """
    for q in gate.qubits:
        if q >= circuit.width:
            raise CircuitError(f"Кубит {q} вне схемы ширины {circuit.width}")
    if circuit.layers and not any(q in layer_gate.qubits
                                  for layer_gate in circuit.layers[-1] for q in gate.qubits):
        layers = circuit.layers[:-1] + (circuit.layers[-1] + (gate,),)
    else:
        layers = circuit.layers + ((gate,),)
    return Circuit(circuit.width, layers)


def compose(first, second):
    """Схема first, затем second (жадная упаковка на стыке)."""
    if first.width != second.width:
        raise CircuitError(f"Ширины схем не совпадают: {first.width} и {second.width}")
    builder = CircuitBuilder(first.width, first.gates())
    builder.extend(second.gates())
    return builder.build()


def cnot_count(circuit):
    """Число CNOT в схеме."""
    return sum(1 for gate in circuit.gates() if gate.is_cnot)


def apply_matrix(tensor, matrix, axes):
    """
    Применяет оператор к осям тензора.

    Args:
        tensor: Тензор с осями размера 2
        matrix: Матрица 2^k x 2^k
        axes: Оси тензора, на которые действует оператор (в порядке big-endian)

    Returns:
        np.ndarray: Новый тензор той же формы
    """
    k = len(axes)
    op = matrix.reshape((2,) * (2 * k))
    out = np.tensordot(op, tensor, axes=(list(range(k, 2 * k)), list(axes)))
    return np.moveaxis(out, list(range(k)), list(axes))


def circuit_unitary(circuit, width_cap=UNITARY_WIDTH_CAP):
    """
    Плотная унитарная матрица схемы (произведение слоев).

    Args:
        circuit: Схема
        width_cap: Предельная ширина

    Returns:
        np.ndarray: Матрица 2^n x 2^n

    Raises:
        CircuitError: Ширина больше предела
    """
    n = circuit.width
    if n > width_cap:
        raise CircuitError(f"Ширина {n} превышает предел {width_cap} для плотной унитарной матрицы")
    dim = 2 ** n
    tensor = np.eye(dim, dtype=complex).reshape((2,) * (2 * n))
    for gate in circuit.gates():
        tensor = apply_matrix(tensor, unitary_of(gate), gate.qubits)
    return tensor.reshape(dim, dim)


def embed_gate(gate, width):
    """Матрица гейта, вложенная в пространство width кубитов."""
    return circuit_unitary(Circuit(width, ((gate,),)))


def equal_up_to_phase(a, b, atol=1e-10):
    """
    Сравнивает две матрицы с точностью до глобальной фазы.

    Фаза выравнивается по элементу с максимальным модулем.

    Returns:
        bool: True, если матрицы совпадают после выравнивания фазы
    """
    return phase_distance(a, b) <= atol


def phase_distance(a, b):
    """Операторная норма разности после выравнивания глобальной фазы."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        return np.inf
    idx = np.unravel_index(np.argmax(np.abs(a)), a.shape)
    if abs(b[idx]) == 0:
        return np.inf
    phase = a[idx] / b[idx]
    phase /= abs(phase)
    return float(np.linalg.norm(a - phase * b, ord=2))


def cnot_skeleton_is_identity(circuit):
    """
    Проверяет над GF(2), что CNOT-остов схемы действует тождественно.

    CNOT-сеть - линейное отображение x -> Ax базисных состояний; остов тождественен,
    если A = I. Однокубитные гейты игнорируются.
    """
    n = circuit.width
    matrix = np.eye(n, dtype=np.uint8)
    for gate in circuit.gates():
        if gate.is_cnot:
            control, target = gate.qubits
            matrix[target] ^= matrix[control]
    return bool(np.array_equal(matrix, np.eye(n, dtype=np.uint8)))


# ---------------------------------------------------------------------------
# Наблюдаемые
# ---------------------------------------------------------------------------

def pauli_string_matrix(pauli):
    """Плотная матрица строки Паули, например 'IZX'."""
    result = np.array([[1.0 + 0j]])
    for symbol in pauli:
        result = np.kron(result, PAULI_MATRICES[symbol])
    return result


@dataclass(frozen=True)
class Observable:
    """
    Взвешенная сумма строк Паули O = c I + sum_i c_i S_i.

    Attributes:
        width: Число кубитов
        constant: Коэффициент c при тождественной строке
        terms: Кортеж пар (c_i, строка Паули), ни одна строка не тождественна
    """
    width: int
    constant: float = 0.0
    terms: Tuple[Tuple[float, str], ...] = field(default_factory=tuple)

    def __post_init__(self):
        terms = tuple((float(coef), str(pauli)) for coef, pauli in self.terms)
        for coef, pauli in terms:
            if len(pauli) != self.width:
                raise CircuitError(f"Длина строки Паули {pauli!r} не равна ширине {self.width}")
            if set(pauli) - set("IXYZ"):
                raise CircuitError(f"Недопустимые символы в строке Паули {pauli!r}")
            if set(pauli) == {"I"}:
                raise CircuitError("Тождественная строка хранится в constant, а не в terms")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "constant", float(self.constant))

    @classmethod
    def from_terms(cls, width, terms):
        """Собирает наблюдаемую, перенося тождественные строки в constant."""
        constant = 0.0
        kept = []
        for coef, pauli in terms:
            if set(pauli) == {"I"}:
                constant += float(coef)
            else:
                kept.append((float(coef), pauli))
        return cls(width, constant, tuple(kept))

    @classmethod
    def single(cls, width, qubit, symbol, coefficient=1.0):
        """Однокубитная наблюдаемая, например sigma_z на последнем кубите."""
        pauli = "".join(symbol if q == qubit else "I" for q in range(width))
        return cls(width, 0.0, ((coefficient, pauli),))

    def traceless_part(self):
        """O' = O - cI."""
        return Observable(self.width, 0.0, self.terms)

    def matrix(self):
        """Плотная матрица наблюдаемой."""
        dim = 2 ** self.width
        result = self.constant * np.eye(dim, dtype=complex)
        for coef, pauli in self.terms:
            result = result + coef * pauli_string_matrix(pauli)
        return result

    def is_diagonal(self):
        return all(set(pauli) <= {"I", "Z"} for _, pauli in self.terms)

    def diagonal(self):
        """Диагональ наблюдаемой из I/Z-строк (значения на базисных состояниях)."""
        if not self.is_diagonal():
            raise CircuitError("Наблюдаемая содержит X/Y и не диагональна")
        dim = 2 ** self.width
        indices = np.arange(dim)
        values = np.full(dim, self.constant, dtype=float)
        for coef, pauli in self.terms:
            signs = np.ones(dim)
            for q, symbol in enumerate(pauli):
                if symbol == "Z":
                    bit = (indices >> (self.width - 1 - q)) & 1
                    signs = signs * (1 - 2 * bit)
            values = values + coef * signs
        return values


# ---------------------------------------------------------------------------
# Текстовая сериализация
# ---------------------------------------------------------------------------

def circuit_to_text(circuit):
    """
    Сериализует схему: строка 'width N', затем по гейту на строку, слои разделены 'layer'.

    Формат строки гейта: kind q0 [q1] [углы с 17 значащими цифрами].
    """
    lines = [f"width {circuit.width}"]
    for layer in circuit.layers:
        lines.append("layer")
        for gate in layer:
            parts = [gate.kind] + [str(q) for q in gate.qubits] + [f"{a:.17g}" for a in gate.angles]
            lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def circuit_from_text(text):
    """Восстанавливает схему из circuit_to_text (слои сохраняются как есть)."""
    width: Optional[int] = None
    layers: List[List[Gate]] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "width":
            width = int(parts[1])
        elif parts[0] == "layer":
            layers.append([])
        else:
            if width is None or not layers:
                raise CircuitError(f"Строка гейта до заголовка или слоя: {line!r}")
            kind = parts[0]
            nq = 2 if kind in TWO_QUBIT_KINDS else 1
            qubits = tuple(int(p) for p in parts[1:1 + nq])
            angles = tuple(float(p) for p in parts[1 + nq:])
            layers[-1].append(Gate(kind, qubits, angles))
    if width is None:
        raise CircuitError("В тексте нет заголовка 'width'")
    return Circuit(width, tuple(tuple(layer) for layer in layers))


def cnot(control, target):
    return Gate("CNOT", (control, target))

