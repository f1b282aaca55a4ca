"""
Тесты симулятора матрицы плотности, шумовых каналов, ожиданий и выборки.
"""
import os
import sys

# Добавляем корневую директорию проекта в sys.path для импорта модулей
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import math
from itertools import product

import numpy as np
import pytest

from app.circuit import (
    PAULI_MATRICES, Circuit, CircuitBuilder, Gate, Observable, circuit_unitary, cnot, embed_gate,
    pauli_string_matrix,
)
from app.simulator import (
    DensityMatrix, NoiseModel, SimulationError, apply_depolarizing, apply_unitary, expectation, flip_confusion,
    random_density_matrix, random_statevector, readout_distribution, sample_counts, simulate_density,
    simulate_statevector, zz_rotation,
)
from app.transforms import derive_estimation_circuit
from app.xx_model import ModelParams, domain_wall_prep, magnetization_observable, trotter_circuit


def _random_circuit(width, depth, rng, cnots=True):
    builder = CircuitBuilder(width)
    for _ in range(depth):
        q = int(rng.integers(width))
        builder.append(Gate("U", (q,), tuple(rng.uniform(0, 2 * np.pi, size=3))))
        if cnots:
            a, b = rng.choice(width, size=2, replace=False)
            builder.append(cnot(int(a), int(b)))
    return builder.build()


def _paired_cnot_circuit(width, pairs, rng):
    """Случайная CNOT-сеть из пар одинаковых CNOT: остов тождественен."""
    builder = CircuitBuilder(width)
    for _ in range(pairs):
        a, b = rng.choice(width, size=2, replace=False)
        builder.append(cnot(int(a), int(b)))
        builder.append(Gate("RZ", (int(b),), (float(rng.uniform(0, np.pi)),)))
        builder.append(cnot(int(a), int(b)))
    return builder.build()


def _kraus_reference(circuit, p2):
    """Независимая реализация: полные матрицы и операторы Крауса деполяризации на паре."""
    n = circuit.width
    dim = 2 ** n
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0
    for gate in circuit.gates():
        u = embed_gate(gate, n)
        rho = u @ rho @ u.conj().T
        if gate.is_cnot and p2:
            a, b = gate.qubits
            mixed = np.zeros_like(rho)
            for pa, pb in product("IXYZ", repeat=2):
                label = ["I"] * n
                label[a], label[b] = pa, pb
                k = pauli_string_matrix("".join(label))
                mixed += k @ rho @ k.conj().T
            rho = (1 - p2) * rho + p2 * mixed / 16.0
    return rho


def test_identity_circuit_noiseless_is_zero_state():
    rho = simulate_density(Circuit(3))
    assert np.allclose(rho.matrix, DensityMatrix.zero_state(3).matrix)


def test_identity_circuit_global_depolarizing():
    rho = simulate_density(Circuit(1), NoiseModel(global_p=0.2))
    assert np.allclose(rho.matrix, [[0.9, 0], [0, 0.1]], atol=1e-15)


def test_density_matches_kraus_reference_on_estimation_circuit():
    rng = np.random.default_rng(210)
    target = _paired_cnot_circuit(6, 105, rng)
    estimation = derive_estimation_circuit(target, seed=rng)
    assert sum(1 for g in estimation.gates() if g.is_cnot) == 210

    observable = magnetization_observable(6)
    rho = simulate_density(estimation, NoiseModel(p2=0.01))
    reference = DensityMatrix(6, _kraus_reference(estimation, 0.01))
    assert abs(expectation(rho, observable) - expectation(reference, observable)) <= 1e-10


def test_local_depolarizing_matches_kraus_on_subset():
    rng = np.random.default_rng(3)
    rho = random_density_matrix(3, rng)
    p = 0.37
    result = apply_depolarizing(rho, (0, 2), p)

    mixed = np.zeros_like(rho.matrix)
    for pa, pb in product("IXYZ", repeat=2):
        k = pauli_string_matrix(pa + "I" + pb)
        mixed += k @ rho.matrix @ k
    assert np.allclose(result.matrix, (1 - p) * rho.matrix + p * mixed / 16.0, atol=1e-13)


def test_depolarizing_endpoints_and_bell_marginal():
    rng = np.random.default_rng(4)
    rho = random_density_matrix(2, rng)
    assert np.allclose(apply_depolarizing(rho, (0,), 0.0).matrix, rho.matrix)
    assert np.allclose(apply_depolarizing(rho, (0, 1), 1.0).matrix, np.eye(4) / 4)

    bell = simulate_density(Circuit(2, ((Gate("H", (0,)),), (cnot(0, 1),))))
    noisy = apply_depolarizing(bell, (0,), 0.5).matrix.reshape(2, 2, 2, 2)
    reduced = np.einsum("abad->bd", noisy)
    assert np.allclose(reduced, np.eye(2) / 2, atol=1e-14)


def test_depolarizing_rejects_bad_arguments():
    rho = DensityMatrix.zero_state(2)
    with pytest.raises(SimulationError):
        apply_depolarizing(rho, (0,), 1.5)
    with pytest.raises(SimulationError):
        apply_depolarizing(rho, (0, 0), 0.1)
    with pytest.raises(SimulationError):
        apply_depolarizing(rho, (2,), 0.1)


def test_global_depolarizing_composition():
    rng = np.random.default_rng(5)
    rho = random_density_matrix(3, rng)
    p, q = 0.2, 0.35
    twice = apply_depolarizing(apply_depolarizing(rho, range(3), p), range(3), q)
    once = apply_depolarizing(rho, range(3), 1 - (1 - p) * (1 - q))
    assert np.max(np.abs(twice.matrix - once.matrix)) <= 1e-12


def test_global_depolarizing_scales_traceless_expectation():
    rng = np.random.default_rng(6)
    observable = Observable(4, 0.0, ((0.7, "XZIY"), (-1.2, "IIZZ"), (0.4, "ZIII")))
    for _ in range(10):
        rho = random_density_matrix(4, rng)
        p = rng.uniform(0, 1)
        noisy = apply_depolarizing(rho, range(4), p)
        assert abs(expectation(noisy, observable) - (1 - p) * expectation(rho, observable)) <= 1e-12


def test_purity_never_increases():
    rng = np.random.default_rng(7)
    circuit = _random_circuit(3, 12, rng)
    noise = NoiseModel(p2=0.05, coherent_angle=0.1)
    rho = DensityMatrix.zero_state(3)
    purity = rho.purity()
    for gate in circuit.gates():
        step = _step(rho, gate, noise)
        assert step.purity() <= purity + 1e-12
        rho, purity = step, step.purity()


def _step(rho, gate, noise):
    rho = apply_unitary(rho, gate.matrix(), gate.qubits)
    if gate.is_cnot:
        rho = apply_unitary(rho, zz_rotation(noise.coherent_angle), gate.qubits)
        rho = apply_depolarizing(rho, gate.qubits, noise.p2)
    return rho


def test_coherent_error_is_zz_rotation_after_each_cnot():
    rng = np.random.default_rng(8)
    circuit = _random_circuit(3, 6, rng)
    eps = 0.3
    dim = 8
    u = np.eye(dim, dtype=complex)
    for gate in circuit.gates():
        u = embed_gate(gate, 3) @ u
        if gate.is_cnot:
            a, b = gate.qubits
            zz = ["I"] * 3
            zz[a] = zz[b] = "Z"
            u = (math.cos(eps / 2) * np.eye(dim) - 1j * math.sin(eps / 2) * pauli_string_matrix("".join(zz))) @ u
    psi = u[:, 0]
    rho = simulate_density(circuit, NoiseModel(coherent_angle=eps))
    assert np.allclose(rho.matrix, np.outer(psi, psi.conj()), atol=1e-12)
    assert rho.purity() == pytest.approx(1.0, abs=1e-12)


def test_density_invariants_hold_under_noise():
    rng = np.random.default_rng(9)
    rho = simulate_density(_random_circuit(4, 20, rng), NoiseModel(p2=0.03, coherent_angle=0.05, global_p=0.1))
    rho.check()
    assert np.all(rho.probabilities() >= 0)
    assert rho.probabilities().sum() == pytest.approx(1.0, abs=1e-12)


def test_width_caps():
    with pytest.raises(SimulationError):
        simulate_density(Circuit(3), width_cap=2)
    with pytest.raises(SimulationError):
        simulate_statevector(Circuit(3), width_cap=2)


def test_statevector_agrees_with_unitary_and_density():
    rng = np.random.default_rng(10)
    circuit = _random_circuit(4, 15, rng)
    state = simulate_statevector(circuit)
    assert np.allclose(state.amplitudes, circuit_unitary(circuit)[:, 0], atol=1e-10)
    observable = Observable(4, 0.1, ((1.0, "ZIIZ"), (0.5, "XYII")))
    assert expectation(state, observable) == pytest.approx(expectation(simulate_density(circuit), observable),
                                                           abs=1e-10)


def test_statevector_examples():
    plus = simulate_statevector(Circuit(1, ((Gate("H", (0,)),),)))
    assert np.allclose(plus.amplitudes, [1 / math.sqrt(2), 1 / math.sqrt(2)])

    wall = simulate_statevector(domain_wall_prep(6))
    assert wall.probabilities()[int("111000", 2)] == pytest.approx(1.0)


def test_trotter_statevector_matches_noiseless_density():
    circuit = trotter_circuit(ModelParams(n=6, steps=15))
    observable = magnetization_observable(6)
    assert expectation(simulate_statevector(circuit), observable) == pytest.approx(
        expectation(simulate_density(circuit), observable), abs=1e-9)


def test_expectation_examples():
    zero = DensityMatrix.zero_state(1)
    assert expectation(zero, Observable.single(1, 0, "Z")) == pytest.approx(1.0)

    rng = np.random.default_rng(11)
    rho = random_density_matrix(3, rng)
    assert expectation(rho, Observable(3, 0.3)) == pytest.approx(0.3)

    psi = random_statevector(6, rng)
    pure = DensityMatrix.from_statevector(psi)
    z6 = magnetization_observable(6)
    noisy = apply_depolarizing(pure, range(6), 0.25)
    assert expectation(noisy, z6) == pytest.approx(0.75 * expectation(psi, z6), abs=1e-12)

    with pytest.raises(SimulationError):
        expectation(rho, Observable.single(2, 0, "Z"))


def test_big_endian_expectation():
    rho = simulate_density(Circuit(2, ((Gate("X", (0,)),),)))
    assert expectation(rho, Observable.single(2, 0, "Z")) == pytest.approx(-1.0)
    assert expectation(rho, Observable.single(2, 1, "Z")) == pytest.approx(1.0)


def test_sampling_ideal_and_deterministic():
    rho = DensityMatrix.zero_state(2)
    counts = sample_counts(rho, 1000)
    assert counts.counts == {"00": 1000}

    rng = np.random.default_rng(12)
    mixed = random_density_matrix(3, rng)
    readout = tuple(flip_confusion(0.02, 0.05) for _ in range(3))
    first = sample_counts(mixed, 5000, readout, seed=99)
    second = sample_counts(mixed, 5000, readout, seed=99)
    assert first.counts == second.counts
    with pytest.raises(SimulationError):
        sample_counts(mixed, 0)


def test_sampling_readout_flip_rate_binomial():
    shots = 10 ** 6
    counts = sample_counts(DensityMatrix.zero_state(1), shots, (flip_confusion(0.05, 0.0),), seed=13)
    fraction = counts.counts.get("1", 0) / shots
    assert abs(fraction - 0.05) <= 3 * math.sqrt(0.05 * 0.95 / shots)


def test_readout_distribution_is_kron_of_confusions():
    readout = (flip_confusion(0.1, 0.2), flip_confusion(0.0, 0.3))
    probs = np.array([0.0, 0.0, 1.0, 0.0])  # |10>
    observed = readout_distribution(probs, readout)
    assert observed == pytest.approx([0.2 * 1.0, 0.0, 0.8 * 1.0, 0.0])


def test_noise_model_validation():
    with pytest.raises(SimulationError):
        NoiseModel(p2=1.5)
    with pytest.raises(SimulationError):
        NoiseModel(readout=(np.array([[0.9, 0.2], [0.2, 0.8]]),))
    noise = NoiseModel.with_readout_flips(3, 0.02, [0.01, 0.02, 0.03])
    assert len(noise.readout_for(3)) == 3
    assert noise.readout_for(3)[2][0, 1] == pytest.approx(0.03)
    with pytest.raises(SimulationError):
        noise.readout_for(2)
    assert NoiseModel.with_readout_flips(2, 0.0, 0.0).is_noiseless


def test_zz_rotation_matches_pauli_exponential():
    angle = 0.41
    expected = math.cos(angle / 2) * np.eye(4) - 1j * math.sin(angle / 2) * np.kron(PAULI_MATRICES["Z"],
                                                                                    PAULI_MATRICES["Z"])
    assert np.allclose(zz_rotation(angle), expected, atol=1e-15)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
