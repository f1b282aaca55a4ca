"""
Быстрая самопроверка формул на точных оракулах (секунды).
"""

import tempfile
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .circuit import Observable, circuit_unitary, pauli_string_matrix, phase_distance
from .experiment import ExperimentConfig, run
from .logger import log_action, log_error, log_result
from .mitigation import correct_depolarizing, zne_quadratic
from .simulator import DensityMatrix, apply_depolarizing, expectation, random_statevector
from .transforms import TWIRL_TABLE, enumerate_twirl_assignments
from .xx_model import ModelParams, xxyy_block

SELFTEST_SEED = 7
XXYY = pauli_string_matrix("XX") + pauli_string_matrix("YY")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_twirl_table():
    found = set(enumerate_twirl_assignments())
    passed = found == set(TWIRL_TABLE) and len(found) == 16
    return CheckResult("twirl_table", passed, f"найдено {len(found)} строк из 256 наборов")


def check_block(samples=20):
    rng = np.random.default_rng(SELFTEST_SEED)
    worst = 0.0
    for theta in rng.uniform(-np.pi, np.pi, size=samples):
        worst = max(worst, phase_distance(circuit_unitary(xxyy_block(theta)), expm(-1j * theta * XXYY)))
    return CheckResult("xxyy_block", worst <= 1e-10, f"максимальная ошибка {worst:.3g}")


def _random_traceless(width, rng, terms=4):
    paulis = []
    while len(paulis) < terms:
        pauli = "".join(rng.choice(list("IXYZ"), size=width))
        if set(pauli) != {"I"}:
            paulis.append(pauli)
    return Observable(width, 0.0, tuple((float(rng.normal()), p) for p in paulis))


def check_depolarizing_correction(samples=20, width=6):
    rng = np.random.default_rng(SELFTEST_SEED)
    worst = 0.0
    for _ in range(samples):
        rho = DensityMatrix.from_statevector(random_statevector(width, rng))
        observable = _random_traceless(width, rng)
        p = rng.uniform(0.0, 0.9)
        noisy = expectation(apply_depolarizing(rho, range(width), p), observable)
        worst = max(worst, abs(correct_depolarizing(noisy, 1.0 - p) - expectation(rho, observable)))
    return CheckResult("depolarizing_correction", worst <= 1e-12, f"максимальная ошибка {worst:.3g}")


def check_zne():
    result = zne_quadratic([(n, np.exp(-0.1 * n)) for n in (1, 3, 5)])
    return CheckResult("zne_quadratic", abs(result.value - 0.99800) <= 1e-5, f"значение {result.value:.6f}")


def check_noiseless_pipeline():
    config = ExperimentConfig(
        model=ModelParams(n=4, steps=2), p2=0.0, coherent_angle=0.0, readout_p01=0.0, readout_p10=0.0,
        instances=4, exact=True, master_seed=SELFTEST_SEED)
    with tempfile.TemporaryDirectory() as run_dir:
        table = run(config, run_dir)
    worst = 0.0
    for row in table.rows:
        for value in (row.original, row.target_zne, row.mitigated):
            if value is None:
                return CheckResult("noiseless_pipeline", False, f"пропуск на шаге {row.step}")
            worst = max(worst, abs(value - row.exact_trotter))
    return CheckResult("noiseless_pipeline", worst <= 1e-9, f"максимальная ошибка {worst:.3g}")


CHECKS = (check_twirl_table, check_block, check_depolarizing_correction, check_zne, check_noiseless_pipeline)


def run_selftest():
    """
    Выполняет все проверки.

    Returns:
        list: CheckResult по каждой проверке
    """
    results = []
    for check in CHECKS:
        log_action(f"Проверка {check.__name__}")
        start = time.time()
        try:
            result = check()
        except Exception as e:
            log_error(f"Проверка {check.__name__} упала", e)
            result = CheckResult(check.__name__, False, f"{type(e).__name__}: {e}")
        log_result(f"Проверка {result.name}: {'пройдена' if result.passed else 'НЕ пройдена'}", {
            "detail": result.detail,
            "time_taken": f"{time.time() - start:.2f} сек"
        })
        results.append(result)
    return results
