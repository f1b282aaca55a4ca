"""
Сквозные проверки полного масштаба.

Долгие тесты помечены slow и запускаются с --slow или XXMITIG_SLOW=1:
    XXMITIG_SLOW=1 pytest tests/test_acceptance.py
"""
import os
import sys

# Добавляем корневую директорию проекта в sys.path для импорта модулей
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np
import pytest

from app.experiment import (
    KIND_TARGET, MAGNETIZATION_TABLE, MITIGATED_TABLE, ExperimentConfig, Job, build_job_circuit, derive_seed, run,
)
from app.simulator import DensityMatrix, simulate_density
from app.xx_model import ModelParams

WORKERS = int(os.environ.get("XXMITIG_WORKERS", "1"))


def _coherent_config(n, steps, instances):
    return ExperimentConfig(model=ModelParams(n=n, steps=steps), p2=0.0, coherent_angle=0.05,
                            readout_p01=0.0, readout_p10=0.0, instances=instances, exact=True,
                            master_seed=20210601, workers=WORKERS)


def _purities(config, step):
    """Чистота каждого экземпляра и чистота усредненного по экземплярам состояния."""
    noise = config.noise_model()
    states = []
    for instance in range(config.instances):
        seed = derive_seed(config.master_seed, step, 1, instance, KIND_TARGET)
        circuit = build_job_circuit(Job(config, step, 1, instance, KIND_TARGET, seed))
        states.append(simulate_density(circuit, noise).matrix)
    n = config.model.n
    single = [DensityMatrix(n, rho).purity() for rho in states]
    averaged = DensityMatrix(n, np.mean(states, axis=0)).purity()
    return single, averaged


def test_twirling_turns_coherent_error_into_mixing():
    config = _coherent_config(n=4, steps=2, instances=32)
    single, averaged = _purities(config, step=2)
    assert np.median(single) == pytest.approx(1.0, abs=1e-9)
    assert averaged < np.median(single)


@pytest.mark.slow
def test_coherent_error_is_mitigated(tmp_path):
    config = _coherent_config(n=6, steps=5, instances=256)
    single, averaged = _purities(config, step=5)
    assert averaged < np.median(single)

    table = run(config, tmp_path)
    for row in table.rows:
        mitigated_error = abs(row.mitigated - row.exact_trotter)
        original_error = abs(row.original - row.exact_trotter)
        assert mitigated_error <= original_error + 1e-9


def _full_config(**overrides):
    values = dict(model=ModelParams(n=6, dt=0.25, steps=15), p2=0.01, coherent_angle=0.02,
                  readout_p01=0.02, readout_p10=0.05, instances=128, exact=True, workers=WORKERS)
    values.update(overrides)
    return ExperimentConfig(**values)


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("full_exact")
    return run_dir, run(_full_config(), run_dir)


@pytest.mark.slow
def test_end_to_end_mitigation(full_run):
    _, table = full_run
    assert not table.failed_cells
    assert max(abs(row.mitigated - row.exact_trotter) for row in table.rows) <= 0.10
    late = [abs(row.original - row.exact_trotter) for row in table.rows if row.step >= 10]
    assert max(late) >= 0.3


@pytest.mark.slow
def test_end_to_end_is_deterministic(full_run, tmp_path):
    run_dir, _ = full_run
    run(_full_config(), tmp_path)
    for name in (MAGNETIZATION_TABLE, MITIGATED_TABLE):
        assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes()


@pytest.mark.slow
def test_sampled_mode_agrees_with_exact(full_run, tmp_path):
    _, exact_table = full_run
    sampled_table = run(_full_config(exact=False, shots=2048, unfold_iterations=100), tmp_path)
    for exact_row, sampled_row in zip(exact_table.rows, sampled_table.rows):
        assert abs(sampled_row.mitigated - exact_row.mitigated) <= 3 * sampled_row.mitigated_unc


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
