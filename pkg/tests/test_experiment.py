"""
Тесты эксперимента: конфигурация, зерна, записи, калибровка, запуск, возобновление и таблицы.
"""
import os
import sys

# Добавляем корневую директорию проекта в sys.path для импорта модулей
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import csv
import shutil

import numpy as np
import pytest

from app.circuit import cnot_count
from app.experiment import (
    CONFIG_FILE, CONFUSION_FILE, FIDELITY_HEADER, FIDELITY_TABLE, KIND_ESTIMATION, KIND_ORIGINAL, KIND_TARGET,
    MAGNETIZATION_HEADER, MAGNETIZATION_TABLE, MITIGATED_TABLE, RECORDS_FILE, TARGET_TABLE, ExperimentConfig,
    ExperimentError, Job, RecordStore, RunRecord, build_job_circuit, build_table, calibrate, derive_seed,
    execute_job, load_config, load_confusion, plan_jobs, report, run, save_config,
)
from app.mitigation import MODE_ALL_ZEROS
from app.xx_model import ModelParams

TABLES = (MAGNETIZATION_TABLE, FIDELITY_TABLE, TARGET_TABLE, MITIGATED_TABLE)


def _small_config(**overrides):
    values = dict(model=ModelParams(n=4, steps=2), p2=0.01, coherent_angle=0.0, readout_p01=0.0,
                  readout_p10=0.0, instances=3, exact=True, master_seed=11)
    values.update(overrides)
    return ExperimentConfig(**values)


def _read_tables(run_dir):
    return {name: (run_dir / name).read_bytes() for name in TABLES}


def _read_rows(path):
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


# ---------------------------------------------------------------------------
# Конфигурация
# ---------------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    config = _small_config(global_p=0.05, readout_p01=(0.01, 0.02, 0.03, 0.04), fold_factors=(1, 3, 5, 7))
    path = tmp_path / CONFIG_FILE
    save_config(config, path)
    assert load_config(path) == config
    assert ExperimentConfig.from_dict(config.to_dict()) == config


def test_config_overrides_from_file_values(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("# опыт\nn=4\nsteps=1\ninstances=5\nexact=true\nglobal_p=none\n", encoding="utf-8")
    config = load_config(path, overrides={"shots": "100"})
    assert config.model == ModelParams(n=4, steps=1)
    assert config.instances == 5 and config.exact and config.shots == 100
    assert config.global_p is None


@pytest.mark.parametrize("values", [
    {"unknown": "1"},
    {"fold_factors": "1,3"},
    {"fold_factors": "1,2,5"},
    {"fold_factors": "1,3,3"},
    {"instances": "0"},
    {"fidelity_mode": "parity"},
    {"calibration_mode": "full", "n": "7"},
    {"readout_p01": "0.1,0.2"},
    {"p2": "1.5"},
    {"n": "1"},
    {"instances": "many"},
])
def test_invalid_config_is_rejected(values):
    with pytest.raises(ExperimentError):
        ExperimentConfig.from_dict(values)


def test_with_overrides_ignores_none_and_routes_steps():
    config = _small_config()
    changed = config.with_overrides(steps=5, instances=None, shots=64)
    assert changed.model.steps == 5
    assert changed.instances == config.instances
    assert changed.shots == 64
    with pytest.raises(ExperimentError):
        config.with_overrides(steps=-1)


# ---------------------------------------------------------------------------
# Зерна, задачи и записи
# ---------------------------------------------------------------------------

def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(1, 0, 1, 0, KIND_TARGET) == derive_seed(1, 0, 1, 0, KIND_TARGET)
    seeds = {derive_seed(1, step, fold, instance, kind)
             for step in range(16) for fold in (1, 3, 5) for instance in range(20)
             for kind in (KIND_TARGET, KIND_ESTIMATION)}
    assert len(seeds) == 16 * 3 * 20 * 2
    assert derive_seed(2, 0, 1, 0, KIND_TARGET) != derive_seed(1, 0, 1, 0, KIND_TARGET)


def test_plan_jobs_layout():
    config = _small_config()
    jobs = plan_jobs(config)
    per_step = 1 + 2 * len(config.fold_factors) * config.instances
    assert len(jobs) == (config.model.steps + 1) * per_step
    assert jobs[0].key == (0, 1, 0, KIND_ORIGINAL)
    assert len({job.key for job in jobs}) == len(jobs)


def test_job_circuits():
    config = _small_config()
    target = Job(config, 2, 3, 0, KIND_TARGET, derive_seed(11, 2, 3, 0, KIND_TARGET))
    estimation = Job(config, 2, 3, 0, KIND_ESTIMATION, derive_seed(11, 2, 3, 0, KIND_ESTIMATION))
    original = Job(config, 2, 1, 0, KIND_ORIGINAL, derive_seed(11, 2, 1, 0, KIND_ORIGINAL))
    # n = 4: пять блоков на шаг (две связи F дважды и одна связь G), по два CNOT на блок
    assert cnot_count(build_job_circuit(original)) == 2 * 10
    assert cnot_count(build_job_circuit(target)) == 3 * 20
    assert cnot_count(build_job_circuit(estimation)) == 3 * 20
    assert build_job_circuit(target) == build_job_circuit(target)


def _cnot_runs(circuit):
    """Длины серий одинаковых CNOT, идущих подряд на мировой линии каждого кубита."""
    runs = []
    for qubit in range(circuit.width):
        pair, length = None, 0
        for gate in circuit.gates():
            if qubit not in gate.qubits:
                continue
            if gate.is_cnot and gate.qubits == pair:
                length += 1
                continue
            if length:
                runs.append(length)
            pair, length = (gate.qubits, 1) if gate.is_cnot else (None, 0)
        if length:
            runs.append(length)
    return runs


@pytest.mark.parametrize("kind", [KIND_TARGET, KIND_ESTIMATION])
@pytest.mark.parametrize("fold", [3, 5])
def test_job_circuit_keeps_folded_copies_consecutive(kind, fold):
    config = _small_config(model=ModelParams(n=2, steps=1))
    job = Job(config, 1, fold, 0, kind, derive_seed(11, 1, fold, 0, kind))
    circuit = build_job_circuit(job)
    runs = _cnot_runs(circuit)
    assert runs and all(length % fold == 0 for length in runs)
    assert cnot_count(circuit) == fold * cnot_count(build_job_circuit(Job(config, 1, 1, 0, kind, job.seed)))


def test_run_record_json_round_trip():
    record = RunRecord(1, 3, 2, KIND_TARGET, 123, counts={"0101": 7}, value=0.1 + 0.2)
    restored = RunRecord.from_json(record.to_json())
    assert restored == record
    assert restored.ok
    assert not RunRecord(0, 1, 0, KIND_TARGET, 1, error="boom").ok


def test_record_store_last_line_wins_and_skips_broken(tmp_path):
    path = tmp_path / RECORDS_FILE
    store = RecordStore(path)
    store.append(RunRecord(0, 1, 0, KIND_TARGET, 5, error="boom"))
    store.append(RunRecord(0, 1, 0, KIND_TARGET, 5, value=0.5))
    with open(path, "a", encoding="utf-8") as f:
        f.write("{not json\n")

    loaded = RecordStore(path).load()
    assert loaded.records[(0, 1, 0, KIND_TARGET)].value == 0.5
    assert loaded.completed_keys() == {(0, 1, 0, KIND_TARGET)}


def test_shot_job_without_confusion_fails_softly():
    config = _small_config(exact=False, shots=10)
    job = Job(config, 0, 1, 0, KIND_TARGET, derive_seed(11, 0, 1, 0, KIND_TARGET))
    record = execute_job(job)
    assert not record.ok
    assert "ExperimentError" in record.error


def test_exact_estimation_modes():
    config = _small_config(p2=0.0, fidelity_mode=MODE_ALL_ZEROS)
    job = Job(config, 1, 3, 0, KIND_ESTIMATION, derive_seed(11, 1, 3, 0, KIND_ESTIMATION))
    assert execute_job(job).value == pytest.approx(1.0, abs=1e-10)


# ---------------------------------------------------------------------------
# Калибровка
# ---------------------------------------------------------------------------

def test_calibration_with_ideal_readout_is_identity(tmp_path):
    confusion = calibrate(_small_config(calibration_shots=1000), tmp_path)
    assert confusion.is_identity()
    assert load_confusion(tmp_path / CONFUSION_FILE).is_identity()


def test_calibration_recovers_flip_rates(tmp_path):
    shots = 100_000
    config = _small_config(readout_p01=0.02, readout_p10=0.05, calibration_shots=shots)
    confusion = calibrate(config, tmp_path)
    for m in confusion.matrices:
        assert abs(m[1, 0] - 0.02) <= 4 * np.sqrt(0.02 * 0.98 / shots)
        assert abs(m[0, 1] - 0.05) <= 4 * np.sqrt(0.05 * 0.95 / shots)
    restored = load_confusion(tmp_path / CONFUSION_FILE)
    assert np.allclose(restored.response(), confusion.response())


def test_full_calibration_agrees_with_product(tmp_path):
    base = dict(model=ModelParams(n=2, steps=1), readout_p01=0.02, readout_p10=0.05, calibration_shots=100_000)
    product = calibrate(_small_config(**base), tmp_path / "product")
    full = calibrate(_small_config(calibration_mode="full", **base), tmp_path / "full")
    assert full.mode == "full"
    assert np.allclose(full.response(), product.response(), atol=0.01)


# ---------------------------------------------------------------------------
# Запуск и таблицы
# ---------------------------------------------------------------------------

def test_noiseless_exact_pipeline_reproduces_trotter(tmp_path):
    config = _small_config(p2=0.0)
    table = run(config, tmp_path)
    assert not table.failed_cells
    for row in table.rows:
        for value in (row.original, row.target_zne, row.mitigated):
            assert value == pytest.approx(row.exact_trotter, abs=1e-9)
        assert all(value == pytest.approx(1.0) for value in row.fidelity_value.values())


def test_global_depolarizing_is_removed_exactly(tmp_path):
    config = _small_config(p2=0.0, global_p=0.3, readout_p01=0.02, readout_p10=0.05)
    table = run(config, tmp_path)
    for row in table.rows:
        assert row.mitigated == pytest.approx(row.exact_trotter, abs=1e-9)
        assert row.fidelity_value[1] == pytest.approx(0.7)
        if row.step > 0:
            assert abs(row.target_zne - row.exact_trotter) > 1e-3


def test_target_is_estimation_mitigates_to_one(tmp_path):
    config = _small_config(p2=0.0, global_p=0.2, target_is_estimation=True)
    table = run(config, tmp_path)
    for row in table.rows:
        assert row.mitigated == pytest.approx(1.0, abs=1e-9)


def test_noisy_exact_run_improves_on_unmitigated(tmp_path):
    config = _small_config(p2=0.01, coherent_angle=0.0, instances=4)
    table = run(config, tmp_path)
    last = table.rows[-1]
    assert abs(last.mitigated - last.exact_trotter) < abs(last.original - last.exact_trotter)
    assert all(0 < value <= 1 for value in last.fidelity_value.values())


def test_fidelity_decreases_with_fold_level(tmp_path):
    table = run(_small_config(p2=0.02, instances=4), tmp_path)
    assert all(value == pytest.approx(1.0) for value in table.rows[0].fidelity_value.values())
    for row in table.rows[1:]:
        fidelity = row.fidelity_value
        assert fidelity[1] > fidelity[3] > fidelity[5] > 0


def test_tables_have_expected_layout(tmp_path):
    config = _small_config()
    run(config, tmp_path)
    magnetization = _read_rows(tmp_path / MAGNETIZATION_TABLE)
    assert list(magnetization[0]) == MAGNETIZATION_HEADER
    assert [row["step"] for row in magnetization] == ["0", "1", "2"]
    assert float(magnetization[1]["time"]) == 0.25

    fidelity = _read_rows(tmp_path / FIDELITY_TABLE)
    assert list(fidelity[0]) == FIDELITY_HEADER
    assert len(fidelity) == 3 * 3
    assert fidelity[0]["instances"] == "3"
    assert fidelity[0]["clipped"] in ("true", "false")
    assert fidelity[0]["nonpositive"] == "false"

    target = _read_rows(tmp_path / TARGET_TABLE)
    assert "target_n5_sem" in target[0] and "exp_fit" in target[0]
    mitigated = _read_rows(tmp_path / MITIGATED_TABLE)
    assert "corrected_n3_unc" in mitigated[0]


def test_runs_are_deterministic(tmp_path):
    config = _small_config(coherent_angle=0.05)
    run(config, tmp_path / "a")
    run(config, tmp_path / "b")
    run(config.with_overrides(workers=2), tmp_path / "c")
    first = _read_tables(tmp_path / "a")
    assert _read_tables(tmp_path / "b") == first
    assert _read_tables(tmp_path / "c") == first


def test_resume_skips_completed_records(tmp_path):
    config = _small_config()
    run(config, tmp_path)
    expected = _read_tables(tmp_path)
    records_path = tmp_path / RECORDS_FILE
    lines = records_path.read_text(encoding="utf-8").splitlines()
    records_path.write_text("\n".join(lines[: len(lines) // 2]) + "\n", encoding="utf-8")

    run(config, tmp_path)
    assert _read_tables(tmp_path) == expected
    assert len(RecordStore(records_path).load().records) == len(plan_jobs(config))
    assert len(records_path.read_text(encoding="utf-8").splitlines()) == len(lines)


def test_failed_records_are_reported_and_retried(tmp_path):
    config = _small_config()
    run(config, tmp_path)
    expected = _read_tables(tmp_path)
    key = (1, 3, 0, KIND_TARGET)
    RecordStore(tmp_path / RECORDS_FILE).append(
        RunRecord(*key, seed=derive_seed(11, *key), error="SimulationError: тест"))

    table = report(tmp_path)
    assert table.failed_cells == [(1, 3)]
    assert table.rows[1].mitigated is None
    assert table.rows[0].mitigated is not None

    table = run(config, tmp_path)
    assert not table.failed_cells
    assert _read_tables(tmp_path) == expected


def test_failed_record_reported_when_cell_is_incomplete(tmp_path):
    config = _small_config()
    run(config, tmp_path)
    records = dict(RecordStore(tmp_path / RECORDS_FILE).load().records)
    del records[(1, 3, 0, KIND_TARGET)]
    key = (1, 3, 2, KIND_TARGET)
    records[key] = RunRecord(*key, seed=derive_seed(11, *key), error="SimulationError: тест")

    table = build_table(config, records)
    assert table.failed_cells == [(1, 3)]
    assert table.rows[1].mitigated is None


def test_run_refuses_foreign_directory(tmp_path):
    run(_small_config(model=ModelParams(n=4, steps=1)), tmp_path)
    with pytest.raises(ExperimentError):
        run(_small_config(model=ModelParams(n=4, steps=1), master_seed=12), tmp_path)
    # Число процессов не входит в идентичность запуска
    run(_small_config(model=ModelParams(n=4, steps=1), workers=2), tmp_path)


def test_report_on_empty_directory_writes_headers(tmp_path):
    table = report(tmp_path)
    assert table.rows == []
    content = (tmp_path / MAGNETIZATION_TABLE).read_text(encoding="utf-8")
    assert content == ",".join(MAGNETIZATION_HEADER) + "\n"
    assert (tmp_path / TARGET_TABLE).read_text(encoding="utf-8").startswith("step,time,target_n1,")


def test_sampled_run_produces_complete_tables(tmp_path):
    config = _small_config(model=ModelParams(n=2, steps=1), exact=False, shots=400, calibration_shots=5000,
                           readout_p01=0.02, readout_p10=0.05, instances=2)
    table = run(config, tmp_path)
    assert not table.failed_cells
    assert (tmp_path / CONFUSION_FILE).exists()
    records = RecordStore(tmp_path / RECORDS_FILE).load().records
    assert all(record.counts and sum(record.counts.values()) == 400 for record in records.values())
    for row in table.rows:
        assert row.original_unc is not None
        assert row.mitigated is not None
        assert -1.5 < row.mitigated < 1.5

    # Повторный запуск берет имеющуюся матрицу отклика и не пересчитывает ячейки
    confusion_bytes = (tmp_path / CONFUSION_FILE).read_bytes()
    tables = _read_tables(tmp_path)
    run(config, tmp_path)
    assert (tmp_path / CONFUSION_FILE).read_bytes() == confusion_bytes
    assert _read_tables(tmp_path) == tables


def test_copied_run_directory_reports_identically(tmp_path):
    run(_small_config(), tmp_path / "src")
    shutil.copytree(tmp_path / "src", tmp_path / "copy")
    report(tmp_path / "copy")
    assert _read_tables(tmp_path / "copy") == _read_tables(tmp_path / "src")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
