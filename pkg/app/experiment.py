"""
Эксперимент: перебор (шаг Троттера x кратность x экземпляр x вид схемы), симуляция,
постобработка, хранение записей и выгрузка таблиц для графиков.

Каталог запуска:
    config.env        - действующая конфигурация (key=value)
    records.jsonl     - по одной записи RunRecord в строке
    confusion.yaml    - матрица отклика считывания (режим выборки)
    magnetization.csv, fidelity.csv, target.csv, mitigated.csv - итоговые таблицы
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml

from .logger import log_action, log_decision, log_error, log_goal, log_info, log_result, log_warning
from .mitigation import (
    FIDELITY_MODES, MODE_ALL_ZEROS, MODE_SIGMA_Z_LAST, Aggregate, ConfusionMatrix, MitigationError,
    aggregate, distribution_value, estimate_fidelity, mitigate, per_instance_mitigated, unfold,
    zne_exponential, zne_quadratic,
)
from .circuit import Circuit, Gate
from .simulator import NoiseModel, expectation, readout_distribution, sample_counts, simulate_density
from .transforms import FOLD_FACTORS, FoldFactor, derive_estimation_circuit, fold_cnots, randomized_compile
from .utils import format_number, load_key_values, parse_bool, write_key_values
from .xx_model import ModelError, ModelParams, exact_series, magnetization_observable, trotter_circuit

KIND_TARGET = "target"
KIND_ESTIMATION = "estimation"
KIND_ORIGINAL = "original"
KIND_CALIBRATION = "calibration"

CALIBRATION_MODES = ("product", "full")
FULL_CALIBRATION_WIDTH_CAP = 6

CONFIG_FILE = "config.env"
RECORDS_FILE = "records.jsonl"
CONFUSION_FILE = "confusion.yaml"
MAGNETIZATION_TABLE = "magnetization.csv"
FIDELITY_TABLE = "fidelity.csv"
TARGET_TABLE = "target.csv"
MITIGATED_TABLE = "mitigated.csv"

# Готовые масштабы: настольный (минуты) и полный (статистика эксперимента на устройстве)
PRESETS = {
    "desk": {"instances": 64, "shots": 2048},
    "full": {"instances": 448, "shots": 8192},
}

# Доля выполненных задач между сообщениями о прогрессе
PROGRESS_STEP = 0.1


class ExperimentError(ValueError):
    """Некорректная конфигурация или поврежденный каталог запуска."""


# ---------------------------------------------------------------------------
# Конфигурация
# ---------------------------------------------------------------------------

def _float_tuple(value):
    if isinstance(value, (int, float)):
        return (float(value),)
    if isinstance(value, str):
        return tuple(float(part) for part in value.split(",") if part.strip())
    return tuple(float(v) for v in value)


def _int_tuple(value):
    if isinstance(value, str):
        return tuple(int(part) for part in value.split(",") if part.strip())
    return tuple(int(v) for v in value)


def _optional_float(value):
    if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none")):
        return None
    return float(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Полная конфигурация запуска.

    Attributes:
        model: Параметры XX-цепочки
        p2: Двухкубитная деполяризация после каждого CNOT
        coherent_angle: Угол когерентного ZZ-поворота после каждого CNOT
        global_p: Глобальная деполяризация в конце схемы (или None)
        readout_p01: Вероятности 0->1 при считывании (одна на все кубиты или по кубитам)
        readout_p10: Вероятности 1->0 при считывании
        instances: Число рандомизированных экземпляров каждой схемы
        shots: Число измерений на схему (в режиме выборки)
        exact: Режим точных ожиданий без выборки
        fold_factors: Кратности размножения CNOT
        master_seed: Главное зерно
        unfold_iterations: Число итераций развертки считывания
        fidelity_mode: Как оценивать 1-p по схеме оценки
        calibration_mode: product (по кубитам) или full (все 2^n состояний)
        calibration_shots: Измерений на калибровочную схему
        target_is_estimation: Самопроверка: целевая схема заменяется схемой оценки
        workers: Число процессов
        output_dir: Каталог запуска
    """
    model: ModelParams = field(default_factory=ModelParams)
    p2: float = 0.01
    coherent_angle: float = 0.02
    global_p: Optional[float] = None
    readout_p01: Tuple[float, ...] = (0.02,)
    readout_p10: Tuple[float, ...] = (0.05,)
    instances: int = 448
    shots: int = 8192
    exact: bool = False
    fold_factors: Tuple[int, ...] = FOLD_FACTORS
    master_seed: int = 20210601
    unfold_iterations: int = 100
    fidelity_mode: str = MODE_SIGMA_Z_LAST
    calibration_mode: str = "product"
    calibration_shots: int = 100000
    target_is_estimation: bool = False
    workers: int = 1
    output_dir: str = "outputs/run"

    def __post_init__(self):
        object.__setattr__(self, "readout_p01", _float_tuple(self.readout_p01))
        object.__setattr__(self, "readout_p10", _float_tuple(self.readout_p10))
        object.__setattr__(self, "fold_factors", _int_tuple(self.fold_factors))

        if self.instances < 1:
            raise ExperimentError(f"Число экземпляров должно быть >= 1: {self.instances}")
        if self.shots < 1 or self.calibration_shots < 1:
            raise ExperimentError("Число измерений должно быть положительным")
        if self.unfold_iterations < 1:
            raise ExperimentError(f"Число итераций развертки должно быть >= 1: {self.unfold_iterations}")
        if self.workers < 1:
            raise ExperimentError(f"Число процессов должно быть >= 1: {self.workers}")
        if len(set(self.fold_factors)) != len(self.fold_factors) or len(self.fold_factors) < 3:
            raise ExperimentError(f"Нужно минимум три различные кратности: {self.fold_factors}")
        try:
            for factor in self.fold_factors:
                FoldFactor(factor)
        except ValueError as e:
            raise ExperimentError(str(e)) from e
        if self.fidelity_mode not in FIDELITY_MODES:
            raise ExperimentError(f"Неизвестный режим оценки точности: {self.fidelity_mode}")
        if self.calibration_mode not in CALIBRATION_MODES:
            raise ExperimentError(f"Неизвестный режим калибровки: {self.calibration_mode}")
        if self.calibration_mode == "full" and self.model.n > FULL_CALIBRATION_WIDTH_CAP:
            raise ExperimentError(f"Полная калибровка доступна только при n <= {FULL_CALIBRATION_WIDTH_CAP}")
        for name in ("readout_p01", "readout_p10"):
            if len(getattr(self, name)) not in (1, self.model.n):
                raise ExperimentError(f"{name}: нужно одно значение или {self.model.n} значений")
        try:
            self.noise_model()
        except ValueError as e:
            raise ExperimentError(f"Некорректная модель шума: {e}") from e

    def noise_model(self):
        return NoiseModel.with_readout_flips(
            self.model.n, self.readout_p01, self.readout_p10,
            p2=self.p2, coherent_angle=self.coherent_angle, global_p=self.global_p)

    def to_dict(self):
        """Плоский словарь строк для config.env (числа с 17 значащими цифрами)."""
        values = {
            "n": self.model.n,
            "J": format_number(self.model.J),
            "dt": format_number(self.model.dt),
            "steps": self.model.steps,
            "merge_half_steps": str(self.model.merge_half_steps).lower(),
        }
        for f in fields(self):
            if f.name == "model":
                continue
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = str(value).lower()
            elif isinstance(value, float):
                value = format_number(value)
            elif value is None:
                value = "none"
            elif isinstance(value, tuple):
                value = ",".join(format_number(v) if isinstance(v, float) else str(v) for v in value)
            values[f.name] = value
        return values

    @classmethod
    def from_dict(cls, values):
        """Собирает конфигурацию из словаря строк; отсутствующие ключи берутся по умолчанию."""
        unknown = set(values) - set(_MODEL_PARSERS) - set(_CONFIG_PARSERS)
        if unknown:
            raise ExperimentError(f"Неизвестные ключи конфигурации: {sorted(unknown)}")
        try:
            model = ModelParams(**{key: _MODEL_PARSERS[key](values[key]) for key in _MODEL_PARSERS if key in values})
            kwargs = {key: _CONFIG_PARSERS[key](values[key]) for key in _CONFIG_PARSERS if key in values}
        except ModelError as e:
            raise ExperimentError(f"Некорректные параметры модели: {e}") from e
        except ValueError as e:
            raise ExperimentError(f"Не удалось разобрать конфигурацию: {e}") from e
        return cls(model=model, **kwargs)

    def with_overrides(self, **overrides):
        """Новая конфигурация с заменой полей; поле steps относится к модели."""
        overrides = {key: value for key, value in overrides.items() if value is not None}
        steps = overrides.pop("steps", None)
        try:
            model = self.model.with_steps(steps) if steps is not None else self.model
        except ModelError as e:
            raise ExperimentError(f"Некорректные параметры модели: {e}") from e
        return replace(self, model=model, **overrides)


_MODEL_PARSERS = {
    "n": int,
    "J": float,
    "dt": float,
    "steps": int,
    "merge_half_steps": parse_bool,
}

_CONFIG_PARSERS = {
    "p2": float,
    "coherent_angle": float,
    "global_p": _optional_float,
    "readout_p01": _float_tuple,
    "readout_p10": _float_tuple,
    "instances": int,
    "shots": int,
    "exact": parse_bool,
    "fold_factors": _int_tuple,
    "master_seed": int,
    "unfold_iterations": int,
    "fidelity_mode": str,
    "calibration_mode": str,
    "calibration_shots": int,
    "target_is_estimation": parse_bool,
    "workers": int,
    "output_dir": str,
}


def load_config(path, overrides=None):
    """
    Читает конфигурацию из файла key=value.

    Args:
        path: Путь к файлу (отсутствующий файл - конфигурация по умолчанию)
        overrides: Словарь строковых значений поверх файла

    Returns:
        ExperimentConfig: Проверенная конфигурация

    Raises:
        ExperimentError: Неизвестный ключ или недопустимое значение
    """
    values = load_key_values(path) if path else {}
    values.update(overrides or {})
    return ExperimentConfig.from_dict(values)


def save_config(config, path):
    write_key_values(path, config.to_dict(), header="Конфигурация запуска")


# ---------------------------------------------------------------------------
# Записи и зерна
# ---------------------------------------------------------------------------

def derive_seed(master_seed, step, fold, instance, kind):
    """64-битное зерно из SHA-256 ключа записи."""
    payload = f"{master_seed}:{step}:{fold}:{instance}:{kind}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


@dataclass
class RunRecord:
    """
    Результат одной ячейки (шаг, кратность, экземпляр, вид схемы).

    Attributes:
        counts: Гистограмма (режим выборки)
        exact_value: Точное ожидание (точный режим)
        value: Значение после развертки; для схем оценки - в режиме fidelity_mode
        error: Текст ошибки, если ячейка не выполнена
    """
    step: int
    fold: int
    instance: int
    kind: str
    seed: int
    counts: Optional[Dict[str, int]] = None
    exact_value: Optional[float] = None
    value: Optional[float] = None
    error: Optional[str] = None

    @property
    def key(self):
        return (self.step, self.fold, self.instance, self.kind)

    @property
    def ok(self):
        return self.error is None and self.value is not None

    def to_json(self):
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line):
        data = json.loads(line)
        return cls(**{f.name: data.get(f.name) for f in fields(cls)})


class RecordStore:
    """Хранилище записей records.jsonl; для повторяющегося ключа действует последняя строка."""

    def __init__(self, path):
        self.path = Path(path)
        self.records: Dict[tuple, RunRecord] = {}

    def load(self):
        self.records = {}
        if not self.path.exists():
            return self
        broken = 0
        with open(self.path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    record = RunRecord.from_json(line)
                except (json.JSONDecodeError, TypeError):
                    broken += 1
                    continue
                self.records[record.key] = record
        if broken:
            log_warning("Пропущены поврежденные строки записей", {"path": str(self.path), "broken": broken})
        return self

    def append(self, record):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(record.to_json() + "\n")
        self.records[record.key] = record

    def completed_keys(self):
        return {key for key, record in self.records.items() if record.ok}


# ---------------------------------------------------------------------------
# Задачи
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Job:
    """Независимая единица работы для пула процессов."""
    config: ExperimentConfig
    step: int
    fold: int
    instance: int
    kind: str
    seed: int
    confusion: Optional[ConfusionMatrix] = None

    @property
    def key(self):
        return (self.step, self.fold, self.instance, self.kind)


def plan_jobs(config, confusion=None):
    """
    Все задачи запуска в каноническом порядке ключей.

    Для каждого шага - одна исходная схема ("original": без рандомизации, размножения и
    развертки) и по instances экземпляров целевой схемы и схемы оценки для каждой кратности.

    Raises:
        ExperimentError: Два ключа получили одинаковое зерно
    """
    jobs = []
    for step in range(config.model.steps + 1):
        keys = [(step, 1, 0, KIND_ORIGINAL)]
        for fold in config.fold_factors:
            for instance in range(config.instances):
                keys.append((step, fold, instance, KIND_TARGET))
                keys.append((step, fold, instance, KIND_ESTIMATION))
        for key in keys:
            jobs.append(Job(config, *key, seed=derive_seed(config.master_seed, *key), confusion=confusion))

    seeds = {job.seed for job in jobs}
    if len(seeds) != len(jobs):
        raise ExperimentError("Совпадение производных зерен у разных записей")
    return jobs


def job_streams(seed):
    """Независимые генераторы задачи: вращения схемы оценки, твирлинг, измерения."""
    return tuple(np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(3))


def build_job_circuit(job):
    """
    Схема задачи: целевая или схема оценки, рандомизированная компиляция, затем размножение
    CNOT. Копии одного CNOT идут подряд, без твирлинга между ними.
    """
    config = job.config
    target = trotter_circuit(config.model.with_steps(job.step))
    if job.kind == KIND_ORIGINAL:
        return target
    rotation_rng, compile_rng, _ = job_streams(job.seed)
    if job.kind == KIND_ESTIMATION or config.target_is_estimation:
        base = derive_estimation_circuit(target, rotation_rng)
    else:
        base = target
    return fold_cnots(randomized_compile(base, compile_rng), job.fold)


def execute_job(job):
    """
    Выполняет задачу в рабочем процессе. Не логирует: исход логирует оркестратор.

    Returns:
        RunRecord: Запись с результатом или с текстом ошибки
    """
    record = RunRecord(job.step, job.fold, job.instance, job.kind, job.seed)
    try:
        config = job.config
        n = config.model.n
        noise = config.noise_model()
        observable = magnetization_observable(n)
        shot_rng = job_streams(job.seed)[2]

        rho = simulate_density(build_job_circuit(job), noise)

        if job.kind == KIND_ORIGINAL:
            if config.exact:
                observed = readout_distribution(rho.probabilities(), noise.readout_for(n))
                record.exact_value = record.value = distribution_value(observed, MODE_SIGMA_Z_LAST)
            else:
                counts = sample_counts(rho, config.shots, noise.readout_for(n), shot_rng)
                record.counts = dict(counts.counts)
                record.value = distribution_value(counts.frequencies(), MODE_SIGMA_Z_LAST)
            return record

        mode = config.fidelity_mode if job.kind == KIND_ESTIMATION else MODE_SIGMA_Z_LAST
        if config.exact:
            if mode == MODE_ALL_ZEROS:
                value = float(np.real(rho.matrix[0, 0]))
            else:
                value = expectation(rho, observable)
            record.exact_value = record.value = value
            return record

        if job.confusion is None:
            raise ExperimentError("Нет матрицы отклика для развертки")
        counts = sample_counts(rho, config.shots, noise.readout_for(n), shot_rng)
        record.counts = dict(counts.counts)
        record.value = distribution_value(unfold(counts, job.confusion, config.unfold_iterations), mode)
        return record
    except Exception as e:
        record.error = f"{type(e).__name__}: {e}"
        return record


# ---------------------------------------------------------------------------
# Калибровка считывания
# ---------------------------------------------------------------------------

def _prepare_bits(width, bits):
    gates = tuple(Gate("X", (q,)) for q, bit in enumerate(bits) if bit)
    return Circuit(width, (gates,) if gates else ())


def _marginal_one(counts, qubit):
    total = sum(counts.counts.values())
    ones = sum(c for bits, c in counts.counts.items() if bits[qubit] == "1")
    return ones / total


def calibrate(config, output_dir=None):
    """
    Калибрует матрицу отклика считывания и пишет confusion.yaml.

    В режиме product для каждого кубита готовятся состояния с 0 и с 1 на нем (остальные
    кубиты в 0) и по маргиналу оцениваются p01 и p10. В режиме full измеряются все 2^n
    базисных состояний. Калибровочные схемы не содержат CNOT; на них действует только
    шум считывания.

    Args:
        config: Конфигурация запуска
        output_dir: Каталог запуска (по умолчанию config.output_dir)

    Returns:
        ConfusionMatrix: Откалиброванная матрица
    """
    output_dir = Path(output_dir or config.output_dir)
    n = config.model.n
    readout = config.noise_model().readout_for(n)
    calibration_noise = NoiseModel(readout=readout)

    log_action("Калибровка считывания", {"mode": config.calibration_mode, "n": n,
                                         "shots": config.calibration_shots})

    def measure(bits, fold, index):
        seed = derive_seed(config.master_seed, -1, fold, index, KIND_CALIBRATION)
        rho = simulate_density(_prepare_bits(n, bits), calibration_noise)
        return sample_counts(rho, config.calibration_shots, readout, seed)

    if config.calibration_mode == "product":
        matrices = []
        for q in range(n):
            p01 = _marginal_one(measure([0] * n, 0, q), q)
            p10 = 1.0 - _marginal_one(measure([int(i == q) for i in range(n)], 1, q), q)
            matrices.append(np.array([[1.0 - p01, p10], [p01, 1.0 - p10]]))
        confusion = ConfusionMatrix(n, matrices=tuple(matrices))
    else:
        dim = 2 ** n
        full = np.zeros((dim, dim))
        for index in range(dim):
            bits = [int(b) for b in format(index, f"0{n}b")]
            full[:, index] = measure(bits, 2, index).frequencies()
        confusion = ConfusionMatrix(n, full=full)

    save_confusion(confusion, output_dir / CONFUSION_FILE)
    log_result("Матрица отклика записана", {"path": str(output_dir / CONFUSION_FILE),
                                            "mode": confusion.mode})
    return confusion


def save_confusion(confusion, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(confusion.to_dict(), f, default_flow_style=None, sort_keys=False)


def load_confusion(path):
    with open(path, "r", encoding="utf-8") as f:
        return ConfusionMatrix.from_dict(yaml.safe_load(f))


# ---------------------------------------------------------------------------
# Запуск
# ---------------------------------------------------------------------------

def _execute_all(jobs, workers, store):
    """Выполняет задачи (последовательно при workers = 1) и сохраняет записи по мере готовности."""
    total = len(jobs)
    next_report = PROGRESS_STEP
    failed = 0

    def accept(record, done):
        nonlocal next_report, failed
        store.append(record)
        if record.error is not None:
            failed += 1
            log_error(f"Ячейка {record.key} завершилась ошибкой: {record.error}")
        if done / total >= next_report:
            log_info(f"Выполнено задач: {done} из {total}", {"failed": failed})
            next_report += PROGRESS_STEP

    if workers == 1:
        for done, job in enumerate(jobs, start=1):
            accept(execute_job(job), done)
        return failed

    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
        future_to_job = {executor.submit(execute_job, job): job for job in jobs}
        for done, future in enumerate(concurrent.futures.as_completed(future_to_job), start=1):
            job = future_to_job[future]
            try:
                record = future.result()
            except Exception as e:
                log_error(f"Процесс задачи {job.key} аварийно завершился", e)
                record = RunRecord(job.step, job.fold, job.instance, job.kind, job.seed,
                                   error=f"{type(e).__name__}: {e}")
            accept(record, done)
    return failed


def _same_run(a, b):
    """Совпадение конфигураций без учета числа процессов и каталога."""
    return replace(a, workers=1, output_dir="") == replace(b, workers=1, output_dir="")


def run(config, output_dir=None):
    """
    Полный запуск: калибровка (в режиме выборки), все ячейки, таблицы.

    Уже выполненные без ошибок ячейки из records.jsonl не пересчитываются; ячейки с
    ошибками пересчитываются.

    Args:
        config: Конфигурация
        output_dir: Каталог запуска (по умолчанию config.output_dir)

    Returns:
        ResultTable: Итоговые таблицы (failed_cells перечисляет ячейки с ошибками)

    Raises:
        ExperimentError: Каталог содержит записи другой конфигурации
    """
    output_dir = Path(output_dir or config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    log_goal("Запуск эксперимента", {"output_dir": str(output_dir), **config.to_dict()})

    config_path = output_dir / CONFIG_FILE
    if config_path.exists():
        if not _same_run(load_config(config_path), config):
            raise ExperimentError(f"Каталог {output_dir} содержит запуск с другой конфигурацией")
    save_config(replace(config, output_dir=str(output_dir)), config_path)

    confusion = None
    if not config.exact:
        confusion_path = output_dir / CONFUSION_FILE
        if confusion_path.exists():
            confusion = load_confusion(confusion_path)
            log_decision("Используется имеющаяся матрица отклика", reasoning=str(confusion_path))
        else:
            confusion = calibrate(config, output_dir)

    store = RecordStore(output_dir / RECORDS_FILE).load()
    completed = store.completed_keys()
    jobs = [job for job in plan_jobs(config, confusion) if job.key not in completed]
    log_decision(f"К выполнению {len(jobs)} задач", reasoning=f"уже выполнено {len(completed)}")

    start = time.time()
    failed = _execute_all(jobs, config.workers, store) if jobs else 0
    log_result("Задачи выполнены", {"jobs": len(jobs), "failed": failed,
                                    "time_taken": f"{time.time() - start:.2f} сек"})
    return report(output_dir)


# ---------------------------------------------------------------------------
# Таблицы результатов
# ---------------------------------------------------------------------------

@dataclass
class StepResult:
    """Строка итоговых таблиц для одного шага; None - пропуск."""
    step: int
    time: float
    exact_trotter: Optional[float] = None
    exact_continuous: Optional[float] = None
    original: Optional[float] = None
    original_unc: Optional[float] = None
    fidelity: Dict[int, Aggregate] = field(default_factory=dict)
    fidelity_value: Dict[int, float] = field(default_factory=dict)
    fidelity_clipped: Dict[int, bool] = field(default_factory=dict)
    fidelity_nonpositive: Dict[int, bool] = field(default_factory=dict)
    target: Dict[int, Aggregate] = field(default_factory=dict)
    target_zne: Optional[float] = None
    target_zne_unc: Optional[float] = None
    target_zne_sd: Optional[float] = None
    target_exp: Optional[float] = None
    corrected: Dict[int, float] = field(default_factory=dict)
    corrected_unc: Dict[int, float] = field(default_factory=dict)
    mitigated: Optional[float] = None
    mitigated_unc: Optional[float] = None
    mitigated_sd: Optional[float] = None
    failed_folds: List[int] = field(default_factory=list)


@dataclass
class ResultTable:
    """Итог запуска: строки по шагам и кратности, для которых строились столбцы."""
    fold_factors: Tuple[int, ...]
    rows: List[StepResult] = field(default_factory=list)

    @property
    def failed_cells(self):
        return [(row.step, fold) for row in self.rows for fold in row.failed_folds]


def _cell_values(records, step, fold, kind, instances):
    """Значения ячейки по экземплярам; None, если ячейка неполна; 'failed' при ошибке."""
    cell = [records.get((step, fold, instance, kind)) for instance in range(instances)]
    if any(record is not None and not record.ok for record in cell):
        return "failed"
    if any(record is None for record in cell):
        return None
    return [float(record.value) for record in cell]


def _exact_columns(model):
    try:
        return exact_series(model, trotterized=True), exact_series(model, trotterized=False)
    except ModelError as e:
        log_warning("Точное решение не рассчитано", {"reason": str(e)})
        blank = [None] * (model.steps + 1)
        return blank, blank


def build_table(config, records):
    """
    Агрегирует записи в таблицы в каноническом порядке ключей.

    Args:
        config: Конфигурация запуска
        records: Ключ записи -> RunRecord

    Returns:
        ResultTable: Пропуски там, где ячейки неполны или обработка невозможна
    """
    model = config.model
    c = magnetization_observable(model.n).constant
    folds = tuple(sorted(config.fold_factors))
    exact_trotter, exact_continuous = _exact_columns(model)
    table = ResultTable(folds)

    for step in range(model.steps + 1):
        row = StepResult(step, step * model.dt, exact_trotter[step], exact_continuous[step])

        original = records.get((step, 1, 0, KIND_ORIGINAL))
        if original is not None and original.ok:
            row.original = original.value
            row.original_unc = 0.0 if config.exact else \
                math.sqrt(max(0.0, 1.0 - original.value ** 2) / config.shots)

        target_samples, estimation_samples = {}, {}
        for fold in folds:
            target = _cell_values(records, step, fold, KIND_TARGET, config.instances)
            estimation = _cell_values(records, step, fold, KIND_ESTIMATION, config.instances)
            if target == "failed" or estimation == "failed":
                row.failed_folds.append(fold)
                continue
            if target is not None:
                target_samples[fold] = target
                row.target[fold] = aggregate(target)
            if estimation is not None:
                estimation_samples[fold] = estimation

        fidelity = None
        if estimation_samples:
            fidelity = estimate_fidelity(estimation_samples, config.fidelity_mode)
            for fold in fidelity.folds:
                row.fidelity[fold] = aggregate(fidelity.samples[fold])
                row.fidelity_value[fold] = fidelity.one_minus_p[fold]
                row.fidelity_clipped[fold] = fidelity.clipped[fold]
                row.fidelity_nonpositive[fold] = fidelity.nonpositive[fold]

        if len(target_samples) == len(folds):
            points = [(fold, row.target[fold].mean) for fold in folds]
            zne = zne_quadratic(points, [row.target[fold].sem for fold in folds])
            row.target_zne, row.target_zne_unc = zne.value, zne.uncertainty
            row.target_zne_sd = aggregate(per_instance_mitigated(target_samples, None)).std
            try:
                row.target_exp = zne_exponential(points).value
            except MitigationError:
                row.target_exp = None

        if fidelity is not None and len(target_samples) == len(folds) and fidelity.folds == folds:
            try:
                mitigated = mitigate(row.target, fidelity, c)
                row.corrected, row.corrected_unc = mitigated.corrected, mitigated.corrected_uncertainty
                row.mitigated, row.mitigated_unc = mitigated.value, mitigated.uncertainty
                row.mitigated_sd = aggregate(per_instance_mitigated(target_samples, fidelity, c)).std
            except MitigationError as e:
                log_warning(f"Шаг {step}: смягчение невозможно", {"reason": str(e)})

        table.rows.append(row)
    return table


def _header_target(folds):
    header = ["step", "time"]
    for fold in folds:
        header += [f"target_n{fold}", f"target_n{fold}_sem"]
    return header + ["zne", "zne_unc", "zne_sd", "exp_fit"]


def _header_mitigated(folds):
    header = ["step", "time"]
    for fold in folds:
        header += [f"corrected_n{fold}", f"corrected_n{fold}_unc"]
    return header + ["mitigated", "mitigated_unc", "mitigated_sd"]


MAGNETIZATION_HEADER = ["step", "time", "exact_trotter", "exact_continuous", "original", "original_unc",
                        "target_zne", "target_zne_unc", "mitigated", "mitigated_unc", "mitigated_sd"]
FIDELITY_HEADER = ["step", "fold", "one_minus_p", "sem", "instances", "clipped", "nonpositive"]


def _cell(value):
    if isinstance(value, str):
        return value
    if isinstance(value, int):
        return str(value)
    return format_number(value)


def _flag(flags, fold):
    return str(flags[fold]).lower() if fold in flags else ""


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])


def write_tables(table, output_dir):
    """Пишет четыре таблицы; пустые значения - пропуски."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    folds = table.fold_factors

    _write_csv(output_dir / MAGNETIZATION_TABLE, MAGNETIZATION_HEADER, [
        [row.step, row.time, row.exact_trotter, row.exact_continuous, row.original, row.original_unc,
         row.target_zne, row.target_zne_unc, row.mitigated, row.mitigated_unc, row.mitigated_sd]
        for row in table.rows])

    fidelity_rows = []
    for row in table.rows:
        for fold in folds:
            agg = row.fidelity.get(fold)
            fidelity_rows.append([row.step, fold, row.fidelity_value.get(fold), agg.sem if agg else None,
                                  agg.count if agg else "",
                                  _flag(row.fidelity_clipped, fold), _flag(row.fidelity_nonpositive, fold)])
    _write_csv(output_dir / FIDELITY_TABLE, FIDELITY_HEADER, fidelity_rows)

    target_rows = []
    for row in table.rows:
        cells = [row.step, row.time]
        for fold in folds:
            agg = row.target.get(fold)
            cells += [agg.mean if agg else None, agg.sem if agg else None]
        target_rows.append(cells + [row.target_zne, row.target_zne_unc, row.target_zne_sd, row.target_exp])
    _write_csv(output_dir / TARGET_TABLE, _header_target(folds), target_rows)

    mitigated_rows = []
    for row in table.rows:
        cells = [row.step, row.time]
        for fold in folds:
            cells += [row.corrected.get(fold), row.corrected_unc.get(fold)]
        mitigated_rows.append(cells + [row.mitigated, row.mitigated_unc, row.mitigated_sd])
    _write_csv(output_dir / MITIGATED_TABLE, _header_mitigated(folds), mitigated_rows)


def report(run_dir):
    """
    Строит таблицы по каталогу запуска.

    Каталог без config.env дает пустые таблицы с заголовками (кратности по умолчанию).

    Args:
        run_dir: Каталог запуска

    Returns:
        ResultTable: Итоговые таблицы
    """
    run_dir = Path(run_dir)
    config_path = run_dir / CONFIG_FILE
    if not config_path.exists():
        log_warning("В каталоге нет конфигурации запуска: таблицы будут пустыми", {"run_dir": str(run_dir)})
        table = ResultTable(FOLD_FACTORS)
    else:
        config = load_config(config_path)
        store = RecordStore(run_dir / RECORDS_FILE).load()
        table = build_table(config, store.records)

    write_tables(table, run_dir)
    log_result("Таблицы записаны", {"run_dir": str(run_dir), "steps": len(table.rows),
                                    "failed_cells": len(table.failed_cells)})
    return table
