"""
Тестирование системы логирования.
Проверяет структурированные события, сводку сессии и экспорт логов.
"""
import os
import sys

# Добавляем корневую директорию проекта в sys.path для импорта модулей
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import json

import numpy as np
import pytest
import yaml

from app.logger import (
    setup_logging, shutdown_logging, log_goal, log_action, log_decision, log_result,
    log_warning, log_error, log_info, export_session_log, get_session_summary
)


@pytest.fixture
def fresh_logs(tmp_path):
    shutdown_logging()
    setup_logging(log_to_console=False, directory=tmp_path)
    yield tmp_path
    shutdown_logging()


def simulate_experiment_workflow():
    """Записывает события, похожие на настоящий запуск эксперимента."""
    log_goal("Запуск эксперимента", {"n": 6, "steps": 2})
    log_action("Калибровка считывания", {"mode": "product", "shots": 100000})
    log_decision("К выполнению 24 задач", alternatives=["serial", "pool"], reasoning="уже выполнено 0")
    log_result("Задачи выполнены", {"jobs": 24, "mean": np.float64(0.25), "count": np.int64(3)})
    log_warning("Среднее 1-p больше 1, значение обрезано до 1", {"fold": 1, "raw_mean": np.float64(1.001)})
    try:
        raise ValueError("Тестовая ошибка ячейки")
    except ValueError as e:
        log_error("Ячейка (0, 1, 0, 'target') завершилась ошибкой", e)
    log_info("Таблицы записаны", {"steps": 3})


def test_setup_creates_log_files(fresh_logs):
    files = sorted(path.name for path in fresh_logs.iterdir())
    assert any(name.startswith("xxmitig_") for name in files)
    assert any(name.startswith("json_") for name in files)


def test_session_summary_counts_events(fresh_logs):
    simulate_experiment_workflow()
    summary = get_session_summary()

    assert summary["counts"]["GOAL"] == 1
    assert summary["counts"]["ACTION"] == 1
    assert summary["counts"]["DECISION"] == 1
    assert summary["counts"]["RESULT"] == 1
    assert summary["counts"]["WARNING"] == 1
    assert summary["counts"]["ERROR"] == 1
    # Плюс сообщение об инициализации
    assert summary["counts"]["INFO"] == 2
    assert summary["total_events"] == 8

    assert summary["latest_error"]["context"]["exception_type"] == "ValueError"
    assert summary["latest_warning"]["context"]["raw_mean"] == pytest.approx(1.001)
    assert summary["latest_result"]["context"]["metrics"]["count"] == 3


def test_fresh_session_has_only_new_events(fresh_logs):
    log_info("Единственное событие")
    summary = get_session_summary()
    assert summary["total_events"] == 2
    assert summary["latest_error"] is None


@pytest.mark.parametrize("fmt, loader", [("yaml", yaml.safe_load), ("json", json.load)])
def test_export_session_log(fresh_logs, fmt, loader):
    simulate_experiment_workflow()
    path = export_session_log(fmt)
    assert path is not None and path.endswith(f".{fmt}")

    with open(path, "r", encoding="utf-8") as f:
        entries = loader(f)
    assert [entry["type"] for entry in entries][-1] == "INFO"
    goal = next(entry for entry in entries if entry["type"] == "GOAL")
    assert goal["message"] == "Запуск эксперимента"
    assert goal["caller"]["function"] == "simulate_experiment_workflow"


def test_shutdown_allows_switching_directory(fresh_logs, tmp_path_factory):
    other = tmp_path_factory.mktemp("other_logs")
    shutdown_logging()
    setup_logging(log_to_console=False, directory=other)
    log_goal("Событие в новом каталоге")
    assert get_session_summary()["counts"]["GOAL"] == 1
    assert any(path.name.startswith("json_") for path in other.iterdir())


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
