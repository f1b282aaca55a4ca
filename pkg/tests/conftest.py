import os
import sys

# Добавляем корневую директорию проекта в sys.path для импорта модулей
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import pytest

from app.logger import setup_logging, shutdown_logging


def pytest_addoption(parser):
    parser.addoption("--slow", action="store_true", default=False,
                     help="Запускать долгие проверки полного масштаба")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--slow") or os.environ.get("XXMITIG_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="долгая проверка: --slow или XXMITIG_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True, scope="session")
def session_logs(tmp_path_factory):
    """Логи тестов пишутся во временный каталог, а не в logs/ проекта."""
    directory = tmp_path_factory.mktemp("logs")
    os.environ["XXMITIG_LOG_DIR"] = str(directory)
    shutdown_logging()
    setup_logging(log_to_console=False, directory=directory)
    yield directory
    shutdown_logging()
