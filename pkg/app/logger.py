"""
Модуль логирования для проекта XXMITIG.

Обеспечивает структурированное логирование хода эксперимента: цели, действия,
решения, результаты, предупреждения и ошибки. Каждое событие пишется в текстовый
лог (для человека) и в JSON-лог по строке на событие (для сводки и экспорта в YAML).
"""

import datetime
import json
import logging
import os
import traceback
from pathlib import Path

import yaml

from .utils import get_env

# Типы событий
EVENT_GOAL = "GOAL"          # Цель действия
EVENT_ACTION = "ACTION"      # Выполняемое действие
EVENT_DECISION = "DECISION"  # Принятое решение
EVENT_RESULT = "RESULT"      # Результат действия
EVENT_WARNING = "WARNING"    # Значение получено, но требует внимания
EVENT_ERROR = "ERROR"        # Ошибка
EVENT_INFO = "INFO"          # Информационное сообщение

EVENT_TYPES = (EVENT_GOAL, EVENT_ACTION, EVENT_DECISION, EVENT_RESULT,
               EVENT_WARNING, EVENT_ERROR, EVENT_INFO)

LOGGER_NAME = "xxmitig"
TEXT_FORMAT = "%(asctime)s [%(levelname)s] [%(event_type)s] %(message)s"

# LogSession.emit -> _emit -> log_* -> вызывающий код
_CALLER_STACKLEVEL = 4

_session = None


def _jsonable(value):
    """Приводит numpy-скаляры и прочие объекты к типам, понятным json."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item") and callable(value.item):
        try:
            return value.item()
        except (TypeError, ValueError):
            pass
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


class JsonLineFormatter(logging.Formatter):
    """Одна запись лога = один JSON-объект в строке."""

    def format(self, record):
        entry = {
            "time": self.formatTime(record),
            "session": record.session,
            "type": record.event_type,
            "message": record.getMessage(),
            "caller": {"file": record.filename, "function": record.funcName, "line": record.lineno},
        }
        if record.context:
            entry["context"] = record.context
        return json.dumps(entry, ensure_ascii=False)


class LogSession:
    """Обработчики одной сессии логирования и чтение ее событий обратно."""

    def __init__(self, directory, log_level=logging.INFO, log_to_console=True):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.started = datetime.datetime.now()
        self.session_id = f"{self.started:%Y%m%d_%H%M%S_%f}_{os.getpid()}"

        day = f"{self.started:%Y-%m-%d}"
        self.text_file = self.directory / f"xxmitig_{day}.log"
        self.json_file = self.directory / f"json_{day}.log"

        self.logger = logging.getLogger(LOGGER_NAME)
        self.logger.setLevel(log_level)
        self.logger.propagate = False

        text_formatter = logging.Formatter(TEXT_FORMAT)
        handlers = [
            (logging.FileHandler(self.text_file, encoding="utf-8"), text_formatter),
            (logging.FileHandler(self.json_file, encoding="utf-8"), JsonLineFormatter()),
        ]
        if log_to_console:
            handlers.append((logging.StreamHandler(), text_formatter))
        for handler, formatter in handlers:
            handler.setFormatter(formatter)
            self.logger.addHandler(handler)

    def emit(self, event_type, message, context=None, level=logging.INFO):
        extra = {
            "session": self.session_id,
            "event_type": event_type,
            "context": _jsonable(context) if context else None,
        }
        self.logger.log(level, message, extra=extra, stacklevel=_CALLER_STACKLEVEL)

    def entries(self):
        """События этой сессии из JSON-лога; битые строки пропускаются."""
        for handler in self.logger.handlers:
            handler.flush()
        if not self.json_file.exists():
            return []
        entries = []
        with open(self.json_file, "r", encoding="utf-8") as f:
            for line in f:
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError:
                    continue
                if entry.get("session") == self.session_id:
                    entries.append(entry)
        return entries

    def close(self):
        for handler in list(self.logger.handlers):
            handler.close()
            self.logger.removeHandler(handler)


def setup_logging(log_to_console=True, log_level=logging.INFO, directory=None):
    """
    Настройка системы логирования. Повторный вызов без shutdown_logging ничего не меняет.

    Args:
        log_to_console: Выводить ли логи в консоль
        log_level: Уровень логирования
        directory: Директория для файлов логов (по умолчанию XXMITIG_LOG_DIR или logs/)

    Returns:
        logging.Logger: Настроенный логгер
    """
    global _session
    if _session is not None:
        return _session.logger

    _session = LogSession(directory or get_env("XXMITIG_LOG_DIR", "logs"), log_level, log_to_console)
    _emit(EVENT_INFO, "Система логирования инициализирована",
          {"log_file": str(_session.text_file), "json_file": str(_session.json_file)})
    return _session.logger


def shutdown_logging():
    """Закрывает обработчики, чтобы следующий setup_logging мог сменить директорию."""
    global _session
    if _session is not None:
        _session.close()
    _session = None


def _emit(event_type, message, context=None, level=logging.INFO):
    if _session is None:
        setup_logging(log_to_console=False)
    _session.emit(event_type, message, context, level)


def log_goal(goal, details=None):
    """Логирует цель или намерение действия."""
    _emit(EVENT_GOAL, goal, {"details": details} if details else None)


def log_action(action, params=None):
    _emit(EVENT_ACTION, action, {"params": params} if params else None)


def log_decision(decision, alternatives=None, reasoning=None):
    """Логирует выбор вместе с отвергнутыми вариантами и причиной."""
    context = {key: value for key, value in (("alternatives", alternatives), ("reasoning", reasoning)) if value}
    _emit(EVENT_DECISION, decision, context or None)


def log_result(result, metrics=None):
    _emit(EVENT_RESULT, result, {"metrics": metrics} if metrics else None)


def log_warning(message, context=None):
    """Логирует флаг: значение посчитано, но его надежность под вопросом."""
    _emit(EVENT_WARNING, message, context, level=logging.WARNING)


def log_error(error, exception=None):
    """
    Логирует ошибку.

    Args:
        error: Описание ошибки
        exception: Исключение, если есть (тип, текст и трассировка попадают в контекст)
    """
    context = None
    if exception is not None:
        context = {
            "exception_type": type(exception).__name__,
            "exception_message": str(exception),
            "traceback": "".join(traceback.format_exception(type(exception), exception, exception.__traceback__)),
        }
    _emit(EVENT_ERROR, error, context, level=logging.ERROR)


def log_info(message, context=None):
    _emit(EVENT_INFO, message, context)


def export_session_log(format="yaml"):
    """
    Экспортирует события текущей сессии в YAML или JSON рядом с логами.

    Returns:
        str: Путь к созданному файлу или None, если сессия не настроена
    """
    if _session is None:
        return None
    entries = _session.entries()
    suffix = "yaml" if format.lower() == "yaml" else "json"
    export_file = _session.directory / f"session_log_{datetime.datetime.now():%Y%m%d_%H%M%S}.{suffix}"
    with open(export_file, "w", encoding="utf-8") as f:
        if suffix == "yaml":
            yaml.safe_dump(entries, f, default_flow_style=False, allow_unicode=True, sort_keys=False)
        else:
            json.dump(entries, f, indent=2, ensure_ascii=False)
    return str(export_file)


def get_session_summary():
    """Счетчики событий текущей сессии по типам и последние ошибка, предупреждение и результат."""
    if _session is None:
        return {"error": "Логирование не настроено"}

    counts = dict.fromkeys(EVENT_TYPES, 0)
    latest = {}
    for entry in _session.entries():
        event_type = entry.get("type")
        if event_type in counts:
            counts[event_type] += 1
            latest[event_type] = entry

    return {
        "date": f"{_session.started:%Y-%m-%d}",
        "session": _session.session_id,
        "counts": counts,
        "total_events": sum(counts.values()),
        "latest_error": latest.get(EVENT_ERROR),
        "latest_warning": latest.get(EVENT_WARNING),
        "latest_result": latest.get(EVENT_RESULT),
    }
