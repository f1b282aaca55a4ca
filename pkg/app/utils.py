import os
import re
from pathlib import Path

ENV_PATH = Path(__file__).parent.parent / '.env'


def load_key_values(path):
    """
    Читает файл формата key=value.

    Args:
        path: Путь к файлу

    Returns:
        dict: Пары ключ-значение (строки); пустой словарь, если файла нет
    """
    values = {}
    path = Path(path)

    if path.exists():
        with open(path, 'r', encoding='utf-8') as f:
            for line in f:
                line = line.strip()
                # Пропускаем комментарии и пустые строки
                if not line or line.startswith('//') or line.startswith('#'):
                    continue

                match = re.match(r'([^=]+)=(.*)', line)
                if match:
                    key, value = match.groups()
                    values[key.strip()] = value.strip()

    return values


def write_key_values(path, values, header=None):
    """
    Записывает словарь в файл формата key=value (порядок ключей сохраняется).

    Args:
        path: Путь к файлу
        values: Словарь значений (приводятся к строкам)
        header: Необязательный комментарий в первой строке
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        if header:
            f.write(f"# {header}\n")
        for key, value in values.items():
            f.write(f"{key}={value}\n")


def load_env_vars():
    """Загружает переменные окружения из .env файла."""
    return load_key_values(ENV_PATH)


def get_env(key, default=None):
    """Получает значение переменной окружения из .env файла."""
    env_vars = load_env_vars()
    return env_vars.get(key, os.environ.get(key, default))


def parse_bool(value):
    """Разбирает булево значение из строки конфигурации."""
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def format_number(value):
    """Форматирует число с 17 значащими цифрами; None превращается в пустую строку."""
    if value is None:
        return ""
    return f"{float(value):.17g}"
