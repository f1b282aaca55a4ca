import argparse
import logging
import sys
import time

from app.experiment import PRESETS, ExperimentConfig, ExperimentError, calibrate, load_config, report, run
from app.logger import (
    setup_logging, log_goal, log_action, log_result, log_error, log_info,
    export_session_log, get_session_summary
)
from app.selftest import run_selftest
from app.utils import get_env

# Коды завершения
EXIT_OK = 0
EXIT_FAILED_CELLS = 1
EXIT_BAD_CONFIG = 2


def _add_config_arguments(parser):
    parser.add_argument("-c", "--config", help="Файл конфигурации key=value", default=None)
    parser.add_argument("-d", "--output-dir", help="Каталог запуска", default=None)
    parser.add_argument("-w", "--workers", help="Число процессов", type=int, default=None)
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument("--exact", help="Точные ожидания без выборки", dest="exact", action="store_true", default=None)
    mode.add_argument("--sampled", help="Выборка измерений с разверткой считывания", dest="exact",
                      action="store_false", default=None)
    parser.add_argument("--seed", help="Главное зерно", type=int, default=None)
    parser.add_argument("--instances", help="Число рандомизированных экземпляров", type=int, default=None)
    parser.add_argument("--shots", help="Число измерений на схему", type=int, default=None)
    parser.add_argument("--steps", help="Число шагов Троттера", type=int, default=None)
    parser.add_argument("--preset", help="Готовый масштаб запуска", choices=sorted(PRESETS), default=None)


def parse_arguments(argv=None):
    """Обработка аргументов командной строки."""
    parser = argparse.ArgumentParser(
        description="Смягчение деполяризующего шума для квенча XX-цепочки на синтетическом шуме.")
    parser.add_argument("--log-level", help="Уровень детализации логов (INFO, DEBUG, WARNING, ERROR)", default="INFO")
    parser.add_argument("--export-log", help="Экспортировать логи в указанный формат после завершения (json, yaml)",
                        choices=["json", "yaml"], default=None)
    subparsers = parser.add_subparsers(dest="command", required=True)

    _add_config_arguments(subparsers.add_parser("run", help="Полный запуск эксперимента"))
    _add_config_arguments(subparsers.add_parser("calibrate", help="Калибровка считывания"))
    report_parser = subparsers.add_parser("report", help="Таблицы по каталогу запуска")
    report_parser.add_argument("run_dir", help="Каталог запуска")
    subparsers.add_parser("selftest", help="Быстрая самопроверка формул")
    return parser.parse_args(argv)


def resolve_config(args):
    """Файл конфигурации, затем готовый масштаб, затем флаги командной строки."""
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.preset:
        config = config.with_overrides(**PRESETS[args.preset])
    workers = args.workers
    if workers is None and get_env("XXMITIG_WORKERS"):
        workers = int(get_env("XXMITIG_WORKERS"))
    return config.with_overrides(
        output_dir=args.output_dir, workers=workers, exact=args.exact, master_seed=args.seed,
        instances=args.instances, shots=args.shots, steps=args.steps)


def command_run(args):
    config = resolve_config(args)
    table = run(config)
    failed = table.failed_cells
    if failed:
        log_error(f"Не выполнено ячеек (шаг, кратность): {len(failed)}", ExperimentError(str(failed)))
        return EXIT_FAILED_CELLS
    return EXIT_OK


def command_calibrate(args):
    calibrate(resolve_config(args))
    return EXIT_OK


def command_report(args):
    table = report(args.run_dir)
    return EXIT_FAILED_CELLS if table.failed_cells else EXIT_OK


def command_selftest(args):
    results = run_selftest()
    for result in results:
        print(f"{'OK  ' if result.passed else 'FAIL'} {result.name}: {result.detail}")
    return EXIT_OK if all(result.passed for result in results) else EXIT_FAILED_CELLS


COMMANDS = {
    "run": command_run,
    "calibrate": command_calibrate,
    "report": command_report,
    "selftest": command_selftest,
}


def print_summary(export_path=None, export_format=None):
    summary = get_session_summary()
    if "error" in summary:
        return
    print("\n" + "=" * 80)
    print("СВОДКА СЕССИИ:")
    print(f"- Дата: {summary['date']}")
    print(f"- Всего событий: {summary['total_events']}")
    print(f"- Цели: {summary['counts']['GOAL']}")
    print(f"- Действия: {summary['counts']['ACTION']}")
    print(f"- Результаты: {summary['counts']['RESULT']}")
    print(f"- Предупреждения: {summary['counts']['WARNING']}")
    print(f"- Ошибки: {summary['counts']['ERROR']}")
    print("=" * 80)

    if export_format:
        print(f"Подробные логи экспортированы в: {export_path}")
    else:
        print("Для экспорта логов используйте параметр --export-log=yaml или --export-log=json")


def main(argv=None):
    args = parse_arguments(argv)

    log_level = getattr(logging, args.log_level.upper(), logging.INFO)
    setup_logging(log_to_console=True, log_level=log_level)
    log_goal(f"Команда {args.command}", {"argv": sys.argv[1:] if argv is None else list(argv)})

    start_time = time.time()
    try:
        code = COMMANDS[args.command](args)
    except ExperimentError as e:
        log_error("Некорректная конфигурация или каталог запуска", e)
        code = EXIT_BAD_CONFIG
    log_info(f"Команда {args.command} завершена", {
        "exit_code": code,
        "time_taken": f"{time.time() - start_time:.2f} сек"
    })

    export_path = None
    if args.export_log:
        log_action(f"Экспорт логов в формате {args.export_log}")
        export_path = export_session_log(args.export_log)
        if export_path:
            log_result("Логи успешно экспортированы", {"export_path": export_path})
        else:
            log_error("Не удалось экспортировать логи")

    print_summary(export_path, args.export_log)
    return code


if __name__ == "__main__":
    sys.exit(main())
