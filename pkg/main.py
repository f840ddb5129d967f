"""
🧪 FedSLS: СИМУЛЯТОР ФЕДЕРАТИВНОГО ОБУЧЕНИЯ ПО СТРАТИФИЦИРОВАННОМУ РАСПИСАНИЮ МЕТОК
Команды: run (один эксперимент), sweep (серия), report (сводка по CSV)
"""

import argparse
import logging
import sys

from app.config import apply_overrides, get_config_for_logging, load_config
from app.errors import FedSlsError
from app.log import setup_logging
from app.services.experiment import report, run, run_sweep
from app.services.he_backends import OPENFHE_AVAILABLE

logger = logging.getLogger('fedsls')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='fedsls', description="Симулятор FedSLS")
    sub = parser.add_subparsers(dest='command', required=True)

    for name, help_text in (('run', "Один эксперимент"), ('sweep', "Серия экспериментов")):
        command = sub.add_parser(name, help=help_text)
        command.add_argument('--config', help="YAML-файл конфигурации")
        command.add_argument('--seed', type=int, help="Зерно эксперимента")
        command.add_argument('--out-dir', help="Каталог результатов")
        command.add_argument('--algo', help="Алгоритм (sls-single, sls-batch, fedavg, ...)")
        command.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                             help="Переопределение ключа, например training.lr=0.1")
        if name == 'sweep':
            command.add_argument('--workers', type=int, default=1, help="Число процессов")

    reporter = sub.add_parser('report', help="Сводка по metrics.csv")
    reporter.add_argument('out_dir', help="Каталог результатов")
    return parser


def _load(args) -> dict:
    config = load_config(args.config) if args.config else load_config('config.yaml')
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.algo:
        overrides.append(f"algorithm={args.algo}")
    if args.out_dir:
        overrides.append(f"out_dir={args.out_dir}")
    return apply_overrides(config, overrides)


def main(argv=None) -> int:
    """Запуск CLI"""
    args = build_parser().parse_args(argv)
    try:
        if args.command == 'report':
            setup_logging('INFO')
            print(report(args.out_dir))
            return 0

        config = _load(args)
        setup_logging(str(config.get('log_level', 'INFO')))
        logger.info("🔍 Конфигурация: %s", get_config_for_logging(config))
        if config.get('privacy', {}).get('backend') == 'openfhe' and not OPENFHE_AVAILABLE:
            logger.warning("⚠️ openfhe не установлен, бэкенд openfhe будет отклонён")

        if args.command == 'run':
            record = run(config)
            print(f"✅ {record.algorithm}: лучшая точность {record.best_accuracy:.4f} "
                  f"(эпоха {record.best_epoch}), передач модели {record.transfers}")
        else:
            for name, best, epoch in run_sweep(config, args.workers):
                print(f"✅ {name}: {best:.4f} (эпоха {epoch})")
        return 0
    except FedSlsError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    print("=" * 70)
    print("🧪 FedSLS: ФЕДЕРАТИВНОЕ ОБУЧЕНИЕ ПО РАСПИСАНИЮ МЕТОК".center(70))
    print("=" * 70)
    sys.exit(main())
