#!/usr/bin/env python3
"""
Моделирование наногрида постоянного тока
Использование:
    python main.py simulate --scenario data/dcdn-day.scenario --out exports/day
    python main.py powerflow --network data/dcdn-12bus.network --flow data/test-1.flow
    python main.py size --load 1.63 --hsp 4.2
    python main.py validate --out exports/validation.json
    python main.py compare
"""

import argparse
import os
import sys
import time
from typing import List, Optional

import pandas as pd
from loguru import logger

from base.errors import (
    ConvergenceError,
    NanogridError,
    SimulationStepError,
)
from config.settings import load_config
from models.charge_controller import DEFAULT_PRESET, controller_preset
from services.network_powerflow import FlowProblem, newton_raphson_flow, require_converged
from services.simulation import BRANCH_PREFIX, Scenario, SimResult, run
from services.system_config import SizingInput, compare_ac_dc_scenarios, size_system
from services.validation import run_all, write_report
from storage.file_client import FileClient
from storage.scenario_loader import load_flow_spec, load_network, load_scenario
from utils.helpers import create_directories, format_duration

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2
EXIT_INTERRUPTED = 130


def setup_logging(level: str = "INFO", log_dir: str = "logs"):
    """Настройка логирования"""
    logger.remove()  # Удаляем стандартный обработчик

    # Консольный вывод с цветами
    logger.add(sys.stdout, format=CONSOLE_FORMAT, level=level)

    # Файловый лог
    logger.add(
        os.path.join(log_dir, "nanogrid_{time:YYYY-MM-DD}.log"),
        format=FILE_FORMAT,
        level="DEBUG",
        rotation="1 day",
        retention="30 days"
    )


class NanogridArgumentParser(argparse.ArgumentParser):
    """Парсер, завершающий работу с кодом 1 при ошибке использования"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: ошибка: {message}\n")


def create_parser():
    """Создание парсера аргументов командной строки"""
    parser = NanogridArgumentParser(
        description="Моделирование наногрида постоянного тока с распределенными PV и аккумуляторами",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Примеры использования:
    python main.py simulate --scenario data/dcdn-day.scenario --out exports/day
    python main.py simulate --scenario data/dcdn-day.scenario --dt 30 --from 2024-06-01T06:00:00Z --to 2024-06-01T18:00:00Z
    python main.py powerflow --network data/dcdn-12bus.network --flow data/test-1.flow
    python main.py powerflow --network data/dcdn-12bus.network --flow data/test-1.flow --regulated float
    python main.py size --load 1.63 --hsp 4.2
    python main.py validate --out exports/validation.json
    python main.py compare
    python main.py simulate --scenario data/dcdn-day.scenario --verbose   # С подробным логированием
        """
    )

    parser.add_argument(
        '--verbose', '-v',
        action='store_true',
        help='Включить подробное логирование (DEBUG уровень)'
    )

    subparsers = parser.add_subparsers(dest='command', required=True, parser_class=NanogridArgumentParser)

    simulate = subparsers.add_parser('simulate', help='Моделирование во времени по сценарию')
    simulate.add_argument('--scenario', required=True, help='Файл сценария (TOML)')
    simulate.add_argument('--out', help='Каталог результатов (по умолчанию NANOGRID_OUTPUT_DIR)')
    simulate.add_argument('--dt', type=float, help='Шаг моделирования, с')
    simulate.add_argument('--from', dest='start', help='Начало окна, ISO-8601 UTC')
    simulate.add_argument('--to', dest='end', help='Конец окна, ISO-8601 UTC')

    powerflow = subparsers.add_parser('powerflow', help='Расчет потокораспределения')
    powerflow.add_argument('--network', required=True, help='Файл сети (TOML)')
    powerflow.add_argument('--flow', required=True, help='Файл режима (TOML)')
    powerflow.add_argument('--out', help='Каталог для solution.csv')
    powerflow.add_argument(
        '--regulated',
        choices=['absorption', 'float'],
        help='Напряжения источников равны уставке абсорбции или поддержания'
    )

    size = subparsers.add_parser('size', help='Расчет банка и фотогенератора автономной системы')
    size.add_argument('--load', type=float, required=True, help='Суточное потребление, кВт·ч')
    size.add_argument('--hsp', type=float, required=True, help='Минимальное число пиковых солнечных часов, кВт·ч/м²/сут')
    size.add_argument('--eff', type=float, default=0.86, help='КПД заряда-разряда (по умолчанию 0.86)')
    size.add_argument('--dod', type=float, default=0.8, help='Максимальная глубина разряда (по умолчанию 0.8)')
    size.add_argument('--safety', type=float, default=1.25, help='Коэффициент запаса (по умолчанию 1.25)')
    size.add_argument('--voltage', type=float, default=24.0, help='Напряжение банка, В (по умолчанию 24)')
    size.add_argument('--min-autonomy', type=float, default=1.0, help='Минимальное число дней автономии')

    validate = subparsers.add_parser('validate', help='Контрольные расчеты и отчет')
    validate.add_argument('--out', help='Файл отчета JSON')

    subparsers.add_parser('compare', help='Сравнение потребления при питании переменным и постоянным током')

    return parser


def _timestamp(value: Optional[str]) -> Optional[pd.Timestamp]:
    if value is None:
        return None
    stamp = pd.Timestamp(value)
    return stamp.tz_localize('UTC') if stamp.tz is None else stamp.tz_convert('UTC')


def format_summary(scenario: Scenario, result: SimResult) -> str:
    """Текстовая сводка: баланс, суточные итоги, экстремумы напряжений, события"""
    lines = [
        f"Сценарий: {scenario.name}",
        f"Окно: {scenario.start} .. {scenario.end}, шаг {scenario.dt} с, шагов {len(result.traces)}",
        f"Шагов без сходимости согласования: {result.non_converged_steps}",
        "",
        "Энергетический баланс, кВт·ч",
    ]
    ledger = result.ledger
    if ledger is None:
        lines.append("  нет шагов моделирования")
    else:
        lines += [
            f"  E_GFV    = {ledger.e_gfv:.4f}",
            f"  E_BC     = {ledger.e_bc:.4f}",
            f"  E_BB     = {ledger.e_bb:.4f}",
            f"  E_losses = {ledger.e_losses:.4f} (накоплено {ledger.e_losses_accumulated:.4f})",
            f"  КПД снабжения = {ledger.eta_supply:.2f} %" if ledger.eta_supply is not None
            else "  КПД снабжения не определен (нет потребления)",
        ]
        for gss, value in sorted(ledger.yields.items()):
            lines.append(f"  Y_{gss} = {value:.3f} кВт·ч/кВт")
        for gss, value in sorted(ledger.e_bb_by_gss.items()):
            lines.append(f"  E_BB[{gss}] = {value:.4f}")

    if not result.daily.empty:
        lines += ["", "По суткам", result.daily.to_string(float_format=lambda x: f"{x:.4f}")]

    extremes = result.voltage_extremes()
    if not extremes.empty:
        lines += ["", "Напряжения, В", extremes.to_string(float_format=lambda x: f"{x:.3f}")]

    events = result.events
    lines += ["", "События"]
    if events.empty:
        lines.append("  нет")
    else:
        for row in events.itertuples(index=False):
            lines.append(f"  {row.timestamp} {row.device} {row.kind} {row.detail}")
    return "\n".join(lines) + "\n"


def write_outputs(scenario: Scenario, result: SimResult, client: FileClient):
    """traces.csv, summary.txt, events.csv и plotdata/"""
    traces = result.traces
    client.save_table(traces, 'traces.csv')
    client.save_text(format_summary(scenario, result), 'summary.txt')
    client.save_table(result.events, 'events.csv', index=False)

    groups = {
        'batteries': ('.v_bat', '.i_bat', '.p_bat', '.soc'),
        'pv': ('.v_pv', '.i_pv', '.p_pv', '.duty'),
        'loads': ('.v', '.i', '.p_load'),
    }
    for name, suffixes in groups.items():
        columns = [c for c in traces.columns if c.endswith(suffixes) and not c.startswith(BRANCH_PREFIX)]
        client.save_table(traces[columns], f'plotdata/{name}.csv')
    branches = [c for c in traces.columns if c.startswith(BRANCH_PREFIX)] + ['p_branch_loss']
    client.save_table(traces[branches], 'plotdata/branches.csv')
    client.save_table(result.daily, 'plotdata/energy.csv')


def cmd_simulate(args, config) -> int:
    scenario = load_scenario(args.scenario, config)
    if args.dt is not None:
        scenario = scenario.with_dt(args.dt)
    scenario = scenario.with_window(_timestamp(args.start), _timestamp(args.end))

    result = run(scenario)
    client = FileClient(args.out or config.simulation.output_dir)
    write_outputs(scenario, result, client)

    if result.ledger is not None:
        ledger = result.ledger
        logger.info(
            f"📊 E_GFV={ledger.e_gfv:.3f} E_BC={ledger.e_bc:.3f} E_BB={ledger.e_bb:.3f} "
            f"E_losses={ledger.e_losses:.3f} кВт·ч"
        )
    logger.success(f"✅ Результаты сохранены в {client.base_dir}")
    return EXIT_OK


def cmd_powerflow(args, config) -> int:
    network = load_network(args.network)
    network.check_connected()
    spec = load_flow_spec(args.flow, network)

    sources = spec.source_voltages
    if args.regulated:
        preset = controller_preset(DEFAULT_PRESET)
        setpoint = preset.v_abs if args.regulated == 'absorption' else preset.v_flt
        sources = {bus: setpoint for bus in sources}

    problem = FlowProblem(sources, spec.loads, spec.conductor_temp)
    solution = newton_raphson_flow(problem, network, config.solver)
    if not solution.converged:
        logger.error(f"❌ Невязка по шинам после {solution.iterations} итераций: {solution.max_mismatch:.3e} Вт")
    require_converged(solution)

    print(f"Потокораспределение '{network.name}': {solution.iterations} итераций")
    print("Шина      V, В")
    for bus, voltage in solution.voltages.items():
        print(f"{bus:<8} {voltage:9.4f}")
    print("Ветвь         I, А")
    for key, current in solution.branch_currents.items():
        print(f"{key:<12} {current:9.4f}")

    rows = [{'element': bus, 'kind': 'bus', 'value': v} for bus, v in solution.voltages.items()]
    rows += [{'element': key, 'kind': 'branch', 'value': i} for key, i in solution.branch_currents.items()]
    client = FileClient(args.out or config.simulation.output_dir)
    client.save_table(pd.DataFrame(rows), 'solution.csv', index=False)
    logger.success("✅ Потокораспределение рассчитано")
    return EXIT_OK


def cmd_size(args, config) -> int:
    sizing = SizingInput(
        daily_dc_load=args.load,
        hsp_min=args.hsp,
        charge_discharge_eff=args.eff,
        max_depth_of_discharge=args.dod,
        safety_factor=args.safety,
        bank_voltage=args.voltage,
        min_autonomy_days=args.min_autonomy,
    )
    result = size_system(sizing)
    print(f"Скорректированная нагрузка: {result.corrected_load:.4f} кВт·ч/сут")
    print(f"Дней автономии N_D:         {result.autonomy_days:.3f}")
    print(f"Емкость банка:              {result.bank_capacity_wh:.1f} Вт·ч")
    print(f"Емкость банка:              {result.bank_capacity_ah:.1f} А·ч при {args.voltage:g} В")
    print(f"Мощность фотогенератора:    {result.pv_rated_wp:.1f} Вт")
    return EXIT_OK


def cmd_validate(args, config) -> int:
    reports = run_all()
    target = args.out or os.path.join(config.simulation.output_dir, 'validation.json')
    write_report(reports, target)
    failed = [r for r in reports if not r.passed]
    for report in reports:
        mark = 'OK  ' if report.passed else 'FAIL'
        print(f"{mark} {report.case_id:<28} {report.computed:.6g} / {report.reference:.6g} [{report.provenance}]")
    return EXIT_OK if not failed else EXIT_SOLVER


def cmd_compare(args, config) -> int:
    table = compare_ac_dc_scenarios()
    print(table.to_string(float_format=lambda x: f"{x:.2f}"))
    return EXIT_OK


COMMANDS = {
    'simulate': cmd_simulate,
    'powerflow': cmd_powerflow,
    'size': cmd_size,
    'validate': cmd_validate,
    'compare': cmd_compare,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Основная функция"""
    start_time = time.time()
    config = load_config()

    # Создаем необходимые директории
    create_directories([config.logging.log_dir])

    parser = create_parser()
    args = parser.parse_args(argv)

    setup_logging("DEBUG" if args.verbose else config.logging.level, config.logging.log_dir)

    logger.info("=" * 60)
    logger.info(f"🚀 Запуск команды {args.command}")
    logger.info("=" * 60)

    try:
        return COMMANDS[args.command](args, config)
    except KeyboardInterrupt:
        logger.warning("⚠️ Операция прервана пользователем")
        return EXIT_INTERRUPTED
    except (ConvergenceError, SimulationStepError) as e:
        logger.error(f"❌ Сбой решателя: {e}")
        return EXIT_SOLVER
    except NanogridError as e:
        logger.error(f"❌ {e}")
        return EXIT_USAGE
    except Exception as e:
        logger.error(f"❌ Критическая ошибка: {e}")
        logger.exception("Подробности ошибки:")
        return EXIT_USAGE
    finally:
        end_time = time.time()
        duration = format_duration(start_time, end_time)
        logger.info(f"⏱️ Время выполнения: {duration}")
        logger.info("=" * 60)


if __name__ == '__main__':
    sys.exit(main())
