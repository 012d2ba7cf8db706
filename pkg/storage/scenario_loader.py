"""
Чтение файлов сети, сценария и режима потокораспределения (TOML, version = 1)

Пути внутри файлов указываются относительно самого файла.
"""

import re
import tomllib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import pandas as pd
from loguru import logger

from base.errors import NanogridError, ScenarioError, ScheduleParseError
from config.settings import AppConfig, load_config
from models.battery_model import BatteryParams, c10_from_nominal
from models.charge_controller import DEFAULT_PRESET, ConverterLossConstants, controller_preset
from models.pv_model import YINGLI_YL245P, PvArrayConfig, PvModuleParams, with_extracted_resistances
from services.network_powerflow import (
    Branch,
    Bus,
    BusKind,
    BusLoad,
    Conductor,
    Network,
    constant_power,
    constant_resistance,
)
from services.simulation import GssConfig, LoadBankConfig, Scenario
from services.system_config import LoadBankSpec, LoadSchedule, parse_load_schedule, pattern_loads
from storage.file_client import read_time_series

SUPPORTED_VERSION = 1
MODULE_PRESETS: Dict[str, PvModuleParams] = {'YL245P': YINGLI_YL245P}


def _read_toml(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise ScenarioError("файл не найден", path=str(path))
    try:
        with open(path, 'rb') as handle:
            document = tomllib.load(handle)
    except tomllib.TOMLDecodeError as e:
        match = re.search(r'line (\d+)', str(e))
        raise ScenarioError(f"синтаксическая ошибка: {e}", path=str(path),
                            line=int(match.group(1)) if match else None)
    version = document.get('version')
    if version is None:
        raise ScenarioError("отсутствует поле version", path=str(path))
    if version != SUPPORTED_VERSION:
        raise ScenarioError(f"неподдерживаемая версия {version}", path=str(path))
    return document


def _require(table: Mapping[str, Any], key: str, path: Path, where: str = '') -> Any:
    if key not in table:
        raise ScenarioError(f"отсутствует поле '{key}'{' в ' + where if where else ''}", path=str(path))
    return table[key]


def _resolve(base: Path, relative: str) -> Path:
    candidate = Path(relative)
    return candidate if candidate.is_absolute() else (base.parent / candidate)


def load_network(path) -> Network:
    """
    Чтение описания сети

    Формат:
        version = 1
        name = "..."
        [conductor] r_per_km, alpha_r, ref_temp
        [[buses]] id, kind (source | load | junction)
        [[branches]] from, to, length_m
        [attachment] устройство = шина
    """
    path = Path(path)
    document = _read_toml(path)
    try:
        conductor = Conductor(**document.get('conductor', {}))
        buses = tuple(
            Bus(id=str(_require(entry, 'id', path, 'buses')), kind=BusKind(entry.get('kind', 'junction')))
            for entry in document.get('buses', [])
        )
        branches = tuple(
            Branch(
                bus_a=str(_require(entry, 'from', path, 'branches')),
                bus_b=str(_require(entry, 'to', path, 'branches')),
                length=float(_require(entry, 'length_m', path, 'branches')),
            )
            for entry in document.get('branches', [])
        )
        network = Network(
            buses=buses,
            branches=branches,
            conductor=conductor,
            attachment=dict(document.get('attachment', {})),
            name=document.get('name', path.stem),
        )
    except ScenarioError:
        raise
    except (NanogridError, TypeError, ValueError) as e:
        raise ScenarioError(str(e), path=str(path)) from e
    logger.info(f"📖 Сеть '{network.name}': {len(buses)} шин, {len(branches)} ветвей")
    return network


def _module_from(entry: Any, path: Path) -> PvModuleParams:
    if isinstance(entry, str):
        try:
            module = MODULE_PRESETS[entry]
        except KeyError:
            raise ScenarioError(f"неизвестный модуль '{entry}', доступны {sorted(MODULE_PRESETS)}", path=str(path))
    else:
        module = PvModuleParams(**entry)
    if module.r_s == 0.0 and module.r_p == float('inf'):
        module = with_extracted_resistances(module)
    return module


def _battery_from(entry: Mapping[str, Any]) -> BatteryParams:
    c_nominal = float(entry.get('c_nominal_ah', 66.0))
    n_rate = float(entry.get('n_rate_hours', 20.0))
    return BatteryParams(
        c_nominal=c_nominal,
        c10=float(entry.get('c10_ah', c10_from_nominal(c_nominal, n_rate))),
        n_rate_hours=n_rate,
        n_cells_series=int(entry.get('cells_series', 12)),
        n_strings_parallel=int(entry.get('strings', 1)),
    )


def _controller_from(entry: Mapping[str, Any]):
    overrides = dict(entry.get('controller', {}))
    losses = overrides.pop('losses', None)
    config = controller_preset(entry.get('controller_preset', DEFAULT_PRESET), **overrides)
    if losses == 'lossless':
        config = replace(config, losses=ConverterLossConstants.lossless())
    elif isinstance(losses, Mapping):
        config = replace(config, losses=ConverterLossConstants(**losses))
    return config


def _gss_from(entry: Mapping[str, Any], path: Path) -> GssConfig:
    gss_id = str(_require(entry, 'id', path, 'gss'))
    battery_entry = entry.get('battery')
    battery = _battery_from(battery_entry) if battery_entry else None
    return GssConfig(
        id=gss_id,
        pv_array=PvArrayConfig(
            module=_module_from(entry.get('module', 'YL245P'), path),
            n_modules_series=int(entry.get('modules_series', 2)),
        ),
        controller=_controller_from(entry),
        battery=battery,
        initial_soc=float(battery_entry.get('initial_soc', 0.8)) if battery_entry else 0.8,
        initial_loe=battery_entry.get('initial_loe') if battery_entry else None,
        initial_soh=float(battery_entry.get('initial_soh', 1.0)) if battery_entry else 1.0,
    )


def _load_bank_from(entry: Mapping[str, Any], path: Path,
                    schedules: Dict[Path, LoadSchedule]) -> LoadBankConfig:
    lb_id = str(_require(entry, 'id', path, 'load_banks'))
    spec = LoadBankSpec.build(
        n_lamps=int(entry.get('lamps', 0)),
        n_fans=int(entry.get('fans', 0)),
        lamp_voltage=float(entry.get('lamp_voltage_v', 24.0)),
        lamp_power=float(entry.get('lamp_power_w', 40.0)),
        fan_resistance=float(entry.get('fan_resistance_ohm', 62.24)),
        relay_map=[int(column) for column in entry.get('relay_map', [])],
    )
    schedule_path = _resolve(path, str(_require(entry, 'schedule', path, f"load_banks.{lb_id}")))
    if schedule_path not in schedules:
        if not schedule_path.exists():
            raise ScenarioError(f"файл расписания {schedule_path} не найден", path=str(path))
        try:
            schedules[schedule_path] = parse_load_schedule(schedule_path.read_text(encoding='utf-8'))
        except ScheduleParseError as e:
            raise ScenarioError(f"{schedule_path}: {e}", path=str(path)) from e
    return LoadBankConfig(id=lb_id, spec=spec, schedule=schedules[schedule_path])


def _timestamp(value: Any, path: Path, key: str) -> pd.Timestamp:
    try:
        stamp = pd.Timestamp(value)
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"неверная метка времени {key}: {value}", path=str(path)) from e
    return stamp.tz_localize('UTC') if stamp.tz is None else stamp.tz_convert('UTC')


def load_scenario(path, config: Optional[AppConfig] = None) -> Scenario:
    """
    Чтение сценария моделирования

    Args:
        path: путь к файлу сценария
        config: настройки приложения (шаг и температура проводника по умолчанию, допуски)

    Returns:
        Scenario

    Raises:
        ScenarioError, TimeSeriesError
    """
    path = Path(path)
    config = config or load_config()
    document = _read_toml(path)

    network = load_network(_resolve(path, str(_require(document, 'network', path))))
    inputs = _require(document, 'inputs', path)
    irradiance = read_time_series(str(_resolve(path, str(_require(inputs, 'irradiance', path, 'inputs')))))
    temperature = read_time_series(str(_resolve(path, str(_require(inputs, 'temperature', path, 'inputs')))))

    try:
        gss = tuple(_gss_from(entry, path) for entry in document.get('gss', []))
        schedules: Dict[Path, LoadSchedule] = {}
        load_banks = tuple(_load_bank_from(entry, path, schedules) for entry in document.get('load_banks', []))
    except ScenarioError:
        raise
    except (NanogridError, TypeError, ValueError) as e:
        raise ScenarioError(str(e), path=str(path)) from e

    start = _timestamp(document['start'], path, 'start') if 'start' in document else irradiance.index[0]
    end = _timestamp(document['end'], path, 'end') if 'end' in document else irradiance.index[-1]
    conductor_temp = document.get('conductor_temp_c', config.simulation.conductor_temp)

    scenario = Scenario(
        network=network,
        gss=gss,
        load_banks=load_banks,
        irradiance=irradiance,
        temperature=temperature,
        start=start,
        end=end,
        dt=float(document.get('dt_s', config.simulation.dt)),
        conductor_temp=float(conductor_temp) if conductor_temp is not None else None,
        solver=config.solver,
        name=document.get('name', path.stem),
    )
    logger.info(f"📖 Сценарий '{scenario.name}': {len(gss)} GSS, {len(load_banks)} нагрузочных банков")
    return scenario


@dataclass(frozen=True)
class FlowSpec:
    """Режим для расчета потокораспределения"""
    source_voltages: Dict[str, float]
    loads: Dict[str, BusLoad] = field(default_factory=dict)
    conductor_temp: float = 30.0


def load_flow_spec(path, network: Network) -> FlowSpec:
    """
    Чтение режима потокораспределения

    Формат:
        version = 1
        conductor_temp_c = 30
        pattern = "test-1"             # необязательно, набор ламп и вентиляторов
        [sources] шина = напряжение, В
        [loads.<шина>] power_w, resistance_ohm
    """
    path = Path(path)
    document = _read_toml(path)
    sources = {str(bus): float(v) for bus, v in _require(document, 'sources', path).items()}
    try:
        loads: Dict[str, BusLoad] = {}
        if 'pattern' in document:
            loads.update(pattern_loads(str(document['pattern']), network))
        for bus, entry in document.get('loads', {}).items():
            load = BusLoad()
            if 'power_w' in entry:
                load = load + constant_power(float(entry['power_w']))
            if 'resistance_ohm' in entry:
                load = load + constant_resistance(float(entry['resistance_ohm']))
            loads[bus] = loads.get(bus, BusLoad()) + load
    except (NanogridError, TypeError, ValueError) as e:
        raise ScenarioError(str(e), path=str(path)) from e
    unknown = sorted((set(sources) | set(loads)) - set(network.bus_ids))
    if unknown:
        raise ScenarioError(f"неизвестные шины {unknown}", path=str(path))
    return FlowSpec(source_voltages=sources, loads=loads,
                    conductor_temp=float(document.get('conductor_temp_c', 30.0)))
