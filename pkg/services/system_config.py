"""
Расчет автономной системы, модели нагрузок, суточные расписания и пересчет потребления
"""

import io
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from base.constants import G_STC, MINUTES_PER_DAY
from base.errors import ParameterError, ScheduleParseError
from services.network_powerflow import LOADING_PATTERNS, BusLoad, Network, constant_resistance

FAN_RESISTANCE = 62.24
REFERENCE_ISC = 8.081


@dataclass(frozen=True)
class SizingInput:
    """Исходные данные для расчета автономной системы"""
    daily_dc_load: float
    hsp_min: float
    charge_discharge_eff: float = 0.86
    max_depth_of_discharge: float = 0.8
    safety_factor: float = 1.25
    bank_voltage: float = 24.0
    min_autonomy_days: float = 1.0

    def __post_init__(self):
        for name in ('daily_dc_load', 'hsp_min', 'safety_factor', 'bank_voltage'):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} должно быть положительным: {getattr(self, name)}")
        for name in ('charge_discharge_eff', 'max_depth_of_discharge'):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ParameterError(f"{name} должно лежать в (0, 1]: {value}")


@dataclass(frozen=True)
class SizingResult:
    corrected_load: float
    autonomy_days: float
    bank_capacity_wh: float
    bank_capacity_ah: float
    pv_rated_wp: float


def size_system(sizing: SizingInput) -> SizingResult:
    """
    Расчет емкости банка и мощности фотогенератора

    Args:
        sizing: исходные данные (нагрузка в кВт·ч/сут, HSP в кВт·ч/м²/сут)

    Returns:
        SizingResult с емкостью в Вт·ч и А·ч и мощностью в Вт
    """
    corrected = sizing.daily_dc_load / sizing.charge_discharge_eff
    autonomy = -0.48 * sizing.hsp_min + 4.58
    if autonomy < sizing.min_autonomy_days:
        logger.warning(
            f"⚠️ Число дней автономии {autonomy:.2f} меньше минимума, принято {sizing.min_autonomy_days}"
        )
        autonomy = sizing.min_autonomy_days
    capacity_wh = corrected * 1000.0 * autonomy / sizing.max_depth_of_discharge
    pv_wp = sizing.safety_factor * corrected * 1000.0 / sizing.hsp_min
    return SizingResult(
        corrected_load=corrected,
        autonomy_days=autonomy,
        bank_capacity_wh=capacity_wh,
        bank_capacity_ah=capacity_wh / sizing.bank_voltage,
        pv_rated_wp=pv_wp,
    )


def lamp_resistance(v_nom: float, p_nom: float) -> float:
    """Сопротивление лампы накаливания по номинальным данным V²/P"""
    if p_nom <= 0:
        raise ParameterError(f"Номинальная мощность должна быть положительной: {p_nom}")
    return v_nom ** 2 / p_nom


class DeviceKind(str, Enum):
    LAMP = 'lamp'
    FAN = 'fan'


@dataclass(frozen=True)
class LoadDevice:
    name: str
    kind: DeviceKind
    resistance: float


@dataclass(frozen=True)
class LoadBankSpec:
    """
    Набор параллельных нагрузок, каждое устройство управляется своим столбцом расписания

    relay_map задает номер столбца (с 0) для каждого устройства; пустой кортеж
    означает, что i-е устройство управляется i-м столбцом. Так несколько банков
    могут брать свои столбцы из одного общего расписания.
    """
    devices: Tuple[LoadDevice, ...]
    relay_map: Tuple[int, ...] = ()

    def __post_init__(self):
        for device in self.devices:
            if device.resistance <= 0:
                raise ParameterError(f"Сопротивление {device.name} должно быть положительным")
        if self.relay_map:
            if len(self.relay_map) != len(self.devices):
                raise ParameterError(
                    f"Карта реле содержит {len(self.relay_map)} столбцов при {len(self.devices)} устройствах"
                )
            if any(column < 0 for column in self.relay_map):
                raise ParameterError(f"Номера столбцов не могут быть отрицательными: {self.relay_map}")

    @classmethod
    def build(cls, n_lamps: int, n_fans: int = 0, lamp_voltage: float = 24.0, lamp_power: float = 40.0,
              fan_resistance: float = FAN_RESISTANCE, relay_map: Sequence[int] = ()) -> "LoadBankSpec":
        if n_lamps < 0 or n_fans < 0:
            raise ParameterError("Количество устройств не может быть отрицательным")
        r_lamp = lamp_resistance(lamp_voltage, lamp_power)
        devices = [LoadDevice(f"lamp{i + 1}", DeviceKind.LAMP, r_lamp) for i in range(n_lamps)]
        devices += [LoadDevice(f"fan{i + 1}", DeviceKind.FAN, fan_resistance) for i in range(n_fans)]
        return cls(tuple(devices), tuple(int(column) for column in relay_map))

    @property
    def size(self) -> int:
        return len(self.devices)

    @property
    def columns(self) -> Tuple[int, ...]:
        """Столбец расписания для каждого устройства"""
        return self.relay_map or tuple(range(self.size))

    def schedule_mismatch(self, n_columns: int) -> Optional[str]:
        """Описание несовместимости с расписанием из n_columns столбцов, None если совместимо"""
        if self.relay_map:
            beyond = sorted({column for column in self.relay_map if column >= n_columns})
            if beyond:
                return f"столбцы {beyond} вне расписания из {n_columns} столбцов"
            return None
        if n_columns != self.size:
            return f"{n_columns} столбцов при {self.size} устройствах"
        return None

    def select(self, schedule_row: Sequence) -> np.ndarray:
        """Маска устройств банка из строки расписания"""
        return np.asarray(schedule_row)[list(self.columns)]

    def mask_for(self, n_lamps: int, n_fans: int = 0) -> List[bool]:
        """Маска, включающая первые n_lamps ламп и n_fans вентиляторов"""
        mask, lamps, fans = [], 0, 0
        for device in self.devices:
            if device.kind == DeviceKind.LAMP and lamps < n_lamps:
                mask.append(True)
                lamps += 1
            elif device.kind == DeviceKind.FAN and fans < n_fans:
                mask.append(True)
                fans += 1
            else:
                mask.append(False)
        if lamps < n_lamps or fans < n_fans:
            raise ParameterError(f"В банке недостаточно устройств для {n_lamps} ламп и {n_fans} вентиляторов")
        return mask


def bank_equivalent_resistance(spec: LoadBankSpec, on_mask: Sequence) -> Optional[float]:
    """Эквивалентное сопротивление включенных устройств; None означает разрыв"""
    if len(on_mask) != spec.size:
        raise ParameterError(f"Длина маски {len(on_mask)} не совпадает с числом устройств {spec.size}")
    conductance = sum(1.0 / device.resistance for device, on in zip(spec.devices, on_mask) if on)
    if conductance == 0:
        return None
    return 1.0 / conductance


@dataclass(frozen=True)
class LoadSchedule:
    """Поминутное расписание: 1440 строк, столбец на устройство, ненулевое значение - включено"""
    matrix: np.ndarray

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != MINUTES_PER_DAY:
            raise ScheduleParseError(
                f"Расписание должно содержать {MINUTES_PER_DAY} строк, получено {self.matrix.shape[0]}"
            )

    @property
    def n_devices(self) -> int:
        return self.matrix.shape[1]

    def mask_at(self, minute_of_day: int) -> np.ndarray:
        return self.matrix[minute_of_day % MINUTES_PER_DAY] != 0

    @classmethod
    def all_off(cls, n_devices: int) -> "LoadSchedule":
        return cls(np.zeros((MINUTES_PER_DAY, n_devices), dtype=int))

    def to_text(self) -> str:
        return '\n'.join(','.join(str(int(v)) for v in row) for row in self.matrix) + '\n'


def parse_load_schedule(text: str) -> LoadSchedule:
    """
    Разбор текста расписания: целые числа через запятую или пробел, 1440 строк

    Raises:
        ScheduleParseError с номером строки (с 1) и столбца
    """
    rows: List[List[int]] = []
    width = None
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        tokens = stripped.replace(',', ' ').split()
        values = []
        for column, token in enumerate(tokens, start=1):
            try:
                values.append(int(token))
            except ValueError:
                raise ScheduleParseError(f"Нецелое значение '{token}'", row=line_number, column=column)
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ScheduleParseError(
                f"Ожидалось {width} столбцов, получено {len(values)}", row=line_number, column=len(values)
            )
        rows.append(values)

    if len(rows) != MINUTES_PER_DAY:
        deficit = MINUTES_PER_DAY - len(rows)
        detail = f"не хватает {deficit}" if deficit > 0 else f"лишних {-deficit}"
        raise ScheduleParseError(f"Расписание содержит {len(rows)} строк вместо {MINUTES_PER_DAY} ({detail})")
    return LoadSchedule(np.array(rows, dtype=int))


def irradiance_from_isc(i_sc_measured: float, i_sc_stc_ref: float = REFERENCE_ISC) -> float:
    """Облученность по току короткого замыкания эталонного модуля, Вт/м²"""
    if i_sc_stc_ref <= 0:
        raise ParameterError(f"Эталонный ток должен быть положительным: {i_sc_stc_ref}")
    return G_STC * i_sc_measured / i_sc_stc_ref


class ConsumptionKind(str, Enum):
    ELECTRONIC = 'electronic'
    MOTOR = 'motor'
    INVERTER_AC = 'inverter_ac'


def dc_equivalent_consumption(e_ac: float, kind: ConsumptionKind, eta_rect: float = 0.812,
                              eta_dcdc: float = 0.98, eta_inv: float = 0.98) -> float:
    """Эквивалентное потребление при питании постоянным током, кВт·ч"""
    if e_ac < 0:
        raise ParameterError(f"Потребление не может быть отрицательным: {e_ac}")
    kind = ConsumptionKind(kind)
    if kind == ConsumptionKind.MOTOR:
        return e_ac / eta_inv
    return e_ac * eta_dcdc * eta_rect


@dataclass(frozen=True)
class Appliance:
    name: str
    units: int
    e_ac: float
    kind: ConsumptionKind


_TV = ('TV 29"', 15.3, ConsumptionKind.ELECTRONIC)
_PC = ('PC (CPU+Monitor)', 27.0, ConsumptionKind.ELECTRONIC)
_PHONE = ('Phone', 5.4, ConsumptionKind.ELECTRONIC)
_AC = ('AC 10000 BTU', 186.0, ConsumptionKind.MOTOR)
_AC_INVERTER = ('AC Inverter 10000 BTU', 130.2, ConsumptionKind.INVERTER_AC)
_LED = ('LED bulb 8W', 1.92, ConsumptionKind.ELECTRONIC)
_FRIDGE = ('Refrigerator + Freezer 350L', 53.1, ConsumptionKind.MOTOR)


def _appliances(*entries) -> Tuple[Appliance, ...]:
    return tuple(Appliance(name, units, units * e_unit, kind) for (name, e_unit, kind), units in entries)


RESIDENTIAL_SCENARIOS: Dict[str, Tuple[Appliance, ...]] = {
    'A': _appliances((_TV, 1), (_PC, 1), (_PHONE, 1), (_AC, 1), (_LED, 4), (_FRIDGE, 1)),
    'B': _appliances((_TV, 1), (_PC, 1), (_PHONE, 2), (_AC, 2), (_LED, 4), (_FRIDGE, 1)),
    'C': _appliances((_TV, 2), (_PC, 2), (_PHONE, 3), (_AC_INVERTER, 2), (_LED, 4), (_FRIDGE, 1)),
    'D': _appliances((_TV, 1), (_PC, 1), (_PHONE, 1), (_AC_INVERTER, 1), (_LED, 4), (_FRIDGE, 1)),
}


def compare_ac_dc_scenarios(scenarios: Optional[Dict[str, Tuple[Appliance, ...]]] = None) -> pd.DataFrame:
    """Месячное потребление сценариев при питании переменным и постоянным током, кВт·ч"""
    scenarios = scenarios or RESIDENTIAL_SCENARIOS
    records = []
    for name, appliances in scenarios.items():
        e_ac = sum(a.e_ac for a in appliances)
        e_dc = sum(dc_equivalent_consumption(a.e_ac, a.kind) for a in appliances)
        records.append({'scenario': name, 'e_ac_kwh': e_ac, 'e_dc_kwh': e_dc, 'dc_to_ac': e_dc / e_ac})
    return pd.DataFrame.from_records(records).set_index('scenario')


def load_schedule_frame(schedule: LoadSchedule, columns: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Расписание как DataFrame с индексом минут суток"""
    columns = list(columns) if columns else [f"d{i + 1}" for i in range(schedule.n_devices)]
    return pd.DataFrame(schedule.matrix, columns=columns, index=pd.RangeIndex(MINUTES_PER_DAY, name='minute'))


def read_load_schedule(buffer: io.TextIOBase) -> LoadSchedule:
    return parse_load_schedule(buffer.read())


DCDN_LOAD_BANKS: Dict[str, LoadBankSpec] = {
    'LB1': LoadBankSpec.build(n_lamps=5, n_fans=1),
    'LB2': LoadBankSpec.build(n_lamps=5, n_fans=1),
    'LB3': LoadBankSpec.build(n_lamps=5),
}


def pattern_loads(pattern: str, network: Network,
                  banks: Optional[Mapping[str, LoadBankSpec]] = None) -> Dict[str, BusLoad]:
    """Нагрузки шин для именованного набора включенных ламп и вентиляторов"""
    banks = banks or DCDN_LOAD_BANKS
    try:
        counts = LOADING_PATTERNS[pattern]
    except KeyError:
        raise ParameterError(f"Неизвестный режим нагрузки '{pattern}', доступны: {sorted(LOADING_PATTERNS)}")
    loads: Dict[str, BusLoad] = {}
    for lb_id, (n_lamps, n_fans) in counts.items():
        spec = banks[lb_id]
        resistance = bank_equivalent_resistance(spec, spec.mask_for(n_lamps, n_fans))
        if resistance is None:
            continue
        bus = network.bus_of(lb_id)
        loads[bus] = loads.get(bus, BusLoad()) + constant_resistance(resistance)
    logger.debug(f"📊 Режим {pattern}: нагрузки на шинах {sorted(loads)}")
    return loads
