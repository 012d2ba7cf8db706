"""
Динамическая модель свинцово-кислотной аккумуляторной батареи

Уравнения записаны для одного элемента 2 В и одной ветви банка. Напряжение
банка получается умножением на n_cells_series, ток ветви делением на
n_strings_parallel, емкость банка умножением емкости ветви на n_strings_parallel.
Положительный ток означает заряд.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Tuple

from loguru import logger
from scipy.optimize import bisect, fixed_point

from base.constants import SECONDS_PER_HOUR
from base.errors import ParameterError

SOC_FLOOR = 1e-4
REFERENCE_TEMP = 25.0


class BatteryRegion(str, Enum):
    SATURATION = 'saturation'
    OVERCHARGE = 'overcharge'
    CHARGE = 'charge'
    TRANSITION = 'transition'
    DISCHARGE = 'discharge'
    OVERDISCHARGE = 'overdischarge'
    EXHAUSTION = 'exhaustion'


@dataclass(frozen=True)
class BatteryModelConstants:
    """Обобщенные эмпирические константы модели свинцово-кислотного элемента"""
    c_t_coef: float = 1.67
    alpha_c: float = 0.005
    beta_c: float = 0.0
    a_cap: float = 0.67
    b_cap: float = 0.9
    v_bodc: float = 2.085
    k_bodc: float = 0.12
    p1_dc: float = 4.0
    p2_dc: float = 1.3
    p3_dc: float = 0.27
    p4_dc: float = 1.5
    p5_dc: float = 0.02
    a_cmt: float = 20.73
    b_cmt: float = 0.55
    v_boc: float = 2.0
    k_boc: float = 0.16
    p1_c: float = 6.0
    p2_c: float = 0.86
    p3_c: float = 0.48
    p4_c: float = 1.2
    p5_c: float = 0.036
    a_gas: float = 2.24
    b_gas: float = 1.97
    alpha_gas: float = 0.002
    a_fonsc: float = 2.45
    b_fonsc: float = 2.011
    alpha_fc: float = 0.002
    alpha_rdc: float = 0.007
    alpha_rc: float = 0.025
    a_tau: float = 17.3
    b_tau: float = 852.0
    c_tau: float = 1.67

    def __post_init__(self):
        for name in ('c_t_coef', 'a_cap', 'b_cap', 'v_bodc', 'v_boc', 'a_cmt', 'b_cmt',
                     'a_gas', 'b_gas', 'a_fonsc', 'b_fonsc', 'a_tau', 'b_tau', 'c_tau'):
            if getattr(self, name) <= 0:
                raise ParameterError(f"Константа {name} должна быть положительной")


@dataclass(frozen=True)
class AgingConstants:
    """Коэффициенты деградации: температурный член и потери по рабочей зоне (1/ч)"""
    alpha_t: float = 0.0
    beta_t: float = 0.0
    t_ref: float = 10.0
    eta_wz_extreme: float = 5.5e-6
    eta_wz_over: float = 5.5e-7
    eta_wz_normal: float = 2.7e-7

    def working_zone_factor(self, region: BatteryRegion) -> float:
        if region in (BatteryRegion.SATURATION, BatteryRegion.EXHAUSTION):
            return self.eta_wz_extreme
        if region in (BatteryRegion.OVERCHARGE, BatteryRegion.OVERDISCHARGE):
            return self.eta_wz_over
        return self.eta_wz_normal


@dataclass(frozen=True)
class BatteryParams:
    """Параметры банка: емкости ветви, состав банка, константы модели"""
    c_nominal: float
    c10: float
    n_rate_hours: float = 20.0
    v_n_cell: float = 2.0
    n_cells_series: int = 12
    n_strings_parallel: int = 1
    model_constants: BatteryModelConstants = field(default_factory=BatteryModelConstants)
    aging_constants: AgingConstants = field(default_factory=AgingConstants)
    i_delta: float = 0.05

    def __post_init__(self):
        if self.c_nominal <= 0:
            raise ParameterError(f"Номинальная емкость должна быть положительной: {self.c_nominal}")
        if self.c10 <= 0:
            raise ParameterError(f"C10 должна быть положительной: {self.c10}")
        if self.i_delta <= 0:
            raise ParameterError(f"I_delta должен быть положительным: {self.i_delta}")
        if self.n_rate_hours <= 0 or self.n_cells_series < 1 or self.n_strings_parallel < 1:
            raise ParameterError("Недопустимый состав банка или режим разряда")

    @property
    def nominal_current(self) -> float:
        """Ток номинального режима разряда для всего банка, А"""
        return self.c_nominal * self.n_strings_parallel / self.n_rate_hours

    @property
    def i10(self) -> float:
        """Ток десятичасового режима для всего банка, А"""
        return self.c10 * self.n_strings_parallel / 10.0

    @property
    def max_capacity(self) -> float:
        """C_n банка при нулевом токе и 25 °C, А·ч"""
        return self.model_constants.c_t_coef * self.c_nominal * self.n_strings_parallel

    @property
    def nominal_voltage(self) -> float:
        return self.v_n_cell * self.n_cells_series


@dataclass(frozen=True)
class BatteryState:
    soc: float
    loe: float
    soh: float = 1.0
    temp: float = REFERENCE_TEMP
    last_current: float = 0.0
    region: BatteryRegion = BatteryRegion.TRANSITION
    soc_vg: Optional[float] = None
    stored_charge: float = 0.0

    def __post_init__(self):
        for name in ('soc', 'loe', 'soh'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name} вне диапазона [0, 1]: {value}")

    @classmethod
    def initial(cls, params: BatteryParams, soc: float, loe: Optional[float] = None,
                soh: float = 1.0, temp: float = REFERENCE_TEMP) -> "BatteryState":
        loe = soc if loe is None else loe
        return cls(soc=soc, loe=loe, soh=soh, temp=temp, stored_charge=loe * params.max_capacity)


def c10_from_nominal(c_nominal: float, n_rate_hours: float = 20.0,
                     constants: Optional[BatteryModelConstants] = None) -> float:
    """C10 ветви как неподвижная точка зависимости емкости от тока при 25 °C"""
    k = constants or BatteryModelConstants()
    i_nominal = c_nominal / n_rate_hours

    def capacity_at_10h(c10):
        return c_nominal * k.c_t_coef / (1.0 + k.a_cap * ((c10 / 10.0) / i_nominal) ** k.b_cap)

    return float(fixed_point(capacity_at_10h, c_nominal * 0.8, xtol=1e-12))


def dcdn_battery_params(n_strings_parallel: int = 2, c_nominal: float = 66.0) -> BatteryParams:
    """Банк наногрида: 12 элементов последовательно, ветви по 66 А·ч (C20)"""
    return BatteryParams(
        c_nominal=c_nominal,
        c10=c10_from_nominal(c_nominal),
        n_rate_hours=20.0,
        n_cells_series=12,
        n_strings_parallel=n_strings_parallel,
    )


def _string_current(params: BatteryParams, i_bat: float) -> float:
    return i_bat / params.n_strings_parallel


def capacity(params: BatteryParams, i_bat: float, temp: float, soh: float) -> float:
    """
    Емкость банка с учетом тока, температуры и состояния здоровья

    Args:
        params: параметры банка
        i_bat: ток банка, А (знак не важен)
        temp: температура банка, °C
        soh: состояние здоровья [0, 1]

    Returns:
        Емкость, А·ч
    """
    k = params.model_constants
    delta_t = temp - REFERENCE_TEMP
    eta_c10 = 0.75 * soh + 0.25
    ratio = abs(i_bat) / params.nominal_current
    string_capacity = (
        params.c_nominal * k.c_t_coef * eta_c10 / (1.0 + k.a_cap * ratio ** k.b_cap)
        * (1.0 + k.alpha_c * delta_t + k.beta_c * delta_t ** 2)
    )
    return string_capacity * params.n_strings_parallel


def charge_efficiency(params: BatteryParams, i_bat: float, soc: float) -> float:
    """Эффективность заряда η_ch для зарядного тока i_bat > 0"""
    k = params.model_constants
    exponent = k.a_cmt / (i_bat / params.i10 + k.b_cmt) * (soc - 1.0)
    return min(max(1.0 - math.exp(exponent), 0.0), 1.0)


def gasification_voltage(params: BatteryParams, i_string: float, temp: float) -> float:
    k = params.model_constants
    return (k.a_gas + k.b_gas * math.log1p(i_string / params.c10)) * (1.0 - k.alpha_gas * (temp - REFERENCE_TEMP))


def saturation_voltage(params: BatteryParams, i_string: float, temp: float) -> float:
    k = params.model_constants
    return (k.a_fonsc + k.b_fonsc * math.log1p(i_string / params.c10)) * (1.0 - k.alpha_fc * (temp - REFERENCE_TEMP))


def overcharge_time_constant(params: BatteryParams, i_string: float) -> float:
    """Постоянная времени перезаряда, ч"""
    k = params.model_constants
    return k.a_tau / (1.0 + k.b_tau * (i_string / params.c10) ** k.c_tau)


def _charge_cell_voltage(params: BatteryParams, soc: float, i_string: float, temp: float) -> float:
    k = params.model_constants
    headroom = max(1.0 - soc, SOC_FLOOR)
    resistive = (
        k.p1_c / (1.0 + i_string ** k.p2_c)
        + k.p3_c / headroom ** k.p4_c
        + k.p5_c
    )
    return (k.v_boc + k.k_boc * soc) + i_string / params.c10 * resistive * (1.0 - k.alpha_rc * (temp - REFERENCE_TEMP))


def _discharge_cell_voltage(params: BatteryParams, soc: float, i_string: float, temp: float) -> float:
    k = params.model_constants
    magnitude = abs(i_string)
    soc_eff = max(soc, SOC_FLOOR)
    resistive = (
        k.p1_dc / (1.0 + magnitude ** k.p2_dc)
        + k.p3_dc / soc_eff ** k.p4_dc
        + k.p5_dc
    )
    return (k.v_bodc - k.k_bodc * (1.0 - soc)) - magnitude / params.c10 * resistive * (1.0 - k.alpha_rdc * (temp - REFERENCE_TEMP))


def _charge_side(params: BatteryParams, state: BatteryState, i_string: float) -> Tuple[float, BatteryRegion]:
    temp = state.temp
    v_c = _charge_cell_voltage(params, state.soc, i_string, temp)
    v_g = gasification_voltage(params, i_string, temp)
    if v_c < v_g:
        return v_c, BatteryRegion.CHARGE

    v_ec = saturation_voltage(params, i_string, temp)
    soc_vg = state.soc if state.soc_vg is None else state.soc_vg
    string_capacity = capacity(params, i_string * params.n_strings_parallel, temp, state.soh) / params.n_strings_parallel
    tau = overcharge_time_constant(params, i_string)
    # заряд, принятый с начала газовыделения; в момент начала V = V_g
    accumulated = max(0.0, (state.soc - soc_vg) * string_capacity)
    v_sc = v_g + (v_ec - v_g) * (1.0 - math.exp(-accumulated / (i_string * tau)))
    if v_sc >= v_g + 0.99 * (v_ec - v_g):
        return v_sc, BatteryRegion.SATURATION
    return v_sc, BatteryRegion.OVERCHARGE


def _discharge_side(params: BatteryParams, state: BatteryState, i_string: float) -> Tuple[float, BatteryRegion]:
    v_dc = _discharge_cell_voltage(params, state.soc, i_string, state.temp)
    if state.soc <= SOC_FLOOR or v_dc < 0.7 * params.v_n_cell:
        return v_dc, BatteryRegion.EXHAUSTION
    if v_dc <= 0.9 * params.v_n_cell:
        return v_dc, BatteryRegion.OVERDISCHARGE
    return v_dc, BatteryRegion.DISCHARGE


def transition_cell_voltage(params: BatteryParams, state: BatteryState, i_string: float) -> float:
    """Линейная интерполяция между зарядной ветвью при +I_δ и разрядной при −I_δ"""
    i_delta = params.i_delta
    v_c, _ = _charge_side(params, state, i_delta)
    v_dc, _ = _discharge_side(params, state, -i_delta)
    return (v_c - v_dc) / (2.0 * i_delta) * i_string + (v_c + v_dc) / 2.0


def terminal_voltage(params: BatteryParams, state: BatteryState, i_bat: float) -> Tuple[float, BatteryRegion]:
    """
    Напряжение на выводах банка и область работы

    Args:
        params: параметры банка
        state: текущее состояние
        i_bat: ток банка, А (положительный при заряде)

    Returns:
        (напряжение банка, В; область работы)
    """
    i_string = _string_current(params, i_bat)
    if abs(i_string) < params.i_delta:
        cell_voltage = transition_cell_voltage(params, state, i_string)
        region = BatteryRegion.TRANSITION
    elif i_string > 0:
        cell_voltage, region = _charge_side(params, state, i_string)
    else:
        cell_voltage, region = _discharge_side(params, state, i_string)
    return cell_voltage * params.n_cells_series, region


def open_circuit_estimate(params: BatteryParams, state: BatteryState) -> float:
    """Напряжение банка при нулевом токе (середина переходной области), В"""
    return terminal_voltage(params, state, 0.0)[0]


def current_for_voltage(params: BatteryParams, state: BatteryState, v_target: float,
                        i_min: float, i_max: float, xtol: float = 1e-3) -> float:
    """
    Ток банка, при котором напряжение на выводах равно v_target (бисекция)

    Если цель вне диапазона напряжений на [i_min, i_max], возвращается ближайшая граница.
    """
    def residual(i):
        return terminal_voltage(params, state, i)[0] - v_target

    low, high = residual(i_min), residual(i_max)
    if low >= 0:
        return i_min
    if high <= 0:
        return i_max
    return bisect(residual, i_min, i_max, xtol=xtol)


def self_discharge_coefficient(soh: float) -> float:
    return 0.01 - 0.009 * soh


def self_discharge_current(params: BatteryParams, state: BatteryState, dt: float) -> float:
    """Ток саморазряда (модуль), А; не может вынести за шаг больше накопленного заряда"""
    if dt <= 0:
        raise ParameterError(f"Шаг должен быть положительным: {dt}")
    stored = max(state.stored_charge, 0.0)
    if stored == 0.0:
        return 0.0
    dt_hours = dt / SECONDS_PER_HOUR
    current = self_discharge_coefficient(state.soh) * stored / 24.0
    return min(current, stored / dt_hours)


def apply_self_discharge(params: BatteryParams, state: BatteryState, dt: float) -> BatteryState:
    i_adc = self_discharge_current(params, state, dt)
    if i_adc == 0.0:
        return state
    dt_hours = dt / SECONDS_PER_HOUR
    c_now = capacity(params, 0.0, state.temp, state.soh)
    soc = min(max(state.soc - i_adc * dt_hours / c_now, 0.0), 1.0)
    loe = min(max(state.loe - i_adc * dt_hours / params.max_capacity, 0.0), 1.0)
    return replace(state, soc=soc, loe=loe, stored_charge=loe * params.max_capacity)


def step_state(params: BatteryParams, state: BatteryState, i_bat: float, temp: float, dt: float) -> BatteryState:
    """
    Продвижение состояния банка на шаг dt при постоянном токе

    Args:
        params: параметры банка
        state: состояние в начале шага
        i_bat: ток банка на шаге, А
        temp: температура банка, °C
        dt: шаг, с

    Returns:
        Новое состояние (саморазряд не применяется)
    """
    if dt <= 0:
        raise ParameterError(f"Шаг должен быть положительным: {dt}")

    state = replace(state, temp=temp)
    _, region = terminal_voltage(params, state, i_bat)

    dt_hours = dt / SECONDS_PER_HOUR
    eta = charge_efficiency(params, i_bat, state.soc) if i_bat > 0 else 1.0
    c_now = capacity(params, i_bat, temp, state.soh)
    soc = min(max(state.soc + eta * i_bat * dt_hours / c_now, 0.0), 1.0)
    loe = min(max(state.loe + eta * i_bat * dt_hours / params.max_capacity, 0.0), 1.0)

    aging = params.aging_constants
    eta_t = aging.alpha_t * abs(temp - aging.t_ref) + aging.beta_t
    soh = min(max(state.soh - (eta_t + aging.working_zone_factor(region)) * dt_hours, 0.0), state.soh)

    if region in (BatteryRegion.OVERCHARGE, BatteryRegion.SATURATION):
        soc_vg = state.soc if state.soc_vg is None else state.soc_vg
        if state.soc_vg is None:
            logger.debug(f"Начало газовыделения при SoC={state.soc:.4f}")
    else:
        soc_vg = None

    return BatteryState(
        soc=soc,
        loe=loe,
        soh=soh,
        temp=temp,
        last_current=i_bat,
        region=region,
        soc_vg=soc_vg,
        stored_charge=loe * params.max_capacity,
    )
