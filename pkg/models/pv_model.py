"""
Однодиодная пятипараметрическая модель фотоэлектрического модуля и генератора

Модуль из N_s последовательных элементов описывается неявным уравнением
    I = I_ph - I_s·[exp((V + I·R_s)/V_t) - 1] - (V + I·R_s)/R_p,
где V_t = N_s·A·k·T_c/q. Генератор составлен из n_modules_series модулей:
напряжения складываются, ток общий.
"""

import math
from functools import lru_cache
from dataclasses import dataclass, replace
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.optimize import brentq, minimize_scalar

from base.constants import (
    BOLTZMANN,
    ELEMENTARY_CHARGE,
    G_NOCT,
    G_STC,
    T_AMBIENT_NOCT,
    T_STC,
    to_kelvin,
)
from base.errors import ConvergenceError, ParameterError

ArrayLike = Union[float, np.ndarray]

NEWTON_TOLERANCE = 1e-9
NEWTON_MAX_ITER = 100
_EXP_CLIP = 700.0


@dataclass(frozen=True)
class PvModuleParams:
    """Паспортные данные модуля и извлеченные сопротивления"""
    p_mp_stc: float
    v_mp_stc: float
    i_mp_stc: float
    v_oc_stc: float
    i_sc_stc: float
    noct: float = 46.0
    alpha_sc: float = 0.0
    beta_mp: float = 0.0
    n_cells_series: int = 60
    ideality: float = 1.3
    r_s: float = 0.0
    r_p: float = math.inf
    bandgap_ev: float = 1.11

    def __post_init__(self):
        if self.p_mp_stc <= 0:
            raise ParameterError(f"P_MP должна быть положительной: {self.p_mp_stc}")
        if not 0 < self.v_mp_stc < self.v_oc_stc:
            raise ParameterError(
                f"Требуется 0 < V_MP < V_OC, получено V_MP={self.v_mp_stc}, V_OC={self.v_oc_stc}"
            )
        if not 0 < self.i_mp_stc < self.i_sc_stc:
            raise ParameterError(
                f"Требуется 0 < I_MP < I_SC, получено I_MP={self.i_mp_stc}, I_SC={self.i_sc_stc}"
            )
        if self.r_s < 0:
            raise ParameterError(f"R_s не может быть отрицательным: {self.r_s}")
        if not self.r_p > 0:
            raise ParameterError(f"R_p должно быть положительным: {self.r_p}")
        if not 1.0 <= self.ideality <= 2.0:
            raise ParameterError(f"Коэффициент идеальности вне [1, 2]: {self.ideality}")
        if self.n_cells_series < 1:
            raise ParameterError(f"Число элементов должно быть >= 1: {self.n_cells_series}")

    def thermal_voltage(self, cell_temp: float) -> float:
        """Тепловое напряжение модуля N_s·A·k·T/q, В"""
        return self.n_cells_series * cell_thermal_voltage(cell_temp, self.ideality)

    @property
    def saturation_current_stc(self) -> float:
        """Ток насыщения диода при STC, А"""
        v_t = self.thermal_voltage(T_STC)
        return self.i_sc_stc / math.expm1(self.v_oc_stc / v_t)


@dataclass(frozen=True)
class PvArrayConfig:
    """Фотоэлектрический генератор из последовательно соединенных модулей"""
    module: PvModuleParams
    n_modules_series: int = 1

    def __post_init__(self):
        if self.n_modules_series < 1:
            raise ParameterError(f"n_modules_series должно быть >= 1: {self.n_modules_series}")

    @property
    def rated_power(self) -> float:
        return self.module.p_mp_stc * self.n_modules_series


@dataclass(frozen=True)
class OperatingEnvironment:
    """Условия работы: облученность, температура воздуха и, при необходимости, температура элемента"""
    irradiance: float
    ambient_temp: float = T_STC
    cell_temp: Optional[float] = None

    def __post_init__(self):
        if self.irradiance < 0:
            raise ParameterError(f"Облученность не может быть отрицательной: {self.irradiance}")

    @classmethod
    def stc(cls) -> "OperatingEnvironment":
        return cls(irradiance=G_STC, ambient_temp=T_STC, cell_temp=T_STC)


# Yingli YL245P-29b
YINGLI_YL245P = PvModuleParams(
    p_mp_stc=238.25,
    v_mp_stc=29.22,
    i_mp_stc=8.15,
    v_oc_stc=37.21,
    i_sc_stc=8.76,
    noct=46.0,
    alpha_sc=0.0006 * 8.76,
    beta_mp=-0.0045,
    n_cells_series=60,
    ideality=1.3,
    bandgap_ev=1.11,
)


def cell_thermal_voltage(cell_temp: float, ideality: float) -> float:
    return ideality * BOLTZMANN * to_kelvin(cell_temp) / ELEMENTARY_CHARGE


def cell_temperature(env: OperatingEnvironment, noct: float) -> float:
    """
    Температура элемента по модели NOCT

    Args:
        env: условия работы
        noct: номинальная рабочая температура элемента, °C

    Returns:
        T_c = T_a + (G/800)·(NOCT - 20)
    """
    return env.ambient_temp + (env.irradiance / G_NOCT) * (noct - T_AMBIENT_NOCT)


def _cell_temp(module: PvModuleParams, env: OperatingEnvironment) -> float:
    if env.cell_temp is not None:
        return env.cell_temp
    return cell_temperature(env, module.noct)


def photocurrent(module: PvModuleParams, env: OperatingEnvironment) -> float:
    """Фототок модуля, А (ноль без облученности)"""
    if env.irradiance <= 0:
        return 0.0
    delta_t = _cell_temp(module, env) - T_STC
    i_ph = env.irradiance / G_STC * module.i_sc_stc + module.alpha_sc * delta_t
    return max(i_ph, 0.0)


def saturation_current(module: PvModuleParams, cell_temp: float) -> float:
    """Ток насыщения диода при температуре элемента, А"""
    t_k = to_kelvin(cell_temp)
    t_ref = to_kelvin(T_STC)
    energy = module.bandgap_ev * ELEMENTARY_CHARGE / BOLTZMANN
    return module.saturation_current_stc * (t_k / t_ref) ** 3 * math.exp(energy * (1.0 / t_ref - 1.0 / t_k))


@lru_cache(maxsize=4096)
def _diode_terms(module: PvModuleParams, env: OperatingEnvironment) -> Tuple[float, float, float, float]:
    """(I_ph, I_s, V_t, 1/R_p) модуля для условий работы"""
    t_c = _cell_temp(module, env)
    g_p = 0.0 if math.isinf(module.r_p) else 1.0 / module.r_p
    return photocurrent(module, env), saturation_current(module, t_c), module.thermal_voltage(t_c), g_p


def _scalar_module_current(v: float, i_ph: float, i_s: float, v_t: float, r_s: float, g_p: float,
                           max_step: float) -> float:
    current = i_ph
    for _ in range(NEWTON_MAX_ITER):
        v_d = v + current * r_s
        exp_term = math.exp(min(v_d / v_t, _EXP_CLIP))
        residual = i_ph - i_s * (exp_term - 1.0) - v_d * g_p - current
        if abs(residual) < NEWTON_TOLERANCE:
            return current
        derivative = -i_s * r_s / v_t * exp_term - r_s * g_p - 1.0
        current -= min(max(residual / derivative, -max_step), max_step)
    raise ConvergenceError(
        f"Ньютон для ВАХ не сошелся за {NEWTON_MAX_ITER} итераций (невязка {abs(residual):.3e} А)",
        iterations=NEWTON_MAX_ITER,
        mismatch=abs(residual),
    )


def _module_current(module: PvModuleParams, v_module: ArrayLike, env: OperatingEnvironment) -> ArrayLike:
    i_ph, i_s, v_t, g_p = _diode_terms(module, env)
    r_s = module.r_s
    max_step = 2.0 * max(module.i_sc_stc, i_ph, 1.0)

    if np.ndim(v_module) == 0:
        return _scalar_module_current(float(v_module), i_ph, i_s, v_t, r_s, g_p, max_step)

    v = np.asarray(v_module, dtype=float)
    current = np.full_like(v, i_ph)

    for iteration in range(NEWTON_MAX_ITER):
        v_d = v + current * r_s
        exp_term = np.exp(np.minimum(v_d / v_t, _EXP_CLIP))
        residual = i_ph - i_s * (exp_term - 1.0) - v_d * g_p - current
        if np.max(np.abs(residual)) < NEWTON_TOLERANCE:
            break
        derivative = -i_s * r_s / v_t * exp_term - r_s * g_p - 1.0
        step = np.clip(residual / derivative, -max_step, max_step)
        current = current - step
    else:
        worst = float(np.max(np.abs(residual)))
        raise ConvergenceError(
            f"Ньютон для ВАХ не сошелся за {NEWTON_MAX_ITER} итераций (невязка {worst:.3e} А)",
            iterations=NEWTON_MAX_ITER,
            mismatch=worst,
        )
    return current


def iv_current(array: PvArrayConfig, v: ArrayLike, env: OperatingEnvironment) -> ArrayLike:
    """
    Ток генератора при заданном напряжении на его выводах

    Args:
        array: конфигурация генератора
        v: напряжение генератора, В (скаляр или массив, v >= 0)
        env: условия работы

    Returns:
        Ток I_FV, А
    """
    if np.ndim(v) == 0:
        if v < 0:
            raise ParameterError("Обратное смещение (v < 0) не моделируется")
        return _module_current(array.module, float(v) / array.n_modules_series, env)
    if np.any(np.asarray(v) < 0):
        raise ParameterError("Обратное смещение (v < 0) не моделируется")
    return _module_current(array.module, np.asarray(v, dtype=float) / array.n_modules_series, env)


def short_circuit_current(array: PvArrayConfig, env: OperatingEnvironment) -> float:
    return iv_current(array, 0.0, env)


def open_circuit_voltage(array: PvArrayConfig, env: OperatingEnvironment) -> float:
    """Напряжение холостого хода генератора, В"""
    module = array.module
    i_ph = photocurrent(module, env)
    if i_ph <= 0:
        return 0.0
    t_c = _cell_temp(module, env)
    ideal_voc = module.thermal_voltage(t_c) * math.log1p(i_ph / saturation_current(module, t_c))
    upper = array.n_modules_series * ideal_voc * 1.01 + 1e-6
    return brentq(lambda v: iv_current(array, v, env), 0.0, upper, xtol=1e-9)


def mpp(array: PvArrayConfig, env: OperatingEnvironment) -> Tuple[float, float, float]:
    """
    Точка максимальной мощности генератора

    Returns:
        (v_mp, i_mp, p_mp)
    """
    if env.irradiance <= 0:
        raise ParameterError("Точка максимальной мощности определена только при G > 0")
    v_oc = open_circuit_voltage(array, env)
    if v_oc <= 0:
        return 0.0, 0.0, 0.0
    result = minimize_scalar(
        lambda v: -v * iv_current(array, v, env),
        bounds=(0.0, v_oc),
        method='bounded',
        options={'xatol': 1e-7},
    )
    v_mp = float(result.x)
    i_mp = iv_current(array, v_mp, env)
    return v_mp, i_mp, v_mp * i_mp


def mpp_voltage_estimate(array: PvArrayConfig, env: OperatingEnvironment) -> float:
    """Оценка напряжения МРР по температурному коэффициенту и логарифмической поправке на облученность"""
    if env.irradiance <= 0:
        raise ParameterError("Оценка V_MP определена только при G > 0")
    module = array.module
    t_c = _cell_temp(module, env)
    delta_t = t_c - T_STC
    v_th = cell_thermal_voltage(t_c, module.ideality)
    v_module = (
        module.v_mp_stc * (1.0 + module.beta_mp * delta_t)
        + module.n_cells_series * v_th * math.log(env.irradiance / G_STC)
    )
    return array.n_modules_series * v_module


def iv_curve(array: PvArrayConfig, env: OperatingEnvironment, n_points: int = 200) -> pd.DataFrame:
    """Табличная ВАХ генератора от 0 до V_OC"""
    v_oc = open_circuit_voltage(array, env)
    voltages = np.linspace(0.0, v_oc, n_points)
    currents = np.asarray(iv_current(array, voltages, env))
    return pd.DataFrame({'v': voltages, 'i': currents, 'p': voltages * currents})


def _parallel_resistance(module: PvModuleParams, r_s: float) -> float:
    v_mp, i_mp = module.v_mp_stc, module.i_mp_stc
    i_s = module.saturation_current_stc
    exp_term = math.exp((v_mp + i_mp * r_s) / module.thermal_voltage(T_STC))
    denominator = v_mp * module.i_sc_stc - v_mp * i_s * exp_term + v_mp * i_s - module.p_mp_stc
    if denominator <= 0:
        return -math.inf
    return v_mp * (v_mp + i_mp * r_s) / denominator


def _model_power(module: PvModuleParams, r_s: float, r_p: float) -> float:
    candidate = PvArrayConfig(replace(module, r_s=r_s, r_p=r_p))
    return mpp(candidate, OperatingEnvironment.stc())[2]


def extract_resistances(
    module: PvModuleParams,
    step: float = 1e-3,
    tolerance: float = 0.01,
    max_steps: int = 10_000,
) -> Tuple[float, float]:
    """
    Итеративное извлечение последовательного и параллельного сопротивлений

    R_s наращивается с шагом step от нуля, R_p на каждом шаге берется так, чтобы
    кривая модели проходила через паспортную точку (V_MP, I_MP). Останов, когда
    максимум мощности модели отличается от паспортного меньше чем на tolerance.

    Args:
        module: паспортные данные (поля r_s и r_p игнорируются)
        step: начальный шаг по R_s, Ом
        tolerance: допуск по мощности, Вт
        max_steps: предельное число шагов

    Returns:
        (r_s, r_p) в Омах
    """
    target = module.p_mp_stc
    r_s = 0.0
    last_good: Optional[Tuple[float, float]] = None

    for iteration in range(max_steps):
        r_p = _parallel_resistance(module, r_s)
        if not (r_p > 0 and math.isfinite(r_p)):
            if last_good is None:
                raise ConvergenceError(
                    "Отрицательное R_p уже при R_s = 0: паспортные данные несовместимы",
                    iterations=iteration,
                )
            # перелет через полюс R_p: возврат и уменьшение шага
            step /= 2.0
            if step < 1e-12:
                break
            r_s = last_good[0] + step
            continue

        error = _model_power(module, r_s, r_p) - target
        logger.debug("Извлечение: шаг {}, R_s={:.6f}, R_p={:.3f}, ΔP={:.5f} Вт", iteration, r_s, r_p, error)
        if abs(error) < tolerance:
            logger.info(f"✅ Сопротивления извлечены: R_s={r_s:.4f} Ом, R_p={r_p:.2f} Ом ({iteration} шагов)")
            return r_s, r_p

        if last_good is not None and (error * last_good[1] < 0 or abs(error) > abs(last_good[1])):
            refined = _refine_between(module, last_good[0] - step, r_s, target, tolerance)
            if refined is not None:
                return refined

        last_good = (r_s, error)
        r_s += step

    mismatch = last_good[1] if last_good else float('nan')
    raise ConvergenceError(
        f"Извлечение R_s/R_p не сошлось (ΔP={mismatch:.4f} Вт)",
        iterations=max_steps,
        mismatch=mismatch,
    )


def _refine_between(
    module: PvModuleParams, low: float, high: float, target: float, tolerance: float
) -> Optional[Tuple[float, float]]:
    low = max(low, 0.0)

    def objective(r_s: float) -> float:
        r_p = _parallel_resistance(module, r_s)
        if not (r_p > 0 and math.isfinite(r_p)):
            return math.inf
        return abs(_model_power(module, r_s, r_p) - target)

    result = minimize_scalar(objective, bounds=(low, high), method='bounded', options={'xatol': 1e-9})
    if result.fun < tolerance:
        r_s = float(result.x)
        return r_s, _parallel_resistance(module, r_s)
    return None


def deviation_metrics(
    model_point: Tuple[float, float, float, float],
    measured_point: Tuple[float, float, float, float],
) -> Tuple[float, float, float]:
    """
    Отклонения модели от измерений в характерных точках

    Точки задаются как (v_oc, i_sc, v_mp, p_mp). Возвращает доли (d_oc, d_sc, d_mp).
    """
    v_oc_m, i_sc_m, v_mp_m, p_mp_m = model_point
    v_oc_e, i_sc_e, v_mp_e, p_mp_e = measured_point
    if 0 in (v_oc_e, i_sc_e, v_mp_e, p_mp_e):
        raise ParameterError(f"Измеренные значения должны быть ненулевыми: {measured_point}")
    d_oc = abs(v_oc_m / v_oc_e - 1.0)
    d_sc = abs(i_sc_m / i_sc_e - 1.0)
    d_mp = math.hypot(p_mp_m / p_mp_e - 1.0, v_mp_m / v_mp_e - 1.0)
    return d_oc, d_sc, d_mp


def dcdn_pv_array(module: Optional[PvModuleParams] = None) -> PvArrayConfig:
    """Генератор наногрида: два модуля последовательно с извлеченными сопротивлениями"""
    module = module or YINGLI_YL245P
    if module.r_s == 0.0 and math.isinf(module.r_p):
        module = with_extracted_resistances(module)
    return PvArrayConfig(module=module, n_modules_series=2)


@lru_cache(maxsize=16)
def with_extracted_resistances(module: PvModuleParams) -> PvModuleParams:
    """Копия модуля с извлеченными R_s и R_p (результат кэшируется)"""
    r_s, r_p = extract_resistances(module)
    return replace(module, r_s=r_s, r_p=r_p)
