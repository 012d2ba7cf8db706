"""
Энергетический баланс суток: выработка, потребление, банки, потери, КПД снабжения

Колонки трасс:
    <GSS>.p_pv   - мощность фотогенератора, Вт
    <GSS>.p_bat  - мощность банка, Вт (положительная при заряде)
    <GSS>.p_loss - потери контроллера с собственным потреблением, Вт
    <LB>.p_load  - мощность нагрузочного банка, Вт
    p_branch_loss - потери в ветвях сети, Вт
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional

import numpy as np
import pandas as pd
from loguru import logger
from scipy.integrate import trapezoid

from base.constants import SECONDS_PER_HOUR
from base.errors import ParameterError

PV_SUFFIX = '.p_pv'
BATTERY_SUFFIX = '.p_bat'
CONTROLLER_LOSS_SUFFIX = '.p_loss'
LOAD_SUFFIX = '.p_load'
BRANCH_LOSS_COLUMN = 'p_branch_loss'

# абсолютный допуск сверки потерь, кВт·ч
_CLOSURE_FLOOR = 1e-9


@dataclass(frozen=True)
class EnergyLedger:
    """Энергии за интервал, кВт·ч; КПД в процентах; удельная выработка в кВт·ч/кВт"""
    e_gfv: float
    e_bc: float
    e_bb: float
    e_losses: float
    eta_supply: Optional[float]
    e_losses_accumulated: Optional[float] = None
    e_gfv_by_gss: Dict[str, float] = field(default_factory=dict)
    e_bb_by_gss: Dict[str, float] = field(default_factory=dict)
    e_bc_by_lb: Dict[str, float] = field(default_factory=dict)
    yields: Dict[str, float] = field(default_factory=dict)

    @property
    def closure_error(self) -> Optional[float]:
        """Относительное расхождение остатка баланса и накопленных потерь"""
        if self.e_losses_accumulated is None:
            return None
        scale = max(abs(self.e_losses), abs(self.e_losses_accumulated), _CLOSURE_FLOOR)
        return abs(self.e_losses - self.e_losses_accumulated) / scale

    def closes(self, tolerance: float = 0.01) -> bool:
        error = self.closure_error
        if error is None:
            return True
        return error <= tolerance or abs(self.e_losses - self.e_losses_accumulated) <= _CLOSURE_FLOOR

    def as_dict(self) -> Dict[str, object]:
        return {
            'E_GFV_kWh': self.e_gfv,
            'E_BC_kWh': self.e_bc,
            'E_BB_kWh': self.e_bb,
            'E_losses_kWh': self.e_losses,
            'E_losses_accumulated_kWh': self.e_losses_accumulated,
            'eta_supply_pct': self.eta_supply,
        }


def supply_efficiency(e_losses: float, e_bc: float) -> Optional[float]:
    """η = (1 - E_losses/E_BC)·100 %; None, если потребления не было"""
    if e_bc == 0:
        return None
    return (1.0 - e_losses / e_bc) * 100.0


def pv_yield(e_gfv_kwh: float, p_mp_stc_kw: float) -> float:
    """Удельная выработка фотогенератора, кВт·ч/кВт"""
    if p_mp_stc_kw <= 0:
        raise ParameterError(f"Номинальная мощность должна быть положительной: {p_mp_stc_kw}")
    return e_gfv_kwh / p_mp_stc_kw


def ledger_from_energies(e_gfv: float, e_bc: float, e_bb: float,
                         e_losses_accumulated: Optional[float] = None) -> EnergyLedger:
    """Баланс из измеренных энергий: E_losses = E_GFV - E_BB - E_BC"""
    e_losses = e_gfv - e_bb - e_bc
    return EnergyLedger(
        e_gfv=e_gfv,
        e_bc=e_bc,
        e_bb=e_bb,
        e_losses=e_losses,
        eta_supply=supply_efficiency(e_losses, e_bc),
        e_losses_accumulated=e_losses_accumulated,
    )


def _hours(index: pd.Index) -> np.ndarray:
    if isinstance(index, pd.DatetimeIndex):
        seconds = (index - index[0]).total_seconds()
        return np.asarray(seconds, dtype=float) / SECONDS_PER_HOUR
    return np.asarray(index, dtype=float) / SECONDS_PER_HOUR


def integrate_power(power: pd.Series) -> float:
    """Энергия по трапециям, кВт·ч; индекс - метки времени или секунды"""
    if len(power) < 2:
        return 0.0
    return float(trapezoid(power.to_numpy(dtype=float), _hours(power.index))) / 1000.0


def _ids_with_suffix(columns, suffix: str) -> List[str]:
    return [column[:-len(suffix)] for column in columns if column.endswith(suffix)]


def energy_ledger(traces: pd.DataFrame, rated_power: Optional[Mapping[str, float]] = None) -> EnergyLedger:
    """
    Энергетический баланс по трассам моделирования

    Args:
        traces: трассы с индексом времени
        rated_power: номинальная мощность фотогенераторов по GSS, Вт (для удельной выработки)

    Returns:
        EnergyLedger
    """
    if traces.empty:
        raise ParameterError("Трассы пусты, баланс не определен")

    gss_ids = _ids_with_suffix(traces.columns, PV_SUFFIX)
    lb_ids = _ids_with_suffix(traces.columns, LOAD_SUFFIX)

    e_gfv_by_gss = {gss: integrate_power(traces[gss + PV_SUFFIX]) for gss in gss_ids}
    e_bb_by_gss = {
        gss: integrate_power(traces[gss + BATTERY_SUFFIX])
        for gss in gss_ids if gss + BATTERY_SUFFIX in traces
    }
    e_bc_by_lb = {lb: integrate_power(traces[lb + LOAD_SUFFIX]) for lb in lb_ids}

    accumulated = None
    loss_columns = [gss + CONTROLLER_LOSS_SUFFIX for gss in gss_ids if gss + CONTROLLER_LOSS_SUFFIX in traces]
    if BRANCH_LOSS_COLUMN in traces or loss_columns:
        accumulated = sum(integrate_power(traces[column]) for column in loss_columns)
        if BRANCH_LOSS_COLUMN in traces:
            accumulated += integrate_power(traces[BRANCH_LOSS_COLUMN])

    ledger = ledger_from_energies(
        e_gfv=sum(e_gfv_by_gss.values()),
        e_bc=sum(e_bc_by_lb.values()),
        e_bb=sum(e_bb_by_gss.values()),
        e_losses_accumulated=accumulated,
    )

    yields = {}
    for gss, rated in (rated_power or {}).items():
        if gss in e_gfv_by_gss:
            yields[gss] = pv_yield(e_gfv_by_gss[gss], rated / 1000.0)

    if not ledger.closes():
        logger.warning(
            f"⚠️ Остаток баланса {ledger.e_losses:.4f} кВт·ч расходится с накопленными потерями "
            f"{ledger.e_losses_accumulated:.4f} кВт·ч"
        )

    return EnergyLedger(
        e_gfv=ledger.e_gfv,
        e_bc=ledger.e_bc,
        e_bb=ledger.e_bb,
        e_losses=ledger.e_losses,
        eta_supply=ledger.eta_supply,
        e_losses_accumulated=accumulated,
        e_gfv_by_gss=e_gfv_by_gss,
        e_bb_by_gss=e_bb_by_gss,
        e_bc_by_lb=e_bc_by_lb,
        yields=yields,
    )


def _power_columns(columns) -> List[str]:
    suffixes = (PV_SUFFIX, BATTERY_SUFFIX, CONTROLLER_LOSS_SUFFIX, LOAD_SUFFIX)
    return [column for column in columns if column.endswith(suffixes) or column == BRANCH_LOSS_COLUMN]


def _with_midnights(power: pd.DataFrame) -> pd.DataFrame:
    """Мощности с добавленными отсчетами в полночь, значения линейно интерполированы по времени"""
    first, last = power.index[0], power.index[-1]
    midnights = pd.date_range(first.normalize() + pd.Timedelta(days=1), last, freq='D')
    missing = midnights.difference(power.index)
    if missing.empty:
        return power
    return power.reindex(power.index.union(missing)).interpolate(method='time')


def daily_ledger(traces: pd.DataFrame, rated_power: Optional[Mapping[str, float]] = None) -> pd.DataFrame:
    """
    Баланс по календарным суткам (UTC), строка на сутки

    Интервал, пересекающий полночь, делится в полночь, поэтому суммы по суткам
    равны балансу всего прогона.
    """
    if traces.empty or not isinstance(traces.index, pd.DatetimeIndex):
        return pd.DataFrame(columns=['E_GFV_kWh', 'E_BC_kWh', 'E_BB_kWh', 'E_losses_kWh',
                                     'E_losses_accumulated_kWh', 'eta_supply_pct'])
    power = _with_midnights(traces[_power_columns(traces.columns)].astype(float))
    rows = {}
    for day in traces.index.normalize().unique():
        segment = power.loc[day:day + pd.Timedelta(days=1)]
        ledger = energy_ledger(segment, rated_power)
        row = ledger.as_dict()
        row.update({f"Y_{gss}": value for gss, value in ledger.yields.items()})
        rows[day.date()] = row
    result = pd.DataFrame.from_dict(rows, orient='index')
    result.index.name = 'date'
    return result
