"""
Общие фикстуры: небольшие сети, фотогенератор с заданными сопротивлениями, ряды и сценарии
"""

from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from models.battery_model import dcdn_battery_params
from models.charge_controller import ConverterLossConstants, ControllerConfig
from models.pv_model import YINGLI_YL245P, PvArrayConfig
from services.network_powerflow import Branch, Bus, BusKind, Network
from services.simulation import GssConfig, LoadBankConfig, Scenario
from services.system_config import LoadBankSpec, LoadSchedule

DATA_DIR = Path(__file__).resolve().parent.parent / 'data'
START = pd.Timestamp('2024-06-01T00:00:00Z')


def minute_series(value, periods: int = 60, start: pd.Timestamp = START) -> pd.Series:
    index = pd.date_range(start, periods=periods, freq='1min')
    values = np.full(periods, value, dtype=float) if np.isscalar(value) else np.asarray(value, dtype=float)
    return pd.Series(values, index=index)


def schedule_from(on: bool, n_devices: int, minutes=None) -> LoadSchedule:
    """Расписание: все устройства включены (или выключены) весь день либо только в указанные минуты"""
    matrix = np.zeros((1440, n_devices), dtype=int)
    if minutes is None:
        matrix[:] = int(on)
    else:
        matrix[list(minutes)] = int(on)
    return LoadSchedule(matrix)


@pytest.fixture(scope='session')
def pv_array() -> PvArrayConfig:
    module = replace(YINGLI_YL245P, r_s=0.3, r_p=300.0)
    return PvArrayConfig(module=module, n_modules_series=2)


@pytest.fixture(scope='session')
def battery_params():
    return dcdn_battery_params()


@pytest.fixture
def lossless_controller() -> ControllerConfig:
    return ControllerConfig(losses=ConverterLossConstants.lossless())


@pytest.fixture
def line_network() -> Network:
    """A - B - C, по 10 м"""
    return Network(
        buses=(Bus('A', BusKind.SOURCE), Bus('B', BusKind.LOAD), Bus('C', BusKind.SOURCE)),
        branches=(Branch('A', 'B', 10.0), Branch('B', 'C', 10.0)),
        name='line',
    )


@pytest.fixture
def make_scenario(line_network, pv_array, battery_params):
    """Фабрика сценариев на сети A - B - C с нагрузкой на B"""

    def build(gss=None, irradiance=0.0, temperature=25.0, lamps_on=True, n_lamps=1,
              minutes=None, periods=10, end=None, dt=60.0, attachment=None, **kwargs) -> Scenario:
        if gss is None:
            gss = (GssConfig('G1', pv_array, battery=battery_params),)
        attachment = attachment or {'G1': 'A', 'G2': 'C', 'LB1': 'B'}
        network = replace(line_network, attachment={k: v for k, v in attachment.items()
                                                     if k in {g.id for g in gss} | {'LB1'}})
        bank = LoadBankConfig('LB1', LoadBankSpec.build(n_lamps=n_lamps), schedule_from(lamps_on, n_lamps, minutes))
        irradiance_series = minute_series(irradiance, periods)
        return Scenario(
            network=network,
            gss=tuple(gss),
            load_banks=(bank,),
            irradiance=irradiance_series,
            temperature=minute_series(temperature, periods),
            start=START,
            end=end if end is not None else START + pd.Timedelta(minutes=periods),
            dt=dt,
            **kwargs,
        )

    return build
