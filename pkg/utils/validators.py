"""
Валидаторы сценариев и входных временных рядов
"""

from collections import Counter
from typing import Dict, List, Tuple

import pandas as pd
from loguru import logger

from base.errors import NanogridError, ScenarioError
from utils.helpers import series_cadence


class ScenarioValidator:
    """Проверки сценария перед моделированием"""

    # допуск кратности шага интервалу рядов, с
    CADENCE_TOLERANCE = 1e-6

    @classmethod
    def validate_series(cls, series: pd.Series, name: str) -> List[str]:
        """Монотонность, отсутствие дубликатов и пропусков"""
        errors = []
        if series.empty:
            return [f"Ряд '{name}' пуст"]
        if not isinstance(series.index, pd.DatetimeIndex) or series.index.tz is None:
            errors.append(f"Ряд '{name}' должен иметь индекс меток времени UTC")
            return errors
        if series.index.has_duplicates:
            errors.append(f"Ряд '{name}' содержит повторяющиеся метки времени")
        if not series.index.is_monotonic_increasing:
            errors.append(f"Ряд '{name}' не упорядочен по времени")
        if series.isna().any():
            errors.append(f"Ряд '{name}' содержит пропуски")
        return errors

    @classmethod
    def validate_window(cls, series: pd.Series, name: str, start: pd.Timestamp, end: pd.Timestamp) -> List[str]:
        """Ряд покрывает окно [start, end) с удержанием последнего отсчета на его интервал"""
        if series.empty or end <= start:
            return []
        cadence = series_cadence(series) or 0.0
        covered_until = series.index[-1] + pd.Timedelta(seconds=cadence)
        errors = []
        if series.index[0] > start:
            errors.append(f"Ряд '{name}' начинается в {series.index[0]}, позже начала окна {start}")
        if covered_until < end:
            errors.append(f"Ряд '{name}' заканчивается в {series.index[-1]}, раньше конца окна {end}")
        return errors

    @classmethod
    def validate_step(cls, dt: float, series: pd.Series, name: str) -> List[str]:
        """Шаг делит интервал ряда"""
        if dt <= 0:
            return [f"Шаг должен быть положительным: {dt}"]
        cadence = series_cadence(series)
        if cadence is None:
            return []
        ratio = cadence / dt
        if abs(ratio - round(ratio)) > cls.CADENCE_TOLERANCE or round(ratio) < 1:
            return [f"Шаг {dt} с не делит интервал ряда '{name}' {cadence} с"]
        return []

    @classmethod
    def validate_topology(cls, scenario) -> List[str]:
        """Привязка устройств к шинам и связность сети"""
        errors = []
        network = scenario.network
        try:
            network.check_connected()
        except NanogridError as e:
            errors.append(str(e))

        gss_buses: Dict[str, str] = {}
        for gss in scenario.gss:
            bus = network.attachment.get(gss.id)
            if bus is None:
                errors.append(f"GSS {gss.id} не привязана к шине")
            else:
                gss_buses[gss.id] = bus
        shared = [bus for bus, count in Counter(gss_buses.values()).items() if count > 1]
        if shared:
            errors.append(f"На одной шине несколько GSS: {sorted(shared)}")

        for lb in scenario.load_banks:
            bus = network.attachment.get(lb.id)
            if bus is None:
                errors.append(f"Нагрузочный банк {lb.id} не привязан к шине")
            elif bus in gss_buses.values():
                errors.append(f"Нагрузочный банк {lb.id} на шине источника {bus}")
            mismatch = lb.spec.schedule_mismatch(lb.schedule.n_devices)
            if mismatch:
                errors.append(f"Расписание {lb.id}: {mismatch}")

        ids = [g.id for g in scenario.gss] + [lb.id for lb in scenario.load_banks]
        duplicates = sorted(i for i, count in Counter(ids).items() if count > 1)
        if duplicates:
            errors.append(f"Повторяющиеся идентификаторы устройств: {duplicates}")
        return errors

    @classmethod
    def validate_scenario(cls, scenario) -> Tuple[bool, List[str]]:
        """Полная проверка сценария"""
        errors = cls.validate_topology(scenario)
        if scenario.end < scenario.start:
            errors.append(f"Конец окна {scenario.end} раньше начала {scenario.start}")
        for name, series in (('irradiance', scenario.irradiance), ('temperature', scenario.temperature)):
            series_errors = cls.validate_series(series, name)
            errors += series_errors
            if not series_errors:
                errors += cls.validate_window(series, name, scenario.start, scenario.end)
                errors += cls.validate_step(scenario.dt, series, name)
        if (scenario.irradiance < 0).any():
            errors.append("Облученность не может быть отрицательной")

        for error in errors:
            logger.error(f"❌ {error}")
        return len(errors) == 0, errors

    @classmethod
    def require_valid(cls, scenario) -> None:
        is_valid, errors = cls.validate_scenario(scenario)
        if not is_valid:
            raise ScenarioError("; ".join(errors))
