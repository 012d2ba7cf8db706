"""
Вспомогательные функции: каталоги, длительности, временные ряды
"""

import os
from typing import Iterable, List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from base.errors import TimeSeriesError


def create_directories(directories: Iterable[str] = ('logs', 'exports')):
    """Создание необходимых директорий"""
    for directory in directories:
        if not os.path.exists(directory):
            os.makedirs(directory)
            logger.info(f"Создана директория: {directory}")


def format_duration(start_time: float, end_time: float) -> str:
    """Форматирование длительности операции"""
    duration = end_time - start_time

    if duration < 60:
        return f"{duration:.1f} сек"
    elif duration < 3600:
        minutes = int(duration // 60)
        seconds = duration % 60
        return f"{minutes} мин {seconds:.1f} сек"
    else:
        hours = int(duration // 3600)
        minutes = int((duration % 3600) // 60)
        return f"{hours} ч {minutes} мин"


def validate_dataframe(df: pd.DataFrame, required_columns: List[str]) -> bool:
    """Валидация DataFrame на наличие обязательных колонок"""
    missing_columns = [col for col in required_columns if col not in df.columns]

    if missing_columns:
        logger.error(f"Отсутствуют обязательные колонки: {missing_columns}")
        return False

    logger.debug(f"DataFrame валидация пройдена. Колонки: {list(df.columns)}")
    return True


def series_cadence(series: pd.Series) -> Optional[float]:
    """Шаг временного ряда в секундах (минимальный интервал); None для одной точки"""
    if len(series) < 2:
        return None
    deltas = np.diff(series.index.asi8) / 1e9
    return float(deltas.min())


def zero_order_hold(series: pd.Series, times: pd.DatetimeIndex) -> np.ndarray:
    """
    Значения ряда в заданные моменты с удержанием последнего отсчета

    Args:
        series: ряд с возрастающим индексом меток времени
        times: моменты выборки

    Returns:
        Массив значений той же длины, что times

    Raises:
        TimeSeriesError: момент раньше первого отсчета
    """
    if series.empty:
        raise TimeSeriesError("Пустой временной ряд")
    positions = series.index.searchsorted(times, side='right') - 1
    if len(positions) and positions.min() < 0:
        first = times[int(np.argmin(positions))]
        raise TimeSeriesError(f"Момент {first} раньше начала ряда {series.index[0]}")
    return series.to_numpy(dtype=float)[positions]


def time_grid(start: pd.Timestamp, end: pd.Timestamp, dt: float) -> pd.DatetimeIndex:
    """Сетка шагов на полуинтервале [start, end)"""
    if end <= start:
        return pd.DatetimeIndex([], tz=start.tz)
    n_steps = int(np.ceil((end - start).total_seconds() / dt - 1e-9))
    offsets = pd.to_timedelta(np.arange(n_steps) * dt, unit='s')
    return pd.DatetimeIndex(start + offsets)
