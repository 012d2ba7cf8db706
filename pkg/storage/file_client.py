import os
from pathlib import Path
from typing import Optional

import pandas as pd
from loguru import logger

from base.errors import TimeSeriesError
from utils.helpers import validate_dataframe


class FileClient:
    """Клиент для чтения и записи таблиц CSV в каталоге результатов"""

    def __init__(self, base_dir: Optional[str] = None):
        try:
            self.base_dir = Path(base_dir or os.getenv('NANOGRID_OUTPUT_DIR', 'exports'))
            self.base_dir.mkdir(parents=True, exist_ok=True)
            logger.debug(f"Каталог результатов: {self.base_dir}")
        except OSError as e:
            logger.error(f"❌ Не удалось создать каталог результатов {base_dir}: {e}")
            raise

    def path(self, name: str) -> Path:
        return self.base_dir / name

    def read_table(self, name: str, index_col: Optional[str] = None) -> pd.DataFrame:
        """Чтение таблицы CSV"""
        try:
            logger.info(f"📖 Чтение таблицы '{name}'...")
            df = pd.read_csv(self.path(name), index_col=index_col)
            logger.info(f"✅ Загружено {len(df)} записей из '{name}'")
            return df
        except Exception as e:
            logger.error(f"❌ Ошибка при чтении '{name}': {e}")
            raise

    def save_table(self, df: pd.DataFrame, name: str, index: bool = True) -> Path:
        """Сохранение DataFrame в CSV"""
        target = self.path(name)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            logger.info(f"💾 Сохранение {len(df)} записей в '{name}'...")
            df.to_csv(target, index=index, float_format='%.10g', lineterminator='\n')
            logger.debug(f"Сохранено в {target}")
            return target
        except Exception as e:
            logger.error(f"❌ Ошибка при сохранении '{name}': {e}")
            raise

    def save_text(self, text: str, name: str) -> Path:
        target = self.path(name)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text, encoding='utf-8')
            logger.info(f"💾 Записан файл '{name}'")
            return target
        except Exception as e:
            logger.error(f"❌ Ошибка при записи '{name}': {e}")
            raise


def read_time_series(path: str) -> pd.Series:
    """
    Чтение временного ряда CSV с заголовком "timestamp,value"

    Метки времени ISO-8601 (UTC), строго возрастающие.

    Raises:
        TimeSeriesError: файл отсутствует, неверный заголовок, значение или порядок строк
    """
    path = str(path)
    if not os.path.exists(path):
        raise TimeSeriesError("файл не найден", path=path)
    try:
        df = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except Exception as e:
        raise TimeSeriesError(f"не удалось прочитать CSV: {e}", path=path)

    if len(df.columns) != 2 or not validate_dataframe(df, ['timestamp', 'value']):
        raise TimeSeriesError(f"ожидался заголовок 'timestamp,value', получено {list(df.columns)}", path=path, row=1)

    # строка 1 - заголовок
    timestamps = pd.to_datetime(df['timestamp'], utc=True, errors='coerce', format='ISO8601')
    bad = timestamps.isna()
    if bad.any():
        position = int(bad.to_numpy().argmax())
        raise TimeSeriesError(f"неверная метка времени '{df['timestamp'].iloc[position]}'", path=path,
                              row=position + 2)

    values = pd.to_numeric(df['value'], errors='coerce')
    bad = values.isna()
    if bad.any():
        position = int(bad.to_numpy().argmax())
        raise TimeSeriesError(f"неверное значение '{df['value'].iloc[position]}'", path=path, row=position + 2)

    deltas = timestamps.diff().iloc[1:]
    duplicates = deltas == pd.Timedelta(0)
    if duplicates.any():
        position = int(duplicates.to_numpy().argmax()) + 1
        raise TimeSeriesError(f"повторяющаяся метка времени {timestamps.iloc[position]}", path=path,
                              row=position + 2)
    backwards = deltas < pd.Timedelta(0)
    if backwards.any():
        position = int(backwards.to_numpy().argmax()) + 1
        raise TimeSeriesError(f"метки времени идут не по возрастанию ({timestamps.iloc[position]})", path=path,
                              row=position + 2)

    series = pd.Series(values.to_numpy(dtype=float), index=pd.DatetimeIndex(timestamps), name=Path(path).stem)
    series.index.name = 'timestamp'
    logger.debug(f"📊 Ряд {path}: {len(series)} отсчетов")
    return series


def write_time_series(series: pd.Series, path: str) -> None:
    frame = pd.DataFrame({
        'timestamp': series.index.strftime('%Y-%m-%dT%H:%M:%SZ'),
        'value': series.to_numpy(),
    })
    frame.to_csv(path, index=False, lineterminator='\n')
