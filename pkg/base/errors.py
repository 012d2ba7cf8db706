"""
Иерархия исключений симулятора наногрида
"""

from typing import Optional, Sequence


class NanogridError(Exception):
    """Базовое исключение пакета"""


class ParameterError(NanogridError, ValueError):
    """Недопустимые параметры оборудования или конфигурации"""


class ConvergenceError(NanogridError):
    """Итерационный процесс не сошелся"""

    def __init__(self, message: str, iterations: int = 0, mismatch: float = float('nan')):
        super().__init__(message)
        self.iterations = iterations
        self.mismatch = mismatch


class SingularJacobianError(ConvergenceError):
    """Вырожденная матрица Якоби (обычно изолированная шина нагрузки)"""


class NetworkTopologyError(NanogridError):
    """Ошибка топологии сети: несвязный граф, петли, неизвестные шины"""

    def __init__(self, message: str, buses: Sequence[str] = ()):
        super().__init__(message)
        self.buses = list(buses)


class ScheduleParseError(NanogridError, ValueError):
    """Ошибка разбора суточного расписания нагрузок"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[int] = None):
        location = []
        if row is not None:
            location.append(f"строка {row}")
        if column is not None:
            location.append(f"столбец {column}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.row = row
        self.column = column


class TimeSeriesError(NanogridError, ValueError):
    """Ошибка чтения временного ряда"""

    def __init__(self, message: str, path: Optional[str] = None, row: Optional[int] = None):
        prefix = f"{path}: " if path else ""
        suffix = f" (строка {row})" if row is not None else ""
        super().__init__(f"{prefix}{message}{suffix}")
        self.path = path
        self.row = row


class ScenarioError(NanogridError, ValueError):
    """Ошибка в файле сценария или описании сети"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        prefix = f"{path}" if path else ""
        if line is not None:
            prefix = f"{prefix}:{line}"
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.line = line


class OvercurrentError(NanogridError):
    """Ток нагрузочного вывода контроллера превысил допустимый"""

    def __init__(self, message: str, current: float, limit: float):
        super().__init__(message)
        self.current = current
        self.limit = limit


class SimulationStepError(NanogridError):
    """Сбой шага моделирования с привязкой к моменту времени"""

    def __init__(self, message: str, timestamp=None):
        super().__init__(f"[{timestamp}] {message}" if timestamp is not None else message)
        self.timestamp = timestamp
