import os
from dataclasses import dataclass, field
from dotenv import load_dotenv

load_dotenv()


def _env_float(key: str, default: float) -> float:
    return float(os.getenv(key, default))


def _env_int(key: str, default: int) -> int:
    return int(os.getenv(key, default))


@dataclass
class LoggingConfig:
    """Конфигурация логирования"""
    level: str = os.getenv('NANOGRID_LOG', 'INFO').upper()
    log_dir: str = os.getenv('NANOGRID_LOG_DIR', 'logs')


@dataclass
class SolverConfig:
    """Допуски и лимиты итерационных решателей"""
    flow_tolerance: float = _env_float('NANOGRID_FLOW_TOL', 1e-6)
    flow_max_iter: int = _env_int('NANOGRID_FLOW_MAX_ITER', 50)
    coupling_tolerance: float = _env_float('NANOGRID_COUPLING_TOL', 1e-3)
    coupling_max_iter: int = _env_int('NANOGRID_COUPLING_MAX_ITER', 100)
    step_coupling_max_iter: int = _env_int('NANOGRID_STEP_COUPLING_MAX_ITER', 50)


@dataclass
class SimulationConfig:
    """Параметры моделирования по умолчанию"""
    dt: float = _env_float('NANOGRID_DT', 1.0)
    output_dir: str = os.getenv('NANOGRID_OUTPUT_DIR', 'exports')
    conductor_temp: float | None = (
        float(os.environ['NANOGRID_CONDUCTOR_TEMP']) if os.getenv('NANOGRID_CONDUCTOR_TEMP') else None
    )


@dataclass
class AppConfig:
    """Основная конфигурация приложения"""
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)


def load_config() -> AppConfig:
    """Свежая конфигурация с учетом текущего окружения"""
    return AppConfig(
        logging=LoggingConfig(
            level=os.getenv('NANOGRID_LOG', 'INFO').upper(),
            log_dir=os.getenv('NANOGRID_LOG_DIR', 'logs'),
        ),
        solver=SolverConfig(
            flow_tolerance=_env_float('NANOGRID_FLOW_TOL', 1e-6),
            flow_max_iter=_env_int('NANOGRID_FLOW_MAX_ITER', 50),
            coupling_tolerance=_env_float('NANOGRID_COUPLING_TOL', 1e-3),
            coupling_max_iter=_env_int('NANOGRID_COUPLING_MAX_ITER', 100),
            step_coupling_max_iter=_env_int('NANOGRID_STEP_COUPLING_MAX_ITER', 50),
        ),
        simulation=SimulationConfig(
            dt=_env_float('NANOGRID_DT', 1.0),
            output_dir=os.getenv('NANOGRID_OUTPUT_DIR', 'exports'),
            conductor_temp=(
                float(os.environ['NANOGRID_CONDUCTOR_TEMP']) if os.getenv('NANOGRID_CONDUCTOR_TEMP') else None
            ),
        ),
    )
