"""
Модель MPPT контроллера заряда с трехстадийным зарядом и отключением нагрузки

Контроллер связывает фотогенератор, аккумуляторный банк и выход на сеть
(нагрузочный вывод). Понижающий преобразователь описывается алгебраически:
D = V_o/V_pv, потери проводимости, переключения, мертвого времени, дросселя
и собственное потребление.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Dict, Optional, Tuple

from loguru import logger
from scipy.optimize import brentq, newton

from base.errors import ConvergenceError, OvercurrentError, ParameterError
from models.battery_model import (
    BatteryParams,
    BatteryRegion,
    BatteryState,
    current_for_voltage,
    step_state,
    apply_self_discharge,
    terminal_voltage,
)
from models.pv_model import (
    OperatingEnvironment,
    PvArrayConfig,
    iv_current,
    mpp_voltage_estimate,
    open_circuit_voltage,
)

_ROOT_TOL = 1e-10
_BRACKET_EXPANSIONS = 12
_SECANT_MAX_ITER = 30
_SECANT_RESIDUAL = 1e-8
_DISCHARGE_SEARCH_LIMIT = 60.0


class ChargeStage(str, Enum):
    BULK = 'bulk'
    ABSORPTION = 'absorption'
    FLOAT = 'float'
    NIGHT = 'night'


@dataclass(frozen=True)
class ConverterLossConstants:
    """Параметры потерь понижающего преобразователя"""
    r_ds_on: float = 2.5e-3
    r_l: float = 3e-3
    t_dead: float = 5e-9
    t_s: float = 10e-9
    t_d: float = 10e-9
    f_sw: float = 50e3
    p_auto: float = 5.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ParameterError(f"Константа потерь {name} не может быть отрицательной: {value}")

    @classmethod
    def lossless(cls) -> "ConverterLossConstants":
        return cls(r_ds_on=0.0, r_l=0.0, t_dead=0.0, t_s=0.0, t_d=0.0, f_sw=0.0, p_auto=0.0)


@dataclass(frozen=True)
class ControllerConfig:
    """Уставки и ограничения контроллера заряда"""
    v_abs: float = 28.8
    v_flt: float = 27.0
    absorb_duration: float = 7200.0
    v_desc: float = 22.8
    v_rec: float = 24.8
    i_charge_max: float = 20.0
    i_load_max: float = 20.0
    v_pv_max: float = 90.0
    v_pv_off: float = 100.0
    overcurrent_retry: float = 60.0
    losses: ConverterLossConstants = field(default_factory=ConverterLossConstants)

    def __post_init__(self):
        if not self.v_desc < self.v_rec < self.v_flt <= self.v_abs:
            raise ParameterError(
                f"Требуется V_DESC < V_REC < V_flt <= V_abs, получено "
                f"{self.v_desc} / {self.v_rec} / {self.v_flt} / {self.v_abs}"
            )
        if self.absorb_duration < 0 or self.i_charge_max <= 0 or self.i_load_max <= 0:
            raise ParameterError("Недопустимые ограничения контроллера")


DEFAULT_PRESET = 'table-2.4-vrla-24'

PRESETS: Dict[str, ControllerConfig] = {
    DEFAULT_PRESET: ControllerConfig(),
    'vrla-24': ControllerConfig(),
    'gedae-configured': ControllerConfig(v_abs=29.4, v_flt=26.4),
    'low-reconnect': ControllerConfig(v_rec=24.2),
}


def controller_preset(name: str, **overrides) -> ControllerConfig:
    """Именованный набор уставок с возможной заменой отдельных полей"""
    try:
        base = PRESETS[name]
    except KeyError:
        raise ParameterError(f"Неизвестный набор уставок '{name}', доступны: {sorted(PRESETS)}")
    return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class ControllerState:
    stage: ChargeStage = ChargeStage.NIGHT
    absorb_elapsed: float = 0.0
    load_connected: bool = True
    duty: float = 1.0
    trip_remaining: float = 0.0


@dataclass(frozen=True)
class ConverterLosses:
    conduction: float = 0.0
    switching: float = 0.0
    dead_time: float = 0.0
    inductor: float = 0.0
    self_consumption: float = 0.0

    @property
    def total(self) -> float:
        return self.conduction + self.switching + self.dead_time + self.inductor + self.self_consumption


@dataclass(frozen=True)
class GssOperatingPoint:
    """Рабочая точка системы генерации и накопления на шаге"""
    v_bat: float
    i_bat: float
    v_pv: float
    i_pv: float
    i_out: float
    grid_current: float
    duty: float
    converting: bool
    pv_connected: bool
    setpoint_held: bool
    region: Optional[BatteryRegion]
    losses: ConverterLosses

    @property
    def p_pv(self) -> float:
        return self.v_pv * self.i_pv

    @property
    def p_battery(self) -> float:
        return self.v_bat * self.i_bat


@dataclass(frozen=True)
class GssStepResult:
    controller: ControllerState
    battery: Optional[BatteryState]
    point: GssOperatingPoint


@dataclass(frozen=True)
class PvLimits:
    v_mp: float
    i_mp: float
    v_oc: float


def converter_losses(cfg: ControllerConfig, v_pv: float, i_pv: float, duty: float) -> ConverterLosses:
    k = cfg.losses
    i_l = i_pv / duty
    return ConverterLosses(
        conduction=2.0 * k.r_ds_on * i_l ** 2,
        switching=0.5 * v_pv * i_l * k.f_sw * (k.t_s + k.t_d),
        dead_time=2.0 * v_pv * i_l * k.t_dead * k.f_sw,
        inductor=k.r_l * i_l ** 2,
        self_consumption=k.p_auto,
    )


def buck_output_current(cfg: ControllerConfig, v_pv: float, i_pv: float, v_o: float, duty: float) -> float:
    """
    Выходной ток понижающего преобразователя с учетом потерь

    Args:
        cfg: конфигурация контроллера
        v_pv: напряжение фотогенератора, В
        i_pv: ток фотогенератора, А
        v_o: выходное напряжение (напряжение банка), В
        duty: коэффициент заполнения (0, 1]

    Returns:
        I_o, А (не меньше нуля)
    """
    if not 0.0 < duty <= 1.0:
        raise ParameterError(f"Коэффициент заполнения вне (0, 1]: {duty}")
    if v_o <= 0:
        raise ParameterError(f"Выходное напряжение должно быть положительным: {v_o}")
    losses = converter_losses(cfg, v_pv, i_pv, duty)
    return max(i_pv / duty - losses.total / v_o, 0.0)


def conversion_efficiency(v_pv: float, i_pv: float, v_o: float, i_o: float) -> float:
    """КПД преобразования (V_o·I_o)/(V_pv·I_pv), ограниченный [0, 1]"""
    p_in = v_pv * i_pv
    if p_in <= 0:
        raise ParameterError("КПД не определен при нулевой входной мощности")
    return min(max(v_o * i_o / p_in, 0.0), 1.0)


def step_stage(cfg: ControllerConfig, state: ControllerState, v_bat: float, pv_available: bool,
               dt: float, setpoint_held: bool = True) -> ControllerState:
    """Переход машины стадий заряда за шаг dt"""
    if dt <= 0:
        raise ParameterError(f"Шаг должен быть положительным: {dt}")

    if not pv_available:
        return replace(state, stage=ChargeStage.NIGHT)

    stage = state.stage
    elapsed = state.absorb_elapsed

    if stage == ChargeStage.NIGHT:
        return replace(state, stage=ChargeStage.BULK, absorb_elapsed=0.0)

    if stage == ChargeStage.BULK:
        if v_bat >= cfg.v_abs:
            logger.opt(lazy=True).debug("Переход в абсорбцию при V={:.2f} В", lambda: v_bat)
            return replace(state, stage=ChargeStage.ABSORPTION, absorb_elapsed=0.0)
        return state

    if not setpoint_held:
        return replace(state, stage=ChargeStage.BULK)

    if stage == ChargeStage.ABSORPTION:
        elapsed = min(elapsed + dt, cfg.absorb_duration)
        if elapsed >= cfg.absorb_duration:
            return replace(state, stage=ChargeStage.FLOAT, absorb_elapsed=elapsed)
        return replace(state, absorb_elapsed=elapsed)

    return state


def lvd_hysteresis(cfg: ControllerConfig, state: ControllerState, v_bat: float) -> ControllerState:
    """Отключение нагрузки при V <= V_DESC и подключение при V >= V_REC"""
    if state.trip_remaining > 0:
        return state
    if state.load_connected and v_bat <= cfg.v_desc:
        logger.warning(f"⚠️ Отключение нагрузки по низкому напряжению: {v_bat:.2f} В")
        return replace(state, load_connected=False)
    if not state.load_connected and v_bat >= cfg.v_rec:
        logger.info(f"🔌 Нагрузка подключена снова: {v_bat:.2f} В")
        return replace(state, load_connected=True)
    return state


def check_load_current(cfg: ControllerConfig, grid_current: float) -> None:
    if abs(grid_current) > cfg.i_load_max:
        raise OvercurrentError(
            f"Ток нагрузочного вывода {grid_current:.2f} А превышает {cfg.i_load_max:.2f} А",
            current=grid_current,
            limit=cfg.i_load_max,
        )


def trip_load(cfg: ControllerConfig, state: ControllerState) -> ControllerState:
    """Размыкание нагрузочного вывода по перегрузке на время overcurrent_retry"""
    return replace(state, load_connected=False, trip_remaining=cfg.overcurrent_retry)


@lru_cache(maxsize=4096)
def pv_limits(array: PvArrayConfig, env: OperatingEnvironment) -> PvLimits:
    """Оценка МРР и напряжение холостого хода для условий шага"""
    if env.irradiance <= 0:
        return PvLimits(0.0, 0.0, 0.0)
    v_oc = open_circuit_voltage(array, env)
    v_mp = min(mpp_voltage_estimate(array, env), v_oc)
    if v_mp <= 0:
        return PvLimits(0.0, 0.0, v_oc)
    return PvLimits(v_mp=v_mp, i_mp=iv_current(array, v_mp, env), v_oc=v_oc)


def _output_at(cfg: ControllerConfig, array: PvArrayConfig, env: OperatingEnvironment, v_pv: float, v_o: float,
               i_pv: Optional[float] = None):
    if i_pv is None:
        i_pv = iv_current(array, v_pv, env)
    duty = v_o / v_pv
    if i_pv <= 0 or duty > 1.0:
        return 0.0, i_pv, duty
    return buck_output_current(cfg, v_pv, i_pv, v_o, duty), i_pv, duty


def _curtail(cfg: ControllerConfig, array: PvArrayConfig, env: OperatingEnvironment,
             limits: PvLimits, v_o: float, i_out_target: float) -> float:
    """Напряжение фотогенератора правее МРР, дающее заданный выходной ток"""
    def residual(v_pv):
        return _output_at(cfg, array, env, v_pv, v_o)[0] - i_out_target
    if residual(limits.v_mp) <= 0:
        return limits.v_mp
    return brentq(residual, limits.v_mp, limits.v_oc, xtol=1e-6)


def _battery_current(params: BatteryParams, bstate: BatteryState, demanded) -> float:
    """
    Ток банка, согласованный с его напряжением: i = demanded(V(i))

    demanded не возрастает с напряжением, поэтому невязка монотонна. Сначала
    пробуется метод секущих от i = demanded(V(0)), при неудаче корень ищется
    в расширяемом интервале.
    """
    def residual(i):
        return i - demanded(terminal_voltage(params, bstate, i)[0])

    guess = demanded(terminal_voltage(params, bstate, 0.0)[0])
    second = demanded(terminal_voltage(params, bstate, guess)[0])
    if abs(second - guess) <= _ROOT_TOL:
        return second
    try:
        root = newton(residual, guess, x1=second, tol=_ROOT_TOL, maxiter=_SECANT_MAX_ITER)
        if abs(residual(root)) <= _SECANT_RESIDUAL:
            return float(root)
    except (RuntimeError, OverflowError, ValueError):
        pass

    width = 1.0
    low, high = guess - width, guess + width
    for _ in range(_BRACKET_EXPANSIONS):
        if residual(low) <= 0 <= residual(high):
            return brentq(residual, low, high, xtol=_ROOT_TOL)
        width *= 2.0
        low, high = guess - width, guess + width
    raise ConvergenceError(
        "Не удалось согласовать ток и напряжение банка",
        iterations=_BRACKET_EXPANSIONS,
    )


@lru_cache(maxsize=1024)
def _regulation_target(params: BatteryParams, bstate: BatteryState, setpoint: float,
                       i_charge_max: float) -> Tuple[float, float]:
    """(ток, напряжение) банка при удержании уставки"""
    i_required = current_for_voltage(params, bstate, setpoint, -_DISCHARGE_SEARCH_LIMIT, i_charge_max)
    return i_required, terminal_voltage(params, bstate, i_required)[0]


def _pv_connected(cfg: ControllerConfig, limits: PvLimits) -> bool:
    return limits.v_mp <= cfg.v_pv_max and limits.v_oc <= cfg.v_pv_off


def _converter_idle(cfg: ControllerConfig, state: ControllerState, limits: PvLimits) -> bool:
    return state.stage == ChargeStage.NIGHT or limits.i_mp <= 0 or not _pv_connected(cfg, limits)


def _idle_battery(cfg, params, bstate, grid_current) -> Tuple[float, float, BatteryRegion]:
    p_auto = cfg.losses.p_auto
    i_bat = _battery_current(params, bstate, lambda v: -grid_current - p_auto / max(v, 1e-3))
    v_bat, region = terminal_voltage(params, bstate, i_bat)
    return i_bat, v_bat, region


def _idle_point(cfg, params, bstate, grid_current, limits: PvLimits, pv_connected: bool) -> GssOperatingPoint:
    """Преобразователь не работает: банк питает сеть и собственное потребление"""
    v_pv = limits.v_oc if pv_connected else 0.0
    if params is None:
        return GssOperatingPoint(
            v_bat=0.0, i_bat=0.0, v_pv=v_pv, i_pv=0.0, i_out=0.0, grid_current=grid_current,
            duty=1.0, converting=False, pv_connected=pv_connected, setpoint_held=True, region=None,
            losses=ConverterLosses(),
        )

    i_bat, v_bat, region = _idle_battery(cfg, params, bstate, grid_current)
    return GssOperatingPoint(
        v_bat=v_bat, i_bat=i_bat, v_pv=v_pv, i_pv=0.0, i_out=0.0, grid_current=grid_current,
        duty=1.0, converting=False, pv_connected=pv_connected, setpoint_held=True, region=region,
        losses=ConverterLosses(self_consumption=cfg.losses.p_auto),
    )


def _converting_point(cfg, array, env, params, bstate, grid_current, v_pv, v_o,
                      setpoint_held=True, i_pv=None) -> GssOperatingPoint:
    i_out, i_pv, duty = _output_at(cfg, array, env, v_pv, v_o, i_pv)
    losses = converter_losses(cfg, v_pv, i_pv, duty) if i_pv > 0 and duty <= 1.0 else ConverterLosses()
    if params is None:
        return GssOperatingPoint(
            v_bat=v_o, i_bat=0.0, v_pv=v_pv, i_pv=i_pv, i_out=i_out, grid_current=i_out,
            duty=min(duty, 1.0), converting=i_out > 0, pv_connected=True, setpoint_held=setpoint_held,
            region=None, losses=losses,
        )
    i_bat = i_out - grid_current
    v_bat, region = terminal_voltage(params, bstate, i_bat)
    return GssOperatingPoint(
        v_bat=v_bat, i_bat=i_bat, v_pv=v_pv, i_pv=i_pv, i_out=i_out, grid_current=grid_current,
        duty=min(duty, 1.0), converting=i_out > 0, pv_connected=True, setpoint_held=setpoint_held,
        region=region, losses=losses,
    )


def _bulk_plan(cfg, array, env, params, bstate, grid_current,
               limits: PvLimits) -> Optional[Tuple[float, float, bool]]:
    """
    Заряд от МРР: (v_bat, i_bat, ток ограничен)

    None, если на выходе преобразователя нет тока.
    """
    i_bat = _battery_current(
        params, bstate,
        lambda v: _output_at(cfg, array, env, limits.v_mp, v, limits.i_mp)[0] - grid_current,
    )
    v_bat, _ = terminal_voltage(params, bstate, i_bat)
    if _output_at(cfg, array, env, limits.v_mp, v_bat, limits.i_mp)[0] <= 0:
        return None

    if i_bat > cfg.i_charge_max:
        if cfg.i_charge_max + grid_current <= 0:
            return None
        v_bat, _ = terminal_voltage(params, bstate, cfg.i_charge_max)
        return v_bat, cfg.i_charge_max, True
    return v_bat, i_bat, False


def _bulk_point(cfg, array, env, params, bstate, grid_current, limits: PvLimits,
                node_voltage: Optional[float], setpoint_held=True) -> GssOperatingPoint:
    if params is None:
        if not node_voltage or node_voltage <= 0 or limits.v_mp <= node_voltage:
            return _idle_point(cfg, None, None, grid_current, limits, True)
        return _converting_point(cfg, array, env, None, None, grid_current, limits.v_mp, node_voltage,
                                 setpoint_held, i_pv=limits.i_mp)

    plan = _bulk_plan(cfg, array, env, params, bstate, grid_current, limits)
    if plan is None:
        return _idle_point(cfg, params, bstate, grid_current, limits, True)

    v_bat, i_bat, clamped = plan
    if clamped:
        v_pv = _curtail(cfg, array, env, limits, v_bat, i_bat + grid_current)
        return _converting_point(cfg, array, env, params, bstate, grid_current, v_pv, v_bat, setpoint_held)
    return _converting_point(cfg, array, env, params, bstate, grid_current, limits.v_mp, v_bat,
                             setpoint_held, i_pv=limits.i_mp)


class _Regulation(str, Enum):
    IDLE = 'idle'
    HELD = 'held'
    LOST = 'lost'


def _regulation_plan(cfg, array, env, params, bstate, grid_current, limits: PvLimits,
                     setpoint: float) -> Tuple[_Regulation, float, float]:
    i_required, v_bat = _regulation_target(params, bstate, setpoint, cfg.i_charge_max)
    out_required = i_required + grid_current
    if out_required <= 0:
        return _Regulation.IDLE, v_bat, out_required
    available = _output_at(cfg, array, env, limits.v_mp, v_bat, limits.i_mp)[0]
    if out_required > available:
        return _Regulation.LOST, v_bat, out_required
    return _Regulation.HELD, v_bat, out_required


def _regulated_point(cfg, array, env, params, bstate, grid_current, limits: PvLimits,
                     setpoint: float) -> GssOperatingPoint:
    mode, v_bat, out_required = _regulation_plan(cfg, array, env, params, bstate, grid_current, limits, setpoint)
    if mode == _Regulation.IDLE:
        return _idle_point(cfg, params, bstate, grid_current, limits, True)
    if mode == _Regulation.LOST:
        return _bulk_point(cfg, array, env, params, bstate, grid_current, limits, None, setpoint_held=False)

    v_pv = _curtail(cfg, array, env, limits, v_bat, out_required)
    return _converting_point(cfg, array, env, params, bstate, grid_current, v_pv, v_bat)


def _setpoint(cfg: ControllerConfig, stage: ChargeStage) -> float:
    return cfg.v_abs if stage == ChargeStage.ABSORPTION else cfg.v_flt


def evaluate_gss(
    cfg: ControllerConfig,
    state: ControllerState,
    battery_params: Optional[BatteryParams],
    battery_state: Optional[BatteryState],
    pv_array: PvArrayConfig,
    env: OperatingEnvironment,
    grid_current: float,
    node_voltage: Optional[float] = None,
) -> GssOperatingPoint:
    """
    Рабочая точка системы генерации и накопления без продвижения состояний

    Args:
        cfg: конфигурация контроллера
        state: состояние контроллера
        battery_params: параметры банка или None при отсутствии банка
        battery_state: состояние банка или None
        pv_array: фотогенератор
        env: условия работы
        grid_current: ток из нагрузочного вывода в сеть, А (отрицательный при обратном потоке)
        node_voltage: напряжение узла сети, используется только без банка

    Returns:
        GssOperatingPoint
    """
    limits = pv_limits(pv_array, env)
    pv_connected = _pv_connected(cfg, limits)
    if not pv_connected:
        logger.warning(f"⚠️ Напряжение фотогенератора {limits.v_mp:.1f} В выше допустимого, вход отключен")

    if _converter_idle(cfg, state, limits):
        return _idle_point(cfg, battery_params, battery_state, grid_current, limits, pv_connected)

    if battery_params is None or state.stage == ChargeStage.BULK:
        return _bulk_point(cfg, pv_array, env, battery_params, battery_state, grid_current, limits, node_voltage)

    return _regulated_point(cfg, pv_array, env, battery_params, battery_state, grid_current, limits,
                            _setpoint(cfg, state.stage))


def gss_terminal_voltage(
    cfg: ControllerConfig,
    state: ControllerState,
    battery_params: Optional[BatteryParams],
    battery_state: Optional[BatteryState],
    pv_array: PvArrayConfig,
    env: OperatingEnvironment,
    grid_current: float,
    node_voltage: Optional[float] = None,
) -> float:
    """
    Напряжение на выводе системы при заданном токе в сеть

    Равно evaluate_gss(...).v_bat, но рабочая точка фотогенератора при
    ограничении тока и удержании уставки не ищется.
    """
    if battery_params is None:
        return evaluate_gss(cfg, state, None, None, pv_array, env, grid_current, node_voltage).v_bat

    limits = pv_limits(pv_array, env)
    if _converter_idle(cfg, state, limits):
        return _idle_battery(cfg, battery_params, battery_state, grid_current)[1]

    if state.stage != ChargeStage.BULK:
        mode, v_bat, _ = _regulation_plan(cfg, pv_array, env, battery_params, battery_state, grid_current,
                                          limits, _setpoint(cfg, state.stage))
        if mode == _Regulation.HELD:
            return v_bat
        if mode == _Regulation.IDLE:
            return _idle_battery(cfg, battery_params, battery_state, grid_current)[1]

    plan = _bulk_plan(cfg, pv_array, env, battery_params, battery_state, grid_current, limits)
    if plan is None:
        return _idle_battery(cfg, battery_params, battery_state, grid_current)[1]
    return plan[0]


def advance_controller(cfg: ControllerConfig, state: ControllerState, point: GssOperatingPoint,
                       pv_available: bool, dt: float) -> ControllerState:
    """Продвижение таймеров, машины стадий и гистерезиса отключения нагрузки"""
    state = replace(state, duty=point.duty if point.duty > 0 else 1.0)
    if state.trip_remaining > 0:
        state = replace(state, trip_remaining=max(state.trip_remaining - dt, 0.0))
    state = step_stage(cfg, state, point.v_bat, pv_available, dt, setpoint_held=point.setpoint_held)
    if point.region is not None:
        state = lvd_hysteresis(cfg, state, point.v_bat)
    return state


def gss_step(
    cfg: ControllerConfig,
    state: ControllerState,
    battery_params: Optional[BatteryParams],
    battery_state: Optional[BatteryState],
    pv_array: PvArrayConfig,
    env: OperatingEnvironment,
    grid_terminal_current: float,
    dt: float,
    node_voltage: Optional[float] = None,
) -> GssStepResult:
    """Шаг системы генерации и накопления: рабочая точка, затем продвижение банка и контроллера"""
    if state.load_connected:
        check_load_current(cfg, grid_terminal_current)
    else:
        grid_terminal_current = 0.0

    point = evaluate_gss(cfg, state, battery_params, battery_state, pv_array, env,
                         grid_terminal_current, node_voltage)

    new_battery = None
    if battery_params is not None:
        new_battery = step_state(battery_params, battery_state, point.i_bat, battery_state.temp, dt)
        new_battery = apply_self_discharge(battery_params, new_battery, dt)

    pv_available = pv_limits(pv_array, env).i_mp > 0
    new_state = advance_controller(cfg, state, point, pv_available, dt)
    return GssStepResult(controller=new_state, battery=new_battery, point=point)
