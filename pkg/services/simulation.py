"""
Моделирование наногрида во времени с фиксированным шагом

Шаг выполняется в два этапа:
1. логика устройств (машины стадий контроллеров, рабочие точки фотогенераторов,
   банки как источники напряжения) по токам предыдущего шага;
2. расчет резистивной сети: нагрузки как сопротивления по состоянию реле,
   выводы GSS как источники с напряжением банка, согласованные с токами сети.
Затем продвигаются состояния банков и таймеры контроллеров.
"""

import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from base.errors import (
    NanogridError,
    ParameterError,
    SimulationStepError,
)
from config.settings import SolverConfig
from models.battery_model import BatteryParams, BatteryState
from models.charge_controller import (
    ChargeStage,
    ControllerConfig,
    ControllerState,
    GssOperatingPoint,
    evaluate_gss,
    gss_step,
    gss_terminal_voltage,
    trip_load,
)
from models.pv_model import OperatingEnvironment, PvArrayConfig
from services.energy_ledger import (
    BATTERY_SUFFIX,
    BRANCH_LOSS_COLUMN,
    CONTROLLER_LOSS_SUFFIX,
    LOAD_SUFFIX,
    PV_SUFFIX,
    EnergyLedger,
    daily_ledger,
    energy_ledger,
)
from services.network_powerflow import (
    BusLoad,
    FlowSolution,
    Network,
    constant_power,
    constant_resistance,
    solve_source_coupling,
)
from services.system_config import LoadBankSpec, LoadSchedule, bank_equivalent_resistance
from utils.helpers import format_duration, time_grid, zero_order_hold
from utils.validators import ScenarioValidator

GSS_COLUMNS = ('v_bat', 'i_bat', 'v_pv', 'i_pv', 'p_pv', 'p_bat', 'i_grid', 'p_loss', 'duty', 'soc',
               'stage', 'load_connected')
LB_COLUMNS = ('v', 'i', 'p_load')
BRANCH_PREFIX = 'i_branch.'
STEP_COLUMNS = (BRANCH_LOSS_COLUMN, 'coupling_iterations', 'converged')


@dataclass(frozen=True)
class GssConfig:
    """Система генерации и накопления: фотогенератор, банк (может отсутствовать), контроллер"""
    id: str
    pv_array: PvArrayConfig
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    battery: Optional[BatteryParams] = None
    initial_soc: float = 0.8
    initial_loe: Optional[float] = None
    initial_soh: float = 1.0

    def initial_battery(self, temp: float) -> Optional[BatteryState]:
        if self.battery is None:
            return None
        return BatteryState.initial(self.battery, self.initial_soc, self.initial_loe, self.initial_soh, temp)


@dataclass(frozen=True)
class LoadBankConfig:
    id: str
    spec: LoadBankSpec
    schedule: LoadSchedule

    def mask_at(self, minute: int) -> np.ndarray:
        """Состояние реле устройств банка в минуту суток"""
        return self.spec.select(self.schedule.mask_at(minute))


@dataclass(frozen=True, eq=False)
class Scenario:
    """Сценарий: сеть, устройства, входные ряды (UTC) и окно [start, end)"""
    network: Network
    gss: Tuple[GssConfig, ...]
    load_banks: Tuple[LoadBankConfig, ...]
    irradiance: pd.Series
    temperature: pd.Series
    start: pd.Timestamp
    end: pd.Timestamp
    dt: float = 1.0
    conductor_temp: Optional[float] = 30.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    name: str = 'scenario'

    @cached_property
    def ordered_gss(self) -> List[GssConfig]:
        return sorted(self.gss, key=lambda g: g.id)

    @cached_property
    def ordered_load_banks(self) -> List[LoadBankConfig]:
        return sorted(self.load_banks, key=lambda lb: lb.id)

    @property
    def rated_power(self) -> Dict[str, float]:
        return {g.id: g.pv_array.rated_power for g in self.gss}

    def with_window(self, start: Optional[pd.Timestamp] = None, end: Optional[pd.Timestamp] = None) -> "Scenario":
        return replace(self, start=start if start is not None else self.start,
                       end=end if end is not None else self.end)

    def with_dt(self, dt: float) -> "Scenario":
        return replace(self, dt=dt)


@dataclass(frozen=True)
class GssWorld:
    controller: ControllerState
    battery: Optional[BatteryState]
    grid_current: float = 0.0
    node_voltage: float = 0.0


@dataclass(frozen=True)
class SimEvent:
    time: pd.Timestamp
    device: str
    kind: str
    detail: str = ''


@dataclass(frozen=True)
class StepRecord:
    """Все наблюдаемые величины шага (до продвижения состояний)"""
    time: pd.Timestamp
    points: Dict[str, GssOperatingPoint]
    stages: Dict[str, ChargeStage]
    load_connected: Dict[str, bool]
    soc: Dict[str, float]
    bus_voltages: Dict[str, float]
    lb_resistance: Dict[str, Optional[float]]
    branch_currents: Dict[str, float]
    branch_loss: float
    coupling_iterations: int
    converged: bool
    events: Tuple[SimEvent, ...] = ()

    def lb_values(self, lb_id: str, bus: str) -> Tuple[float, float, float]:
        voltage = self.bus_voltages.get(bus, 0.0)
        resistance = self.lb_resistance.get(lb_id)
        if resistance is None:
            return voltage, 0.0, 0.0
        return voltage, voltage / resistance, voltage ** 2 / resistance


@dataclass(frozen=True)
class WorldState:
    gss: Mapping[str, GssWorld]
    time: Optional[pd.Timestamp] = None
    record: Optional[StepRecord] = None


@dataclass
class SimResult:
    traces: pd.DataFrame
    events: pd.DataFrame
    ledger: Optional[EnergyLedger]
    daily: pd.DataFrame
    final_state: WorldState
    non_converged_steps: int = 0

    def voltage_extremes(self) -> pd.DataFrame:
        """Минимальные и максимальные напряжения банков и нагрузок"""
        columns = [c for c in self.traces.columns if c.endswith('.v_bat') or c.endswith('.v')]
        if self.traces.empty or not columns:
            return pd.DataFrame(columns=['min', 'max'])
        frame = self.traces[columns].astype(float)
        return pd.DataFrame({'min': frame.min(), 'max': frame.max()})

    def stage_timeline(self) -> pd.DataFrame:
        return self.events[self.events['kind'] == 'stage_change'] if not self.events.empty else self.events


def initial_world(scenario: Scenario) -> WorldState:
    temp = float(scenario.temperature.iloc[0]) if len(scenario.temperature) else 25.0
    return WorldState(gss={
        g.id: GssWorld(controller=ControllerState(), battery=g.initial_battery(temp))
        for g in scenario.ordered_gss
    })


def minute_of_day(t: pd.Timestamp) -> int:
    return t.hour * 60 + t.minute


def _load_map(scenario: Scenario, t: pd.Timestamp) -> Tuple[Dict[str, BusLoad], Dict[str, Optional[float]]]:
    minute = minute_of_day(t)
    loads: Dict[str, BusLoad] = {}
    resistances: Dict[str, Optional[float]] = {}
    for lb in scenario.ordered_load_banks:
        resistance = bank_equivalent_resistance(lb.spec, lb.mask_at(minute))
        resistances[lb.id] = resistance
        if resistance is not None:
            bus = scenario.network.bus_of(lb.id)
            loads[bus] = loads.get(bus, BusLoad()) + constant_resistance(resistance)
    return loads, resistances


def _deenergized(network: Network) -> FlowSolution:
    return FlowSolution(
        voltages={bus: 0.0 for bus in network.bus_ids},
        branch_currents={branch.key: 0.0 for branch in network.branches},
        bus_injections={bus: 0.0 for bus in network.bus_ids},
        iterations=0,
        converged=True,
    )


def step(scenario: Scenario, world: WorldState, t: pd.Timestamp,
         irradiance: Optional[float] = None, ambient_temp: Optional[float] = None) -> WorldState:
    """
    Один шаг моделирования в момент t

    Args:
        scenario: сценарий
        world: состояние мира в начале шага
        t: момент начала шага
        irradiance: облученность, Вт/м² (по умолчанию из ряда сценария)
        ambient_temp: температура воздуха, °C (по умолчанию из ряда сценария)

    Returns:
        Новое состояние мира с записью наблюдаемых величин шага
    """
    if not scenario.start <= t < scenario.end:
        raise ParameterError(f"Момент {t} вне окна [{scenario.start}, {scenario.end})")
    if irradiance is None:
        irradiance = float(zero_order_hold(scenario.irradiance, pd.DatetimeIndex([t]))[0])
    if ambient_temp is None:
        ambient_temp = float(zero_order_hold(scenario.temperature, pd.DatetimeIndex([t]))[0])

    network = scenario.network
    env = OperatingEnvironment(irradiance=max(irradiance, 0.0), ambient_temp=ambient_temp)
    ordered = scenario.ordered_gss
    states = {g.id: world.gss[g.id].controller for g in ordered}
    batteries = {
        g.id: replace(world.gss[g.id].battery, temp=ambient_temp) if g.battery is not None else None
        for g in ordered
    }
    events: List[SimEvent] = []

    loads, lb_resistance = _load_map(scenario, t)
    conductor_temp = scenario.conductor_temp if scenario.conductor_temp is not None else ambient_temp

    # без банка GSS отдает мощность в сеть как отрицательная нагрузка при напряжении узла прошлого шага
    for g in ordered:
        if g.battery is not None or not states[g.id].load_connected:
            continue
        v_node = world.gss[g.id].node_voltage
        point = evaluate_gss(g.controller, states[g.id], None, None, g.pv_array, env, 0.0, node_voltage=v_node)
        if point.converting and point.i_out > 0 and v_node > 0:
            bus = network.bus_of(g.id)
            loads[bus] = loads.get(bus, BusLoad()) + constant_power(-point.i_out * v_node)

    sources = [g for g in ordered if g.battery is not None and states[g.id].load_connected]
    solution, grid_currents, iterations, converged = _solve_network(
        scenario, sources, states, batteries, env, loads, conductor_temp, world, t, events,
    )

    energized = any(v > 0 for v in solution.voltages.values())
    points: Dict[str, GssOperatingPoint] = {}
    new_gss: Dict[str, GssWorld] = {}
    for g in ordered:
        state = states[g.id]
        bus = network.bus_of(g.id)
        grid_current = grid_currents.get(g.id, 0.0)
        v_node = world.gss[g.id].node_voltage if energized and state.load_connected else 0.0
        try:
            result = gss_step(
                g.controller, state, g.battery, batteries[g.id], g.pv_array, env,
                grid_current, scenario.dt, node_voltage=v_node,
            )
        except NanogridError as e:
            raise SimulationStepError(f"{g.id}: {e}", t) from e
        points[g.id] = result.point

        if result.controller.load_connected != state.load_connected:
            kind = 'lvd_reconnect' if result.controller.load_connected else 'lvd_disconnect'
            events.append(SimEvent(t, g.id, kind, f"V={result.point.v_bat:.3f}"))
        if result.controller.stage != state.stage:
            events.append(SimEvent(t, g.id, 'stage_change', f"{state.stage.value}->{result.controller.stage.value}"))

        new_gss[g.id] = GssWorld(
            controller=result.controller,
            battery=result.battery,
            grid_current=grid_current,
            node_voltage=solution.voltages.get(bus, 0.0),
        )

    record = StepRecord(
        time=t,
        points=points,
        stages={g.id: states[g.id].stage for g in ordered},
        load_connected={g.id: states[g.id].load_connected for g in ordered},
        soc={g.id: batteries[g.id].soc if batteries[g.id] is not None else float('nan') for g in ordered},
        bus_voltages=solution.voltages,
        lb_resistance=lb_resistance,
        branch_currents=solution.branch_currents,
        branch_loss=solution.branch_losses(network, conductor_temp) if sources else 0.0,
        coupling_iterations=iterations,
        converged=converged,
        events=tuple(events),
    )
    return WorldState(gss=new_gss, time=t, record=record)


def _solve_network(scenario, sources, states, batteries, env, loads, conductor_temp, world, t, events):
    """Этап сети: согласование источников, при перегрузке вывод размыкается и расчет повторяется"""
    network = scenario.network
    solver = scenario.solver
    warm_voltages = world.record.bus_voltages if world.record is not None else None
    while sources:
        ids = [g.id for g in sources]

        def voltage_of_current(currents: np.ndarray) -> np.ndarray:
            return np.array([
                gss_terminal_voltage(g.controller, states[g.id], g.battery, batteries[g.id], g.pv_array, env,
                                     float(current))
                for g, current in zip(sources, currents)
            ])

        initial = np.array([world.gss[gss_id].grid_current for gss_id in ids])
        try:
            coupling = solve_source_coupling(
                network,
                [network.bus_of(gss_id) for gss_id in ids],
                voltage_of_current,
                loads,
                conductor_temp,
                initial,
                tolerance=solver.coupling_tolerance,
                max_iter=solver.step_coupling_max_iter,
                solver=solver,
                raise_on_failure=False,
                initial_voltages=warm_voltages,
            )
        except NanogridError as e:
            raise SimulationStepError(f"Сбой расчета сети: {e}", t) from e

        currents = dict(zip(ids, map(float, coupling.source_currents)))
        tripped = [g for g in sources if abs(currents[g.id]) > g.controller.i_load_max]
        if not tripped:
            if not coupling.converged:
                events.append(SimEvent(t, 'network', 'coupling_not_converged',
                                       f"{coupling.iterations} итераций"))
            return coupling.solution, currents, coupling.iterations, coupling.converged

        for g in tripped:
            logger.warning(f"⚠️ {g.id}: перегрузка нагрузочного вывода {currents[g.id]:.2f} А, вывод разомкнут")
            states[g.id] = trip_load(g.controller, states[g.id])
            events.append(SimEvent(t, g.id, 'overcurrent_trip', f"I={currents[g.id]:.3f}"))
        sources = [g for g in sources if g not in tripped]

    return _deenergized(network), {}, 0, True


def trace_columns(scenario: Scenario) -> List[str]:
    """Стабильный состав колонок трасс"""
    columns = []
    for g in scenario.ordered_gss:
        columns += [f"{g.id}.{name}" for name in GSS_COLUMNS]
    for lb in scenario.ordered_load_banks:
        columns += [f"{lb.id}.{name}" for name in LB_COLUMNS]
    columns += [BRANCH_PREFIX + branch.key for branch in scenario.network.branches]
    columns += list(STEP_COLUMNS)
    return columns


def _trace_row(scenario: Scenario, record: StepRecord) -> Dict[str, object]:
    row: Dict[str, object] = {}
    for g in scenario.ordered_gss:
        point = record.points[g.id]
        row.update({
            f"{g.id}.v_bat": point.v_bat,
            f"{g.id}.i_bat": point.i_bat,
            f"{g.id}.v_pv": point.v_pv,
            f"{g.id}.i_pv": point.i_pv,
            g.id + PV_SUFFIX: point.p_pv,
            g.id + BATTERY_SUFFIX: point.p_battery,
            f"{g.id}.i_grid": point.grid_current,
            g.id + CONTROLLER_LOSS_SUFFIX: point.losses.total,
            f"{g.id}.duty": point.duty,
            f"{g.id}.soc": record.soc[g.id],
            f"{g.id}.stage": record.stages[g.id].value,
            f"{g.id}.load_connected": record.load_connected[g.id],
        })
    for lb in scenario.ordered_load_banks:
        voltage, current, power = record.lb_values(lb.id, scenario.network.bus_of(lb.id))
        row.update({f"{lb.id}.v": voltage, f"{lb.id}.i": current, lb.id + LOAD_SUFFIX: power})
    for key, current in record.branch_currents.items():
        row[BRANCH_PREFIX + key] = current
    row[BRANCH_LOSS_COLUMN] = record.branch_loss
    row['coupling_iterations'] = record.coupling_iterations
    row['converged'] = record.converged
    return row


def run(scenario: Scenario) -> SimResult:
    """
    Моделирование на окне сценария с шагом dt

    Входные ряды удерживаются постоянными внутри своих интервалов. Порядок
    устройств фиксирован (GSS по id, затем нагрузки), поэтому одинаковые
    сценарии дают побитово одинаковые трассы.
    """
    ScenarioValidator.require_valid(scenario)
    start_time = time.time()
    times = time_grid(scenario.start, scenario.end, scenario.dt)
    logger.info(f"🚀 Моделирование '{scenario.name}': {len(times)} шагов по {scenario.dt} с")

    irradiance = zero_order_hold(scenario.irradiance, times) if len(times) else np.array([])
    temperature = zero_order_hold(scenario.temperature, times) if len(times) else np.array([])

    world = initial_world(scenario)
    rows: List[Dict[str, object]] = []
    events: List[SimEvent] = []
    non_converged = 0
    steps_per_hour = max(int(round(3600.0 / scenario.dt)), 1)

    for position, t in enumerate(times):
        try:
            world = step(scenario, world, t, float(irradiance[position]), float(temperature[position]))
        except SimulationStepError:
            raise
        except NanogridError as e:
            raise SimulationStepError(str(e), t) from e
        record = world.record
        rows.append(_trace_row(scenario, record))
        events.extend(record.events)
        if not record.converged:
            non_converged += 1
        if position % steps_per_hour == 0:
            logger.debug(f"⏱️ {t}: {position}/{len(times)} шагов")

    traces = pd.DataFrame(rows, columns=trace_columns(scenario), index=times)
    traces.index.name = 'timestamp'
    events_frame = pd.DataFrame(
        [(e.time, e.device, e.kind, e.detail) for e in events],
        columns=['timestamp', 'device', 'kind', 'detail'],
    )

    ledger = energy_ledger(traces, scenario.rated_power) if not traces.empty else None
    daily = daily_ledger(traces, scenario.rated_power)

    if non_converged:
        logger.warning(f"⚠️ Шагов без сходимости согласования: {non_converged}")
    lvd = int(events_frame['kind'].str.startswith('lvd').sum()) if not events_frame.empty else 0
    logger.info(
        f"✅ Моделирование завершено за {format_duration(start_time, time.time())}: "
        f"{len(times)} шагов, событий LVD: {lvd}"
    )
    return SimResult(
        traces=traces,
        events=events_frame,
        ledger=ledger,
        daily=daily,
        final_state=world,
        non_converged_steps=non_converged,
    )
