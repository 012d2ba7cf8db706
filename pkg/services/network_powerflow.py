"""
Резистивная модель сети наногрида и расчет потокораспределения методом Ньютона-Рафсона
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from base.errors import (
    ConvergenceError,
    NetworkTopologyError,
    ParameterError,
    SingularJacobianError,
)
from config.settings import SolverConfig
from models.battery_model import BatteryParams, BatteryState, terminal_voltage

_DAMPING_HALVINGS = 10
_POLISH_ITERATIONS = 3
_KCL_TOLERANCE = 1e-9


class BusKind(str, Enum):
    SOURCE = 'source'
    LOAD = 'load'
    JUNCTION = 'junction'


@dataclass(frozen=True)
class Bus:
    id: str
    kind: BusKind = BusKind.JUNCTION


@dataclass(frozen=True)
class Branch:
    bus_a: str
    bus_b: str
    length: float

    @property
    def key(self) -> str:
        return f"{self.bus_a}-{self.bus_b}"


@dataclass(frozen=True)
class Conductor:
    r_per_km: float = 0.8037
    alpha_r: float = 0.00403
    ref_temp: float = 20.0


@dataclass(frozen=True)
class Network:
    """Шины, ветви, проводник и привязка устройств к шинам"""
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...]
    conductor: Conductor = field(default_factory=Conductor)
    attachment: Mapping[str, str] = field(default_factory=dict)
    name: str = 'network'

    def __post_init__(self):
        ids = [bus.id for bus in self.buses]
        duplicates = sorted({bus_id for bus_id in ids if ids.count(bus_id) > 1})
        if duplicates:
            raise NetworkTopologyError(f"Повторяющиеся шины: {duplicates}", duplicates)
        known = set(ids)
        for branch in self.branches:
            if branch.bus_a == branch.bus_b:
                raise NetworkTopologyError(f"Петля на шине {branch.bus_a}", [branch.bus_a])
            unknown = [b for b in (branch.bus_a, branch.bus_b) if b not in known]
            if unknown:
                raise NetworkTopologyError(f"Ветвь {branch.key} ссылается на неизвестные шины {unknown}", unknown)
            if branch.length <= 0:
                raise ParameterError(f"Длина ветви {branch.key} должна быть положительной: {branch.length}")
        unknown = sorted({bus for bus in self.attachment.values() if bus not in known})
        if unknown:
            raise NetworkTopologyError(f"Устройства привязаны к неизвестным шинам {unknown}", unknown)

    @cached_property
    def bus_ids(self) -> List[str]:
        return [bus.id for bus in self.buses]

    @cached_property
    def _positions(self) -> Dict[str, int]:
        return {bus.id: position for position, bus in enumerate(self.buses)}

    def index(self) -> Dict[str, int]:
        return self._positions

    @cached_property
    def matrix_cache(self) -> Dict[float, Tuple[np.ndarray, np.ndarray]]:
        """Температура проводника -> (матрица проводимостей, сопротивления ветвей)"""
        return {}

    def bus_of(self, device_id: str) -> str:
        try:
            return self.attachment[device_id]
        except KeyError:
            raise NetworkTopologyError(f"Устройство {device_id} не привязано к шине", [])

    def without_branch(self, bus_a: str, bus_b: str) -> "Network":
        """Копия сети без ветви между двумя шинами"""
        pair = {bus_a, bus_b}
        kept = tuple(branch for branch in self.branches if {branch.bus_a, branch.bus_b} != pair)
        if len(kept) == len(self.branches):
            raise NetworkTopologyError(f"Ветвь {bus_a}-{bus_b} не найдена", [bus_a, bus_b])
        return replace(self, branches=kept)

    def check_connected(self) -> None:
        n = len(self.buses)
        if n == 0:
            raise NetworkTopologyError("Сеть не содержит шин")
        index = self.index()
        rows = [index[b.bus_a] for b in self.branches]
        cols = [index[b.bus_b] for b in self.branches]
        adjacency = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        count, labels = connected_components(adjacency, directed=False)
        if count > 1:
            main = np.bincount(labels).argmax()
            isolated = [bus_id for bus_id, label in zip(self.bus_ids, labels) if label != main]
            raise NetworkTopologyError(f"Сеть несвязна, отделены шины: {isolated}", isolated)


@dataclass(frozen=True)
class BusLoad:
    """Нагрузка шины: постоянная мощность плюс постоянная проводимость, P(V) = power + conductance·V²"""
    power: float = 0.0
    conductance: float = 0.0

    def at(self, voltage: float) -> float:
        return self.power + self.conductance * voltage ** 2

    def __add__(self, other: "BusLoad") -> "BusLoad":
        return BusLoad(self.power + other.power, self.conductance + other.conductance)


def constant_power(watts: float) -> BusLoad:
    return BusLoad(power=watts)


def constant_resistance(ohms: float) -> BusLoad:
    if ohms <= 0:
        raise ParameterError(f"Сопротивление нагрузки должно быть положительным: {ohms}")
    return BusLoad(conductance=1.0 / ohms)


@dataclass(frozen=True)
class FlowProblem:
    source_voltages: Mapping[str, float]
    loads: Mapping[str, BusLoad] = field(default_factory=dict)
    conductor_temp: float = 30.0

    def __post_init__(self):
        if not self.source_voltages:
            raise ParameterError("Для расчета требуется хотя бы одна шина-источник")
        for bus, voltage in self.source_voltages.items():
            if voltage <= 0:
                raise ParameterError(f"Напряжение источника {bus} должно быть положительным: {voltage}")
        overlap = sorted(set(self.source_voltages) & set(self.loads))
        if overlap:
            raise ParameterError(f"Шины не могут быть одновременно источником и нагрузкой: {overlap}")


@dataclass(frozen=True)
class FlowSolution:
    voltages: Dict[str, float]
    branch_currents: Dict[str, float]
    bus_injections: Dict[str, float]
    iterations: int
    converged: bool
    max_mismatch: float = 0.0

    def source_currents(self, buses: Sequence[str]) -> np.ndarray:
        """Токи, отдаваемые источниками в сеть, А"""
        return np.array([self.bus_injections[bus] / self.voltages[bus] for bus in buses])

    def branch_losses(self, network: Network, conductor_temp: float) -> float:
        currents = np.array([self.branch_currents[branch.key] for branch in network.branches])
        return float(np.sum(currents ** 2 * branch_resistances(network, conductor_temp)))


def branch_resistance(length: float, conductor: Conductor, temp: float) -> float:
    """
    Сопротивление прямого и обратного проводника между двумя шинами

    Args:
        length: длина трассы, м
        conductor: данные проводника
        temp: температура проводника, °C

    Returns:
        R = 2·[L_km·r + α·(T - T_ref)], Ом
    """
    if length <= 0:
        raise ParameterError(f"Длина должна быть положительной: {length}")
    return 2.0 * (length / 1000.0 * conductor.r_per_km + conductor.alpha_r * (temp - conductor.ref_temp))


def _electrical(network: Network, conductor_temp: float) -> Tuple[np.ndarray, np.ndarray]:
    cached = network.matrix_cache.get(conductor_temp)
    if cached is not None:
        return cached
    network.check_connected()
    index = network.index()
    size = len(network.buses)
    matrix = np.zeros((size, size))
    resistances = np.array([branch_resistance(b.length, network.conductor, conductor_temp) for b in network.branches])
    for branch, resistance in zip(network.branches, resistances):
        g = 1.0 / resistance
        a, b = index[branch.bus_a], index[branch.bus_b]
        matrix[a, a] += g
        matrix[b, b] += g
        matrix[a, b] -= g
        matrix[b, a] -= g
    matrix.setflags(write=False)
    resistances.setflags(write=False)
    network.matrix_cache[conductor_temp] = (matrix, resistances)
    return matrix, resistances


def conductance_matrix(network: Network, conductor_temp: float) -> np.ndarray:
    """Узловая матрица проводимостей (симметричная, нулевые суммы строк, только для чтения)"""
    return _electrical(network, conductor_temp)[0]


def branch_resistances(network: Network, conductor_temp: float) -> np.ndarray:
    """Сопротивления ветвей в порядке network.branches, Ом"""
    return _electrical(network, conductor_temp)[1]


def _partition(network: Network, problem: FlowProblem):
    index = network.index()
    unknown_sources = [bus for bus in problem.source_voltages if bus not in index]
    unknown_loads = [bus for bus in problem.loads if bus not in index]
    if unknown_sources or unknown_loads:
        raise NetworkTopologyError("Задача ссылается на неизвестные шины", unknown_sources + unknown_loads)
    sources = np.array([index[bus] for bus in problem.source_voltages], dtype=int)
    free = np.array([i for i, bus in enumerate(network.bus_ids) if bus not in problem.source_voltages], dtype=int)
    return index, sources, free


def _load_vectors(network: Network, problem: FlowProblem, free: np.ndarray):
    ids = network.bus_ids
    power = np.array([problem.loads.get(ids[i], BusLoad()).power for i in free])
    conductance = np.array([problem.loads.get(ids[i], BusLoad()).conductance for i in free])
    return power, conductance


def power_mismatch(g_matrix: np.ndarray, voltages: np.ndarray, free: np.ndarray,
                   load_power: np.ndarray, load_conductance: np.ndarray) -> np.ndarray:
    """Невязка мощности свободных шин: отдача в сеть плюс потребление нагрузки"""
    v_free = voltages[free]
    injected = v_free * (g_matrix[free] @ voltages)
    return injected + load_power + load_conductance * v_free ** 2


def flow_jacobian(g_matrix: np.ndarray, voltages: np.ndarray, free: np.ndarray,
                  load_conductance: np.ndarray) -> np.ndarray:
    """Аналитическая матрица Якоби невязки мощности по напряжениям свободных шин"""
    v_free = voltages[free]
    g_ff = g_matrix[np.ix_(free, free)]
    jacobian = v_free[:, None] * g_ff
    currents = g_matrix[free] @ voltages
    jacobian[np.diag_indices_from(jacobian)] += currents + 2.0 * load_conductance * v_free
    return jacobian


def newton_raphson_flow(problem: FlowProblem, network: Network,
                        solver: Optional[SolverConfig] = None,
                        initial: Optional[Mapping[str, float]] = None) -> FlowSolution:
    """
    Потокораспределение в сети постоянного тока методом Ньютона-Рафсона

    Args:
        problem: напряжения источников, нагрузки шин, температура проводника
        network: сеть
        solver: допуски и лимит итераций
        initial: начальные напряжения свободных шин (по умолчанию среднее напряжение источников)

    Returns:
        FlowSolution
    """
    solver = solver or SolverConfig()
    g_matrix = conductance_matrix(network, problem.conductor_temp)
    index, sources, free = _partition(network, problem)
    load_power, load_conductance = _load_vectors(network, problem, free)

    voltages = np.zeros(len(network.buses))
    source_values = np.array(list(problem.source_voltages.values()), dtype=float)
    voltages[sources] = source_values
    voltages[free] = source_values.mean()
    if initial:
        for bus, value in initial.items():
            if bus in index and index[bus] in free and value > 0:
                voltages[index[bus]] = value

    iterations = 0
    mismatch = power_mismatch(g_matrix, voltages, free, load_power, load_conductance)
    worst = float(np.max(np.abs(mismatch))) if free.size else 0.0
    polish = 0

    while free.size and iterations < solver.flow_max_iter:
        converged = worst < solver.flow_tolerance
        kcl = float(np.max(np.abs(mismatch / voltages[free])))
        if converged and (kcl < _KCL_TOLERANCE or polish >= _POLISH_ITERATIONS):
            break
        if converged:
            polish += 1

        jacobian = flow_jacobian(g_matrix, voltages, free, load_conductance)
        try:
            delta = np.linalg.solve(jacobian, -mismatch)
        except np.linalg.LinAlgError as e:
            raise SingularJacobianError(
                f"Вырожденная матрица Якоби на итерации {iterations}: {e}",
                iterations=iterations,
                mismatch=worst,
            )

        scale = 1.0
        for _ in range(_DAMPING_HALVINGS):
            trial = voltages.copy()
            trial[free] += scale * delta
            trial_mismatch = power_mismatch(g_matrix, trial, free, load_power, load_conductance)
            trial_worst = float(np.max(np.abs(trial_mismatch)))
            if trial_worst <= worst or converged:
                break
            scale /= 2.0
        iterations += 1
        if converged and trial_worst > worst:
            break
        voltages, mismatch, worst = trial, trial_mismatch, trial_worst
        logger.debug("NR итерация {}: max|ΔP| = {:.3e} Вт, шаг {}", iterations, worst, scale)

    converged = worst < solver.flow_tolerance
    if not converged:
        logger.warning(f"⚠️ Потокораспределение не сошлось за {iterations} итераций, max|ΔP| = {worst:.3e} Вт")

    return _build_solution(network, problem, g_matrix, voltages, iterations, converged, worst)


def _build_solution(network, problem, g_matrix, voltages, iterations, converged, worst) -> FlowSolution:
    ids = network.bus_ids
    index = network.index()
    injections = voltages * (g_matrix @ voltages)
    resistances = branch_resistances(network, problem.conductor_temp)
    branch_currents = {
        branch.key: float((voltages[index[branch.bus_a]] - voltages[index[branch.bus_b]]) / resistance)
        for branch, resistance in zip(network.branches, resistances)
    }
    return FlowSolution(
        voltages={bus: float(v) for bus, v in zip(ids, voltages)},
        branch_currents=branch_currents,
        bus_injections={bus: float(p) for bus, p in zip(ids, injections)},
        iterations=iterations,
        converged=converged,
        max_mismatch=worst,
    )


def require_converged(solution: FlowSolution) -> FlowSolution:
    if not solution.converged:
        raise ConvergenceError(
            f"Потокораспределение не сошлось: max|ΔP| = {solution.max_mismatch:.3e} Вт",
            iterations=solution.iterations,
            mismatch=solution.max_mismatch,
        )
    return solution


def source_sensitivity(network: Network, problem: FlowProblem, solution: FlowSolution) -> np.ndarray:
    """
    Матрица dI_s/dV_t чувствительности токов источников к их напряжениям

    Учитывает перестройку напряжений свободных шин через матрицу Якоби в точке решения.
    """
    g_matrix = conductance_matrix(network, problem.conductor_temp)
    _, sources, free = _partition(network, problem)
    voltages = np.array([solution.voltages[bus] for bus in network.bus_ids])
    g_ss = g_matrix[np.ix_(sources, sources)]
    if not free.size:
        return g_ss
    _, load_conductance = _load_vectors(network, problem, free)
    jacobian = flow_jacobian(g_matrix, voltages, free, load_conductance)
    coupling = voltages[free][:, None] * g_matrix[np.ix_(free, sources)]
    dv_free = -np.linalg.solve(jacobian, coupling)
    return g_ss + g_matrix[np.ix_(sources, free)] @ dv_free


@dataclass(frozen=True)
class CouplingResult:
    solution: FlowSolution
    source_buses: Tuple[str, ...]
    source_currents: np.ndarray
    source_voltages: np.ndarray
    iterations: int
    converged: bool


def solve_source_coupling(
    network: Network,
    source_buses: Sequence[str],
    voltage_of_current: Callable[[np.ndarray], np.ndarray],
    loads: Mapping[str, BusLoad],
    conductor_temp: float,
    initial_currents: np.ndarray,
    tolerance: float = 1e-3,
    max_iter: int = 100,
    solver: Optional[SolverConfig] = None,
    raise_on_failure: bool = True,
    initial_voltages: Optional[Mapping[str, float]] = None,
) -> CouplingResult:
    """
    Согласование напряжений источников, зависящих от их токов, с потокораспределением

    voltage_of_current отображает вектор токов, отдаваемых источниками в сеть, в вектор
    их напряжений; k-е напряжение зависит только от k-го тока. Итерации квазиньютоновские:
    чувствительность сети берется из решения, наклон источников конечной разностью.
    Сходимость, когда токи потокораспределения отличаются от заданных менее чем на tolerance
    относительно. initial_voltages задают начальное приближение напряжений свободных шин.
    """
    source_buses = tuple(source_buses)
    currents = np.asarray(initial_currents, dtype=float).copy()
    identity = np.eye(len(source_buses))
    previous_voltages = initial_voltages

    def evaluate(x):
        voltages = np.asarray(voltage_of_current(x), dtype=float)
        problem = FlowProblem(dict(zip(source_buses, voltages)), loads, conductor_temp)
        solution = newton_raphson_flow(problem, network, solver, initial=previous_voltages)
        require_converged(solution)
        flow_currents = solution.source_currents(source_buses)
        return problem, solution, voltages, flow_currents - x

    problem, solution, voltages, residual = evaluate(currents)
    for iteration in range(1, max_iter + 1):
        if np.all(np.abs(residual) <= tolerance * np.abs(currents + residual) + 1e-6):
            logger.debug("Согласование источников сошлось за {} итераций", iteration - 1)
            return CouplingResult(solution, source_buses, currents + residual, voltages, iteration - 1, True)

        previous_voltages = solution.voltages
        step = 1e-4
        slopes = (np.asarray(voltage_of_current(currents + step), dtype=float) - voltages) / step
        sensitivity = source_sensitivity(network, problem, solution)
        jacobian = sensitivity * slopes[None, :] - identity
        try:
            delta = np.linalg.solve(jacobian, -residual)
        except np.linalg.LinAlgError:
            delta = residual

        norm = np.max(np.abs(residual))
        scale = 1.0
        for _ in range(_DAMPING_HALVINGS):
            trial = currents + scale * delta
            trial_eval = evaluate(trial)
            if np.max(np.abs(trial_eval[3])) < norm:
                break
            scale /= 2.0
        currents = trial
        problem, solution, voltages, residual = trial_eval

    message = f"Согласование источников не сошлось за {max_iter} итераций (max невязка {np.max(np.abs(residual)):.3e} А)"
    if raise_on_failure:
        raise ConvergenceError(message, iterations=max_iter, mismatch=float(np.max(np.abs(residual))))
    logger.warning(f"⚠️ {message}")
    return CouplingResult(solution, source_buses, currents + residual, voltages, max_iter, False)


@dataclass(frozen=True)
class CoupledFlowResult:
    solution: FlowSolution
    battery_voltages: Dict[str, float]
    battery_currents: Dict[str, float]
    iterations: int


def coupled_flow_with_batteries(
    network: Network,
    batteries: Mapping[str, Tuple[BatteryParams, BatteryState]],
    load_specs: Mapping[str, BusLoad],
    conductor_temp: float,
    solver: Optional[SolverConfig] = None,
) -> CoupledFlowResult:
    """
    Потокораспределение с напряжениями банков, зависящими от их токов

    Args:
        network: сеть
        batteries: шина-источник -> (параметры, состояние) банка
        load_specs: нагрузки шин
        conductor_temp: температура проводника, °C
        solver: допуски и лимиты

    Returns:
        CoupledFlowResult; токи банков отрицательны при разряде
    """
    solver = solver or SolverConfig()
    buses = tuple(batteries)
    if not buses:
        raise ParameterError("Нужен хотя бы один банк-источник")

    def voltages(grid_currents: np.ndarray) -> np.ndarray:
        return np.array([
            terminal_voltage(params, state, -current)[0]
            for (params, state), current in zip(batteries.values(), grid_currents)
        ])

    nominal = np.mean([params.nominal_voltage for params, _ in batteries.values()])
    total_power = sum(load.at(nominal) for load in load_specs.values())
    initial = np.full(len(buses), total_power / len(buses) / nominal)

    result = solve_source_coupling(
        network, buses, voltages, load_specs, conductor_temp, initial,
        tolerance=solver.coupling_tolerance, max_iter=solver.coupling_max_iter, solver=solver,
    )
    logger.info(f"✅ Согласованное потокораспределение: {result.iterations} итераций")
    return CoupledFlowResult(
        solution=result.solution,
        battery_voltages=dict(zip(buses, map(float, result.source_voltages))),
        battery_currents={bus: float(-current) for bus, current in zip(buses, result.source_currents)},
        iterations=result.iterations,
    )


LOADING_PATTERNS: Dict[str, Dict[str, Tuple[int, int]]] = {
    'test-1': {'LB1': (4, 0), 'LB2': (4, 1), 'LB3': (3, 0)},
    'test-2': {'LB1': (5, 0), 'LB2': (4, 1), 'LB3': (3, 0)},
    'test-3': {'LB1': (3, 0), 'LB2': (4, 0), 'LB3': (2, 0)},
}
