"""
Тесты резистивной модели сети и расчета потокораспределения
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from base.errors import ConvergenceError, NetworkTopologyError, ParameterError
from config.settings import SolverConfig
from models.battery_model import BatteryState
from services.network_powerflow import (
    Branch,
    Bus,
    BusKind,
    BusLoad,
    Conductor,
    FlowProblem,
    Network,
    branch_resistance,
    conductance_matrix,
    constant_power,
    constant_resistance,
    coupled_flow_with_batteries,
    flow_jacobian,
    newton_raphson_flow,
    power_mismatch,
    require_converged,
)
from services.system_config import pattern_loads
from services.validation import dcdn_network, oracle_constant_power, oracle_linear_circuit


@st.composite
def meshed_networks(draw, max_buses=10):
    """Связная сеть: случайное дерево плюс несколько хорд, источники и нагрузки на случайных шинах"""
    n = draw(st.integers(min_value=2, max_value=max_buses))
    ids = [f"B{i}" for i in range(n)]
    lengths = st.floats(min_value=1.0, max_value=60.0)
    pairs = {(ids[draw(st.integers(min_value=0, max_value=i - 1))], ids[i]) for i in range(1, n)}
    for _ in range(draw(st.integers(min_value=0, max_value=n))):
        a, b = sorted(draw(st.lists(st.sampled_from(ids), min_size=2, max_size=2, unique=True)))
        if (a, b) not in pairs and (b, a) not in pairs:
            pairs.add((a, b))
    branches = tuple(Branch(a, b, draw(lengths)) for a, b in sorted(pairs))
    network = Network(tuple(Bus(bus_id) for bus_id in ids), branches)

    n_sources = draw(st.integers(min_value=1, max_value=min(3, n - 1)))
    source_ids = draw(st.lists(st.sampled_from(ids), min_size=n_sources, max_size=n_sources, unique=True))
    sources = {bus: draw(st.floats(min_value=23.5, max_value=26.5)) for bus in source_ids}
    free = [bus for bus in ids if bus not in sources]
    loaded = draw(st.lists(st.sampled_from(free), min_size=1, max_size=len(free), unique=True))
    return network, sources, loaded


class TestBranchResistance:

    def test_thirty_degree_value(self):
        assert branch_resistance(6.0, Conductor(), 30.0) == pytest.approx(0.0902, abs=1e-4)

    def test_linear_in_length(self):
        r10 = branch_resistance(10.0, Conductor(), 30.0)
        r20 = branch_resistance(20.0, Conductor(), 30.0)
        assert r20 - r10 == pytest.approx(2.0 * 0.010 * 0.8037)

    def test_positive_length_required(self):
        with pytest.raises(ParameterError):
            branch_resistance(0.0, Conductor(), 30.0)


class TestNetwork:

    def test_conductance_matrix_rows_sum_to_zero(self):
        g = conductance_matrix(dcdn_network(), 30.0)
        np.testing.assert_allclose(g, g.T)
        np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-9)

    def test_conductance_matrix_built_once_per_temperature(self):
        network = dcdn_network()
        g = conductance_matrix(network, 30.0)
        assert conductance_matrix(network, 30.0) is g
        assert not g.flags.writeable
        assert conductance_matrix(network, 20.0) is not g
        assert set(network.matrix_cache) == {30.0, 20.0}

    def test_disconnected_network_names_isolated_buses(self):
        network = Network(
            buses=(Bus('A'), Bus('B'), Bus('C')),
            branches=(Branch('A', 'B', 5.0),),
        )
        with pytest.raises(NetworkTopologyError) as excinfo:
            network.check_connected()
        assert excinfo.value.buses == ['C']

    def test_self_loop_rejected(self):
        with pytest.raises(NetworkTopologyError):
            Network(buses=(Bus('A'),), branches=(Branch('A', 'A', 5.0),))

    def test_unknown_bus_rejected(self):
        with pytest.raises(NetworkTopologyError):
            Network(buses=(Bus('A'),), branches=(Branch('A', 'B', 5.0),))

    def test_duplicate_bus_rejected(self):
        with pytest.raises(NetworkTopologyError):
            Network(buses=(Bus('A'), Bus('A')), branches=())

    def test_unattached_device(self, line_network):
        with pytest.raises(NetworkTopologyError):
            line_network.bus_of('G9')

    def test_branch_removal(self):
        network = dcdn_network().without_branch('N9', 'N10')
        assert len(network.branches) == 11
        network.check_connected()


class TestFlowProblem:

    def test_requires_a_source(self):
        with pytest.raises(ParameterError):
            FlowProblem({})

    def test_source_cannot_be_load(self):
        with pytest.raises(ParameterError):
            FlowProblem({'A': 24.0}, {'A': constant_resistance(10.0)})

    def test_load_composition(self):
        load = constant_power(10.0) + constant_resistance(4.0)
        assert load.at(2.0) == pytest.approx(11.0)


class TestNewtonRaphson:

    def test_voltage_divider(self):
        divider = Network((Bus('S', BusKind.SOURCE), Bus('L', BusKind.LOAD)), (Branch('S', 'L', 1.0),),
                          Conductor(r_per_km=50.0, alpha_r=0.0, ref_temp=30.0))
        solution = newton_raphson_flow(FlowProblem({'S': 24.0}, {'L': constant_resistance(14.4)}), divider)
        assert solution.converged
        assert solution.voltages['L'] == pytest.approx(24.0 * 14.4 / 14.5, rel=1e-10)
        assert solution.branch_currents['S-L'] == pytest.approx(24.0 / 14.5, rel=1e-9)

    def test_constant_power_matches_fixed_point(self, line_network):
        sources = {'A': 25.0, 'C': 24.5}
        problem = FlowProblem(sources, {'B': constant_power(300.0)})
        solution = require_converged(newton_raphson_flow(problem, line_network))
        oracle = oracle_constant_power(line_network, sources, {'B': 300.0})
        assert solution.voltages['B'] == pytest.approx(oracle['B'], rel=1e-9)

    def test_power_balance_on_dcdn(self):
        network = dcdn_network()
        sources = {'N1': 26.4, 'N6': 26.4, 'N7': 26.4}
        loads = pattern_loads('test-1', network)
        problem = FlowProblem(sources, loads, 30.0)
        solution = require_converged(newton_raphson_flow(problem, network))
        supplied = sum(solution.bus_injections[bus] for bus in sources)
        consumed = sum(load.at(solution.voltages[bus]) for bus, load in loads.items())
        assert supplied == pytest.approx(consumed + solution.branch_losses(network, 30.0), rel=1e-9)
        assert all(solution.voltages[bus] < 26.4 for bus in loads)

    def test_warm_start_gives_same_answer(self):
        network = dcdn_network()
        problem = FlowProblem({'N1': 25.6, 'N6': 25.4, 'N7': 25.5}, pattern_loads('test-2', network))
        cold = newton_raphson_flow(problem, network)
        warm = newton_raphson_flow(problem, network, initial=cold.voltages)
        for bus, voltage in cold.voltages.items():
            assert warm.voltages[bus] == pytest.approx(voltage, rel=1e-9)

    def test_iteration_limit_reports_failure(self, line_network):
        problem = FlowProblem({'A': 25.0, 'C': 24.5}, {'B': constant_power(300.0)})
        solution = newton_raphson_flow(problem, line_network, SolverConfig(flow_max_iter=0))
        assert not solution.converged
        with pytest.raises(ConvergenceError):
            require_converged(solution)

    @given(st.lists(st.floats(min_value=2.0, max_value=200.0), min_size=3, max_size=3))
    @settings(max_examples=20, deadline=None)
    def test_matches_dense_nodal_solution(self, resistances):
        network = dcdn_network()
        sources = {'N1': 25.6, 'N6': 25.4, 'N7': 25.5}
        loads = dict(zip(('N2', 'N3', 'N11'), resistances))
        oracle = oracle_linear_circuit(network, sources, loads)
        problem = FlowProblem(sources, {bus: constant_resistance(r) for bus, r in loads.items()})
        solution = newton_raphson_flow(problem, network)
        for bus, voltage in oracle.items():
            assert solution.voltages[bus] == pytest.approx(voltage, rel=1e-9)

    @given(case=meshed_networks(), data=st.data())
    @settings(max_examples=200, deadline=None)
    def test_random_networks_match_dense_solution(self, case, data):
        network, sources, loaded = case
        resistances = {bus: data.draw(st.floats(min_value=1.0, max_value=200.0)) for bus in loaded}
        oracle = oracle_linear_circuit(network, sources, resistances)
        problem = FlowProblem(sources, {bus: constant_resistance(r) for bus, r in resistances.items()})
        solution = require_converged(newton_raphson_flow(problem, network))
        for bus, voltage in oracle.items():
            assert solution.voltages[bus] == pytest.approx(voltage, rel=1e-9)

    @given(case=meshed_networks(max_buses=6), data=st.data())
    @settings(max_examples=100, deadline=None)
    def test_constant_power_satisfies_kcl(self, case, data):
        network, sources, loaded = case
        loads = {bus: constant_power(data.draw(st.floats(min_value=1.0, max_value=15.0))) for bus in loaded}
        solution = require_converged(newton_raphson_flow(FlowProblem(sources, loads), network))
        for bus in network.bus_ids:
            if bus in sources:
                continue
            voltage = solution.voltages[bus]
            drawn = loads[bus].at(voltage) if bus in loads else 0.0
            assert abs((solution.bus_injections[bus] + drawn) / voltage) < 1e-9

    def test_jacobian_matches_central_differences(self):
        network = dcdn_network()
        g_matrix = conductance_matrix(network, 30.0)
        ids = network.bus_ids
        sources = [ids.index(bus) for bus in ('N1', 'N6', 'N7')]
        free = np.array([i for i in range(len(ids)) if i not in sources])
        rng = np.random.default_rng(7)
        voltages = rng.uniform(23.0, 26.0, len(ids))
        load_power = rng.uniform(0.0, 80.0, free.size)
        load_conductance = rng.uniform(0.0, 0.2, free.size)

        analytic = flow_jacobian(g_matrix, voltages, free, load_conductance)
        numeric = np.zeros_like(analytic)
        h = 1e-6
        for column, bus in enumerate(free):
            up, down = voltages.copy(), voltages.copy()
            up[bus] += h
            down[bus] -= h
            numeric[:, column] = (
                power_mismatch(g_matrix, up, free, load_power, load_conductance)
                - power_mismatch(g_matrix, down, free, load_power, load_conductance)
            ) / (2.0 * h)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-5)


class TestCoupledFlow:

    def test_symmetric_banks_share_load(self, battery_params):
        network = Network(
            buses=(Bus('A', BusKind.SOURCE), Bus('B', BusKind.LOAD), Bus('C', BusKind.SOURCE)),
            branches=(Branch('A', 'B', 10.0), Branch('B', 'C', 10.0)),
        )
        state = BatteryState.initial(battery_params, 0.8)
        result = coupled_flow_with_batteries(
            network,
            {'A': (battery_params, state), 'C': (battery_params, state)},
            {'B': constant_resistance(14.4 / 3)},
            30.0,
        )
        current_a = result.battery_currents['A']
        current_c = result.battery_currents['C']
        assert current_a < 0
        assert current_a == pytest.approx(current_c, rel=1e-6)
        assert result.battery_voltages['A'] == pytest.approx(result.battery_voltages['C'], rel=1e-9)

    def test_requires_a_bank(self, line_network):
        with pytest.raises(ParameterError):
            coupled_flow_with_batteries(line_network, {}, {'B': BusLoad()}, 30.0)

    @pytest.mark.parametrize('soc_a, soc_c', [(0.9, 0.5), (0.4, 0.8), (0.75, 0.7)])
    def test_fuller_bank_supplies_more(self, line_network, battery_params, soc_a, soc_c):
        result = coupled_flow_with_batteries(
            line_network,
            {
                'A': (battery_params, BatteryState.initial(battery_params, soc_a)),
                'C': (battery_params, BatteryState.initial(battery_params, soc_c)),
            },
            {'B': constant_resistance(14.4 / 3)},
            30.0,
        )
        supplied = {bus: -current for bus, current in result.battery_currents.items()}
        fuller, emptier = ('A', 'C') if soc_a > soc_c else ('C', 'A')
        assert supplied[fuller] > max(supplied[emptier], 0.0)
        assert result.battery_voltages[fuller] > result.battery_voltages[emptier]
