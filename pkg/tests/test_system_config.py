"""
Тесты расчета автономной системы, нагрузок, расписаний и пересчета потребления
"""

import io

import numpy as np
import pytest

from base.errors import ParameterError, ScheduleParseError
from services.system_config import (
    FAN_RESISTANCE,
    RESIDENTIAL_SCENARIOS,
    ConsumptionKind,
    LoadBankSpec,
    LoadSchedule,
    SizingInput,
    bank_equivalent_resistance,
    compare_ac_dc_scenarios,
    dc_equivalent_consumption,
    irradiance_from_isc,
    lamp_resistance,
    load_schedule_frame,
    parse_load_schedule,
    pattern_loads,
    read_load_schedule,
    size_system,
)
from services.validation import dcdn_network


class TestSizing:

    def test_reference_house(self):
        result = size_system(SizingInput(daily_dc_load=1.63, hsp_min=4.2))
        assert result.corrected_load == pytest.approx(1.63 / 0.86)
        assert result.autonomy_days == pytest.approx(2.564)
        assert result.bank_capacity_ah == pytest.approx(253.1, rel=1e-3)
        assert result.pv_rated_wp == pytest.approx(564.1, rel=1e-3)

    def test_autonomy_floored(self):
        result = size_system(SizingInput(daily_dc_load=1.0, hsp_min=9.0))
        assert result.autonomy_days == 1.0

    @pytest.mark.parametrize('field, value', [
        ('daily_dc_load', -1.0),
        ('hsp_min', 0.0),
        ('charge_discharge_eff', 1.5),
        ('max_depth_of_discharge', 0.0),
    ])
    def test_invalid_inputs(self, field, value):
        kwargs = {'daily_dc_load': 1.0, 'hsp_min': 4.0, field: value}
        with pytest.raises(ParameterError):
            SizingInput(**kwargs)


class TestLoads:

    def test_lamp_resistance(self):
        assert lamp_resistance(24.0, 40.0) == pytest.approx(14.4)
        with pytest.raises(ParameterError):
            lamp_resistance(24.0, 0.0)

    def test_bank_in_parallel(self):
        spec = LoadBankSpec.build(n_lamps=5, n_fans=1)
        assert spec.size == 6
        assert bank_equivalent_resistance(spec, [True] * 5 + [False]) == pytest.approx(14.4 / 5)
        both = 1.0 / (1.0 / 14.4 + 1.0 / FAN_RESISTANCE)
        assert bank_equivalent_resistance(spec, [True] + [False] * 4 + [True]) == pytest.approx(both)

    def test_all_off_is_open_circuit(self):
        spec = LoadBankSpec.build(n_lamps=2)
        assert bank_equivalent_resistance(spec, [False, False]) is None

    def test_mask_length_checked(self):
        with pytest.raises(ParameterError):
            bank_equivalent_resistance(LoadBankSpec.build(n_lamps=2), [True])

    def test_mask_for_counts(self):
        spec = LoadBankSpec.build(n_lamps=3, n_fans=1)
        assert spec.mask_for(2, 1) == [True, True, False, True]
        with pytest.raises(ParameterError):
            spec.mask_for(4)

    def test_relay_map_selects_schedule_columns(self):
        spec = LoadBankSpec.build(n_lamps=2, relay_map=[4, 1])
        assert spec.columns == (4, 1)
        assert list(spec.select([0, 1, 0, 0, 1])) == [1, 1]
        assert spec.schedule_mismatch(5) is None
        assert '4' in spec.schedule_mismatch(4)

    def test_identity_map_needs_matching_width(self):
        spec = LoadBankSpec.build(n_lamps=3)
        assert spec.columns == (0, 1, 2)
        assert spec.schedule_mismatch(3) is None
        assert spec.schedule_mismatch(4) is not None

    @pytest.mark.parametrize('relay_map', [[0], [0, -1]])
    def test_bad_relay_map_rejected(self, relay_map):
        with pytest.raises(ParameterError):
            LoadBankSpec.build(n_lamps=2, relay_map=relay_map)

    def test_pattern_loads_on_dcdn(self):
        loads = pattern_loads('test-1', dcdn_network())
        assert set(loads) == {'N2', 'N3', 'N11'}
        assert loads['N2'].conductance == pytest.approx(4 / 14.4)
        assert loads['N3'].conductance == pytest.approx(4 / 14.4 + 1 / FAN_RESISTANCE)
        assert loads['N11'].conductance == pytest.approx(3 / 14.4)

    def test_unknown_pattern(self):
        with pytest.raises(ParameterError):
            pattern_loads('test-9', dcdn_network())

    def test_irradiance_from_reference_cell(self):
        assert irradiance_from_isc(8.081) == pytest.approx(1000.0)
        assert irradiance_from_isc(4.0405) == pytest.approx(500.0)


class TestSchedule:

    def test_parse_comma_and_space_separated(self):
        text = "1,0\n" * 720 + "0 1\n" * 720
        schedule = parse_load_schedule(text)
        assert schedule.n_devices == 2
        assert list(schedule.mask_at(0)) == [True, False]
        assert list(schedule.mask_at(1439)) == [False, True]
        assert list(schedule.mask_at(1440)) == [True, False]

    def test_short_schedule_reports_deficit(self):
        with pytest.raises(ScheduleParseError) as excinfo:
            parse_load_schedule("1\n" * 1439)
        assert 'не хватает 1' in str(excinfo.value)

    def test_non_integer_reports_position(self):
        lines = ["1,0"] * 1440
        lines[9] = "1,x"
        with pytest.raises(ScheduleParseError) as excinfo:
            parse_load_schedule("\n".join(lines))
        assert excinfo.value.row == 10
        assert excinfo.value.column == 2

    def test_ragged_row(self):
        lines = ["1,0"] * 1440
        lines[4] = "1,0,1"
        with pytest.raises(ScheduleParseError) as excinfo:
            parse_load_schedule("\n".join(lines))
        assert excinfo.value.row == 5

    def test_text_form_parses_back(self):
        schedule = LoadSchedule.all_off(3)
        assert np.array_equal(parse_load_schedule(schedule.to_text()).matrix, schedule.matrix)

    def test_read_from_buffer_and_frame(self):
        schedule = read_load_schedule(io.StringIO("1\n" * 1440))
        frame = load_schedule_frame(schedule, ['lamp1'])
        assert frame.shape == (1440, 1)
        assert frame['lamp1'].sum() == 1440

    def test_wrong_row_count_in_matrix(self):
        with pytest.raises(ScheduleParseError):
            LoadSchedule(np.zeros((10, 2), dtype=int))


class TestAcDcComparison:

    def test_electronic_and_motor_loads(self):
        assert dc_equivalent_consumption(100.0, ConsumptionKind.ELECTRONIC) == pytest.approx(100.0 * 0.98 * 0.812)
        assert dc_equivalent_consumption(98.0, ConsumptionKind.MOTOR) == pytest.approx(100.0)

    def test_negative_consumption_rejected(self):
        with pytest.raises(ParameterError):
            dc_equivalent_consumption(-1.0, 'motor')

    def test_scenario_table(self):
        table = compare_ac_dc_scenarios()
        assert list(table.index) == sorted(RESIDENTIAL_SCENARIOS)
        assert list(table.columns) == ['e_ac_kwh', 'e_dc_kwh', 'dc_to_ac']
        np.testing.assert_allclose(table['dc_to_ac'], table['e_dc_kwh'] / table['e_ac_kwh'])
        # кондиционер с инвертором выигрывает от питания постоянным током, с асинхронным двигателем нет
        assert table.loc['D', 'dc_to_ac'] < table.loc['A', 'dc_to_ac']
