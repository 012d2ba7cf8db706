"""
Тесты контроллера заряда: преобразователь, стадии заряда, отключение нагрузки, рабочие точки
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from base.errors import OvercurrentError, ParameterError
from models.battery_model import BatteryState, open_circuit_estimate
from models.charge_controller import (
    ChargeStage,
    ControllerConfig,
    ControllerState,
    ConverterLossConstants,
    buck_output_current,
    check_load_current,
    controller_preset,
    conversion_efficiency,
    converter_losses,
    evaluate_gss,
    gss_step,
    gss_terminal_voltage,
    lvd_hysteresis,
    pv_limits,
    step_stage,
    trip_load,
)
from models.pv_model import OperatingEnvironment


class TestBuckConverter:

    def test_lossless_conserves_power(self, lossless_controller):
        v_pv, i_pv, v_o = 60.0, 5.0, 25.0
        i_o = buck_output_current(lossless_controller, v_pv, i_pv, v_o, v_o / v_pv)
        assert v_o * i_o == pytest.approx(v_pv * i_pv)

    def test_losses_reduce_efficiency(self):
        cfg = ControllerConfig()
        v_pv, i_pv, v_o = 60.0, 5.0, 25.0
        duty = v_o / v_pv
        i_o = buck_output_current(cfg, v_pv, i_pv, v_o, duty)
        losses = converter_losses(cfg, v_pv, i_pv, duty)
        assert losses.total > cfg.losses.p_auto
        assert v_pv * i_pv - v_o * i_o == pytest.approx(losses.total)
        assert 0.9 < conversion_efficiency(v_pv, i_pv, v_o, i_o) < 1.0

    def test_output_never_negative(self):
        cfg = ControllerConfig()
        assert buck_output_current(cfg, 60.0, 0.01, 25.0, 25.0 / 60.0) == 0.0

    @pytest.mark.parametrize('duty', [0.0, 1.2])
    def test_duty_out_of_range(self, duty):
        with pytest.raises(ParameterError):
            buck_output_current(ControllerConfig(), 60.0, 5.0, 25.0, duty)

    def test_efficiency_undefined_without_input(self):
        with pytest.raises(ParameterError):
            conversion_efficiency(60.0, 0.0, 25.0, 1.0)

    def test_negative_loss_constant_rejected(self):
        with pytest.raises(ParameterError):
            ConverterLossConstants(r_ds_on=-1.0)

    @pytest.mark.parametrize('v_pv', np.linspace(30.0, 75.0, 10))
    @pytest.mark.parametrize('i_pv', np.linspace(0.5, 9.0, 9))
    def test_power_balance_over_operating_grid(self, v_pv, i_pv):
        cfg = ControllerConfig()
        v_o = 25.0
        duty = v_o / v_pv
        i_o = buck_output_current(cfg, v_pv, i_pv, v_o, duty)
        losses = converter_losses(cfg, v_pv, i_pv, duty)
        if i_o > 0.0:
            assert v_pv * i_pv - v_o * i_o == pytest.approx(losses.total, abs=1e-6)
        else:
            assert losses.total >= v_pv * i_pv - 1e-6

    @given(
        constant=st.sampled_from(['r_ds_on', 'r_l', 'p_auto', 't_dead', 't_s', 't_d']),
        magnitude=st.floats(min_value=1.0, max_value=1e3),
    )
    @settings(max_examples=60, deadline=None)
    def test_any_positive_loss_constant_lowers_efficiency(self, constant, magnitude):
        scale = {'r_ds_on': 1e-4, 'r_l': 1e-4, 'p_auto': 1e-2, 't_dead': 1e-9, 't_s': 1e-9, 't_d': 1e-9}
        values = dict.fromkeys(('r_ds_on', 'r_l', 't_dead', 't_s', 't_d', 'p_auto'), 0.0)
        values[constant] = scale[constant] * magnitude
        cfg = ControllerConfig(losses=ConverterLossConstants(f_sw=50e3, **values))
        v_pv, i_pv, v_o = 60.0, 5.0, 25.0
        i_o = buck_output_current(cfg, v_pv, i_pv, v_o, v_o / v_pv)
        assert conversion_efficiency(v_pv, i_pv, v_o, i_o) < 1.0


class TestSettings:

    def test_presets(self):
        assert controller_preset('table-2.4-vrla-24').v_rec == 24.8
        assert controller_preset('gedae-configured').v_flt == 26.4
        assert controller_preset('low-reconnect').v_rec == 24.2

    def test_short_alias_names_default_preset(self):
        assert controller_preset('vrla-24') == controller_preset('table-2.4-vrla-24')

    def test_preset_overrides(self):
        assert controller_preset('table-2.4-vrla-24', v_desc=23.0).v_desc == 23.0

    def test_unknown_preset(self):
        with pytest.raises(ParameterError):
            controller_preset('nope')

    def test_threshold_ordering_enforced(self):
        with pytest.raises(ParameterError):
            ControllerConfig(v_desc=25.0, v_rec=24.0)


class TestStageMachine:

    def test_night_without_pv(self):
        state = ControllerState(stage=ChargeStage.FLOAT)
        assert step_stage(ControllerConfig(), state, 26.0, False, 1.0).stage == ChargeStage.NIGHT

    def test_sunrise_starts_bulk(self):
        state = step_stage(ControllerConfig(), ControllerState(), 25.0, True, 1.0)
        assert state.stage == ChargeStage.BULK
        assert state.absorb_elapsed == 0.0

    def test_bulk_to_absorption_at_setpoint(self):
        cfg = ControllerConfig()
        state = ControllerState(stage=ChargeStage.BULK)
        assert step_stage(cfg, state, 28.0, True, 1.0).stage == ChargeStage.BULK
        assert step_stage(cfg, state, cfg.v_abs, True, 1.0).stage == ChargeStage.ABSORPTION

    def test_absorption_times_out_to_float(self):
        cfg = ControllerConfig(absorb_duration=120.0)
        state = ControllerState(stage=ChargeStage.ABSORPTION)
        state = step_stage(cfg, state, cfg.v_abs, True, 60.0)
        assert state.stage == ChargeStage.ABSORPTION
        assert state.absorb_elapsed == 60.0
        state = step_stage(cfg, state, cfg.v_abs, True, 60.0)
        assert state.stage == ChargeStage.FLOAT

    def test_lost_setpoint_returns_to_bulk(self):
        state = ControllerState(stage=ChargeStage.FLOAT)
        assert step_stage(ControllerConfig(), state, 26.0, True, 1.0, setpoint_held=False).stage == ChargeStage.BULK

    def test_entering_absorption_restarts_timer(self):
        cfg = ControllerConfig()
        state = ControllerState(stage=ChargeStage.BULK, absorb_elapsed=cfg.absorb_duration)
        state = step_stage(cfg, state, cfg.v_abs + 0.01, True, 1.0)
        assert state.stage == ChargeStage.ABSORPTION
        assert state.absorb_elapsed == 0.0
        state = step_stage(cfg, state, cfg.v_abs, True, 1.0)
        assert state.stage == ChargeStage.ABSORPTION
        assert state.absorb_elapsed == 1.0


class TestLoadDisconnect:

    def test_hysteresis(self):
        cfg = ControllerConfig()
        state = ControllerState()
        state = lvd_hysteresis(cfg, state, cfg.v_desc)
        assert not state.load_connected
        state = lvd_hysteresis(cfg, state, 0.5 * (cfg.v_desc + cfg.v_rec))
        assert not state.load_connected
        state = lvd_hysteresis(cfg, state, cfg.v_rec)
        assert state.load_connected

    def test_overcurrent_trip_holds_output_open(self):
        cfg = ControllerConfig()
        state = trip_load(cfg, ControllerState())
        assert not state.load_connected
        assert state.trip_remaining == cfg.overcurrent_retry
        assert not lvd_hysteresis(cfg, state, 27.0).load_connected

    def test_overcurrent_detected(self):
        with pytest.raises(OvercurrentError):
            check_load_current(ControllerConfig(), 25.0)
        check_load_current(ControllerConfig(), 19.9)

    @pytest.mark.parametrize('cycles', [1, 3])
    def test_voltage_sweep_toggles_twice_per_cycle(self, cycles):
        cfg = ControllerConfig()
        down = np.linspace(26.0, 22.0, 401)
        sweep = np.tile(np.concatenate([down, down[::-1]]), cycles)
        state = ControllerState()
        toggles = 0
        for v in sweep:
            updated = lvd_hysteresis(cfg, state, float(v))
            toggles += updated.load_connected != state.load_connected
            state = updated
        assert toggles == 2 * cycles
        assert state.load_connected


class TestGssStep:

    def test_night_battery_feeds_grid(self, lossless_controller, battery_params, pv_array):
        battery = BatteryState.initial(battery_params, 0.8)
        result = gss_step(lossless_controller, ControllerState(), battery_params, battery, pv_array,
                          OperatingEnvironment(irradiance=0.0), 5.0, 60.0)
        assert result.point.i_bat == pytest.approx(-5.0, abs=1e-8)
        assert result.point.p_pv == 0.0
        assert result.battery.soc < battery.soc
        assert result.controller.stage == ChargeStage.NIGHT

    def test_self_consumption_drawn_from_battery(self, battery_params, pv_array):
        battery = BatteryState.initial(battery_params, 0.8)
        result = gss_step(ControllerConfig(), ControllerState(), battery_params, battery, pv_array,
                          OperatingEnvironment(irradiance=0.0), 5.0, 60.0)
        expected = -5.0 - ControllerConfig().losses.p_auto / result.point.v_bat
        assert result.point.i_bat == pytest.approx(expected, abs=1e-8)

    def test_bulk_charging_conserves_power_when_lossless(self, lossless_controller, battery_params, pv_array):
        battery = BatteryState.initial(battery_params, 0.5)
        state = ControllerState(stage=ChargeStage.BULK)
        result = gss_step(lossless_controller, state, battery_params, battery, pv_array,
                          OperatingEnvironment(irradiance=500.0, ambient_temp=25.0), 0.0, 1.0)
        point = result.point
        assert point.converting
        assert 0.0 < point.i_bat <= lossless_controller.i_charge_max
        assert point.p_battery == pytest.approx(point.p_pv, rel=1e-6)
        assert result.battery.soc > battery.soc

    def test_charge_current_is_clamped(self, battery_params, pv_array):
        cfg = ControllerConfig(i_charge_max=5.0, losses=ConverterLossConstants.lossless())
        battery = BatteryState.initial(battery_params, 0.5)
        state = ControllerState(stage=ChargeStage.BULK)
        result = gss_step(cfg, state, battery_params, battery, pv_array,
                          OperatingEnvironment(irradiance=1000.0, ambient_temp=25.0), 0.0, 1.0)
        assert result.point.i_bat == pytest.approx(5.0, abs=1e-3)

    def test_batteryless_exports_pv_power(self, lossless_controller, pv_array):
        state = ControllerState(stage=ChargeStage.BULK)
        result = gss_step(lossless_controller, state, None, None, pv_array,
                          OperatingEnvironment(irradiance=800.0), 0.0, 1.0, node_voltage=24.0)
        point = result.point
        assert result.battery is None
        assert point.grid_current == pytest.approx(point.i_out)
        assert point.grid_current > 0.0
        assert 24.0 * point.i_out == pytest.approx(point.p_pv, rel=1e-9)

    def test_overcurrent_raises(self, battery_params, pv_array):
        battery = BatteryState.initial(battery_params, 0.8)
        with pytest.raises(OvercurrentError):
            gss_step(ControllerConfig(), ControllerState(), battery_params, battery, pv_array,
                     OperatingEnvironment(irradiance=0.0), 25.0, 1.0)

    def test_disconnected_output_carries_no_current(self, lossless_controller, battery_params, pv_array):
        battery = BatteryState.initial(battery_params, 0.8)
        state = ControllerState(load_connected=False)
        result = gss_step(lossless_controller, state, battery_params, battery, pv_array,
                          OperatingEnvironment(irradiance=0.0), 5.0, 1.0)
        assert result.point.grid_current == 0.0
        assert result.point.i_bat == pytest.approx(0.0, abs=1e-8)
        v_rest = open_circuit_estimate(battery_params, battery)
        assert result.point.v_bat == pytest.approx(v_rest, abs=1e-6)

    @pytest.mark.parametrize('stage, irradiance, soc', [
        (ChargeStage.NIGHT, 0.0, 0.8),
        (ChargeStage.BULK, 500.0, 0.5),
        (ChargeStage.ABSORPTION, 900.0, 0.97),
        (ChargeStage.FLOAT, 900.0, 0.99),
    ])
    @pytest.mark.parametrize('grid_current', [-2.0, 0.0, 4.0])
    def test_terminal_voltage_matches_operating_point(self, battery_params, pv_array, stage, irradiance, soc,
                                                       grid_current):
        cfg = ControllerConfig()
        battery = BatteryState.initial(battery_params, soc)
        state = ControllerState(stage=stage)
        env = OperatingEnvironment(irradiance=irradiance, ambient_temp=25.0)
        point = evaluate_gss(cfg, state, battery_params, battery, pv_array, env, grid_current)
        v_bat = gss_terminal_voltage(cfg, state, battery_params, battery, pv_array, env, grid_current)
        assert v_bat == pytest.approx(point.v_bat, abs=1e-5)

    def test_pv_limits_shared_between_equal_conditions(self, pv_array):
        first = pv_limits(pv_array, OperatingEnvironment(irradiance=600.0, ambient_temp=25.0))
        again = pv_limits(pv_array, OperatingEnvironment(irradiance=600.0, ambient_temp=25.0))
        assert again is first
        assert first.v_mp < first.v_oc
