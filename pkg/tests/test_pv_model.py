"""
Тесты однодиодной модели фотогенератора
"""

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from base.errors import ParameterError
from models.pv_model import (
    YINGLI_YL245P,
    OperatingEnvironment,
    PvArrayConfig,
    cell_temperature,
    deviation_metrics,
    extract_resistances,
    iv_curve,
    iv_current,
    mpp,
    mpp_voltage_estimate,
    open_circuit_voltage,
    photocurrent,
    short_circuit_current,
    with_extracted_resistances,
)


class TestOperatingConditions:

    def test_noct_cell_temperature(self):
        env = OperatingEnvironment(irradiance=800.0, ambient_temp=20.0)
        assert cell_temperature(env, 46.0) == pytest.approx(46.0)

    def test_hot_day_cell_temperature(self):
        env = OperatingEnvironment(irradiance=1000.0, ambient_temp=30.0)
        assert cell_temperature(env, 46.0) == pytest.approx(62.5)

    @given(irradiance=st.floats(min_value=0.0, max_value=1400.0))
    @settings(max_examples=50, deadline=None)
    def test_photocurrent_linear_in_irradiance_at_reference_temperature(self, pv_array, irradiance):
        env = OperatingEnvironment(irradiance=irradiance, cell_temp=25.0)
        expected = irradiance / 1000.0 * pv_array.module.i_sc_stc
        assert photocurrent(pv_array.module, env) == pytest.approx(expected, rel=1e-12, abs=1e-12)

    def test_explicit_cell_temperature_overrides_noct(self, pv_array):
        env = OperatingEnvironment(irradiance=1000.0, ambient_temp=40.0, cell_temp=25.0)
        assert photocurrent(pv_array.module, env) == pytest.approx(pv_array.module.i_sc_stc)

    def test_no_photocurrent_at_night(self, pv_array):
        assert photocurrent(pv_array.module, OperatingEnvironment(irradiance=0.0)) == 0.0
        assert open_circuit_voltage(pv_array, OperatingEnvironment(irradiance=0.0)) == 0.0

    def test_negative_irradiance_rejected(self):
        with pytest.raises(ParameterError):
            OperatingEnvironment(irradiance=-1.0)


class TestModuleParams:

    def test_vmp_above_voc_rejected(self):
        with pytest.raises(ParameterError):
            replace(YINGLI_YL245P, v_mp_stc=40.0)

    def test_degenerate_datasheet_rejected(self):
        with pytest.raises(ParameterError):
            replace(YINGLI_YL245P, v_mp_stc=YINGLI_YL245P.v_oc_stc)

    def test_ideality_out_of_range_rejected(self):
        with pytest.raises(ParameterError):
            replace(YINGLI_YL245P, ideality=2.5)

    def test_array_needs_a_module(self):
        with pytest.raises(ParameterError):
            PvArrayConfig(YINGLI_YL245P, n_modules_series=0)


class TestIvCharacteristic:

    def test_short_circuit_current_close_to_photocurrent(self, pv_array):
        env = OperatingEnvironment.stc()
        i_sc = short_circuit_current(pv_array, env)
        assert i_sc == pytest.approx(pv_array.module.i_sc_stc, rel=1e-2)
        assert i_sc <= photocurrent(pv_array.module, env)

    def test_current_vanishes_at_open_circuit(self, pv_array):
        env = OperatingEnvironment(irradiance=700.0, ambient_temp=30.0)
        v_oc = open_circuit_voltage(pv_array, env)
        assert abs(iv_current(pv_array, v_oc, env)) < 1e-6

    def test_series_modules_add_voltage(self, pv_array):
        env = OperatingEnvironment.stc()
        single = PvArrayConfig(pv_array.module, 1)
        assert open_circuit_voltage(pv_array, env) == pytest.approx(2.0 * open_circuit_voltage(single, env),
                                                                    rel=1e-6)

    def test_array_evaluation_matches_scalar(self, pv_array):
        env = OperatingEnvironment.stc()
        voltages = np.array([0.0, 20.0, 50.0, 70.0])
        vector = iv_current(pv_array, voltages, env)
        scalar = [iv_current(pv_array, float(v), env) for v in voltages]
        np.testing.assert_allclose(vector, scalar, rtol=1e-7, atol=1e-8)

    def test_reverse_bias_rejected(self, pv_array):
        with pytest.raises(ParameterError):
            iv_current(pv_array, -1.0, OperatingEnvironment.stc())

    def test_mpp_not_beaten_by_sweep(self, pv_array):
        env = OperatingEnvironment(irradiance=850.0, ambient_temp=28.0)
        v_mp, i_mp, p_mp = mpp(pv_array, env)
        curve = iv_curve(pv_array, env, n_points=400)
        assert p_mp >= curve['p'].max() - 1e-6
        assert v_mp * i_mp == pytest.approx(p_mp)

    def test_mpp_undefined_at_night(self, pv_array):
        with pytest.raises(ParameterError):
            mpp(pv_array, OperatingEnvironment(irradiance=0.0))

    def test_vmp_estimate_at_stc(self, pv_array):
        estimate = mpp_voltage_estimate(pv_array, OperatingEnvironment.stc())
        assert estimate == pytest.approx(pv_array.n_modules_series * pv_array.module.v_mp_stc)
        assert mpp_voltage_estimate(pv_array, OperatingEnvironment(irradiance=500.0, cell_temp=25.0)) < estimate

    def test_vmp_estimate_on_hot_module(self):
        env = OperatingEnvironment(irradiance=1000.0, cell_temp=50.0)
        estimate = mpp_voltage_estimate(PvArrayConfig(YINGLI_YL245P), env)
        assert estimate == pytest.approx(29.22 * (1.0 - 0.0045 * 25.0))
        assert estimate == pytest.approx(25.93, abs=5e-3)

    @given(
        irradiance=st.floats(min_value=50.0, max_value=1200.0),
        ambient=st.floats(min_value=-5.0, max_value=45.0),
    )
    @settings(max_examples=25, deadline=None)
    def test_current_non_increasing_in_voltage(self, pv_array, irradiance, ambient):
        env = OperatingEnvironment(irradiance=irradiance, ambient_temp=ambient)
        currents = iv_curve(pv_array, env, n_points=60)['i'].to_numpy()
        assert np.all(np.diff(currents) <= 1e-9)


class TestDeviationMetrics:

    def test_identical_points_have_no_deviation(self):
        point = (74.4, 8.76, 58.4, 476.5)
        assert deviation_metrics(point, point) == (0.0, 0.0, 0.0)

    def test_mpp_deviation_combines_power_and_voltage(self):
        d_oc, d_sc, d_mp = deviation_metrics((1.0, 1.0, 1.03, 1.04), (1.0, 1.0, 1.0, 1.0))
        assert d_mp == pytest.approx(0.05)

    def test_zero_measurement_rejected(self):
        with pytest.raises(ParameterError):
            deviation_metrics((1.0, 1.0, 1.0, 1.0), (0.0, 1.0, 1.0, 1.0))

    def test_stc_validation_deviations(self):
        measured = (37.21, 8.76, 29.22, 238.25)
        model = (37.21 * 1.001367, 8.76 * (1.0 - 0.000274), 29.22, 238.25 * 1.040596)
        d_oc, d_sc, d_mp = deviation_metrics(model, measured)
        assert 100.0 * d_oc == pytest.approx(0.1367, abs=1e-6)
        assert 100.0 * d_sc == pytest.approx(0.0274, abs=1e-6)
        assert 100.0 * d_mp == pytest.approx(4.0596, abs=1e-6)

    def test_real_sun_deviations(self):
        power_error = 0.03
        voltage_error = math.sqrt(0.030819 ** 2 - power_error ** 2)
        model = (1.0 - 0.006173, 1.067539, 1.0 + voltage_error, 1.0 - power_error)
        d_oc, d_sc, d_mp = deviation_metrics(model, (1.0, 1.0, 1.0, 1.0))
        assert 100.0 * d_oc == pytest.approx(0.6173, abs=1e-6)
        assert 100.0 * d_sc == pytest.approx(6.7539, abs=1e-6)
        assert 100.0 * d_mp == pytest.approx(3.0819, abs=1e-6)


@pytest.mark.slow
class TestResistanceExtraction:

    def test_extracted_model_reproduces_rated_power(self):
        module = with_extracted_resistances(YINGLI_YL245P)
        assert module.r_s > 0
        assert module.r_p > 0
        _, _, p_mp = mpp(PvArrayConfig(module), OperatingEnvironment.stc())
        assert p_mp == pytest.approx(YINGLI_YL245P.p_mp_stc, abs=0.01)

    def test_recovers_known_series_resistance(self):
        r_s_true, r_p_true = 0.25, 200.0
        reference = replace(YINGLI_YL245P, r_s=r_s_true, r_p=r_p_true)
        v_mp, i_mp, _ = mpp(PvArrayConfig(reference), OperatingEnvironment.stc())
        datasheet = replace(YINGLI_YL245P, v_mp_stc=v_mp, i_mp_stc=i_mp, p_mp_stc=v_mp * i_mp)
        r_s, r_p = extract_resistances(datasheet, tolerance=1e-5)
        assert r_s == pytest.approx(r_s_true, abs=0.01)
        assert r_p > 0
