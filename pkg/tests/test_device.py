"""Device-model tests: closed-form limits, hand-evaluated oracles, sweeps."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mottneuron import device, kernels
from mottneuron.device import (
    U_CEIL,
    U_FLOOR,
    VO2_TABLE1,
    VO2_TABLE2,
    DeviceGeometry,
    MaterialParams,
    channel_resistance,
    enthalpy_derivative,
    material_preset,
    quasi_static_iv,
    state_derivative,
    thermal_conductance,
    threshold_voltage,
    threshold_voltage_from_s_curve,
    transition_energy,
)
from mottneuron.errors import DomainError

GEO = DeviceGeometry()  # 56 nm radius, 100 nm length, no parasitics


def resistance_oracle(u, mat, geo):
    # independent transcription of the resistance law
    r_insulating = mat.rho_ins * geo.l_ch / (math.pi * geo.r_ch ** 2)
    return r_insulating * (1.0 + (mat.rho_ins / mat.rho_met - 1.0) * u ** 2) ** -1


def enthalpy_oracle(u, mat, geo):
    # independent transcription of the enthalpy-slope law
    first = mat.cp * mat.dT * (1 - u ** 2 + 2 * u ** 2 * math.log(u)) \
        / (2 * u * math.log(u) ** 2)
    second = 2 * mat.dh_tr * u
    return math.pi * geo.l_ch * geo.r_ch ** 2 * (first + second)


class TestChannelResistance:
    def test_floor_value(self):
        r = channel_resistance(U_FLOOR, VO2_TABLE2, GEO)
        assert r == pytest.approx(resistance_oracle(U_FLOOR, VO2_TABLE2, GEO))
        assert r == pytest.approx(101.5e3, rel=5e-3)

    def test_metallic_limit(self):
        r = channel_resistance(U_CEIL, VO2_TABLE2, GEO)
        r_met = VO2_TABLE2.rho_met * GEO.l_ch / (math.pi * GEO.r_ch ** 2)
        assert r == pytest.approx(r_met, rel=1e-3)
        assert r == pytest.approx(30.5, rel=1e-2)

    def test_resistivity_ratio(self):
        ratio = (channel_resistance(U_FLOOR, VO2_TABLE2, GEO)
                 / channel_resistance(U_CEIL, VO2_TABLE2, GEO))
        assert ratio == pytest.approx(VO2_TABLE2.rho_ins / VO2_TABLE2.rho_met,
                                      rel=1e-2)
        assert ratio == pytest.approx(3.33e3, rel=1e-2)

    def test_strictly_decreasing(self):
        u = np.linspace(U_FLOOR, U_CEIL, 2000)
        r = channel_resistance(u, VO2_TABLE2, GEO)
        assert np.all(np.diff(r) < 0)

    def test_domain_error(self):
        with pytest.raises(DomainError):
            channel_resistance(0.0, VO2_TABLE2, GEO)
        with pytest.raises(DomainError):
            channel_resistance(1.0, VO2_TABLE2, GEO)


class TestThermalConductance:
    def test_unit_log_point(self):
        # ln(1/u) == 1 at u = 1/e, so the value is exactly 2 pi L kappa
        g = thermal_conductance(1.0 / math.e, VO2_TABLE2, GEO)
        assert g == pytest.approx(2 * math.pi * GEO.l_ch * VO2_TABLE2.kappa,
                                  rel=1e-12)
        assert g == pytest.approx(2.199e-6, rel=1e-3)

    def test_half_value(self):
        g = thermal_conductance(0.5, VO2_TABLE2, GEO)
        oracle = 2 * math.pi * GEO.l_ch * VO2_TABLE2.kappa / math.log(2.0)
        assert g == pytest.approx(oracle)
        assert g == pytest.approx(3.173e-6, rel=1e-3)

    def test_floor_limit(self):
        g = thermal_conductance(U_FLOOR, VO2_TABLE2, GEO)
        assert 0 < g
        assert g == pytest.approx(
            2 * math.pi * GEO.l_ch * VO2_TABLE2.kappa / math.log(1e4), rel=1e-6)

    def test_strictly_increasing(self):
        u = np.linspace(U_FLOOR, U_CEIL, 2000)
        g = thermal_conductance(u, VO2_TABLE2, GEO)
        assert np.all(np.diff(g) > 0)

    def test_log_singularity_guard(self):
        with pytest.raises(DomainError):
            thermal_conductance(1.0, VO2_TABLE2, GEO)


class TestEnthalpyDerivative:
    def test_half_value(self):
        dh = enthalpy_derivative(0.5, VO2_TABLE2, GEO)
        assert dh == pytest.approx(enthalpy_oracle(0.5, VO2_TABLE2, GEO))
        assert dh == pytest.approx(3.49e-13, rel=1e-2)

    def test_positive_over_domain(self):
        u = np.linspace(U_FLOOR, U_CEIL, 10_000)
        assert np.all(enthalpy_derivative(u, VO2_TABLE2, GEO) > 0)

    def test_radius_scaling(self):
        big = DeviceGeometry(r_ch=2 * GEO.r_ch, l_ch=GEO.l_ch)
        for u in (0.01, 0.3, 0.9):
            assert enthalpy_derivative(u, VO2_TABLE2, big) == pytest.approx(
                4 * enthalpy_derivative(u, VO2_TABLE2, GEO), rel=1e-12)


class TestStateDerivative:
    def test_power_balance_equilibrium(self):
        u = 0.42
        q = thermal_conductance(u, VO2_TABLE2, GEO) * VO2_TABLE2.dT
        i_star = math.sqrt(q / channel_resistance(u, VO2_TABLE2, GEO))
        rate = state_derivative(u, i_star, VO2_TABLE2, GEO)
        scale = q / enthalpy_derivative(u, VO2_TABLE2, GEO)
        assert abs(rate) < 1e-9 * scale

    def test_pure_cooling(self):
        for u in (U_FLOOR, 0.01, 0.5, 0.99):
            assert state_derivative(u, 0.0, VO2_TABLE2, GEO) < 0

    def test_unique_sign_flip(self):
        # bisection oracle on the power-balance equation at fixed u
        u = 0.3

        def rate(i):
            return state_derivative(u, i, VO2_TABLE2, GEO)

        lo, hi = 0.0, 1.0
        assert rate(lo) < 0 and rate(hi) > 0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if rate(mid) > 0:
                hi = mid
            else:
                lo = mid
        i_star = 0.5 * (lo + hi)
        assert rate(0.99 * i_star) < 0 < rate(1.01 * i_star)
        # the possibility of any further flip is excluded by monotonicity in i
        grid = np.linspace(1.02 * i_star, 10 * i_star, 500)
        assert np.all(state_derivative(u, grid, VO2_TABLE2, GEO) > 0)


class TestTransitionEnergy:
    GEO_10 = DeviceGeometry(r_ch=10e-9, l_ch=10e-9)

    def test_vo2_femtojoule(self):
        e = transition_energy(VO2_TABLE1, self.GEO_10)
        volume = math.pi * (10e-9) ** 2 * 10e-9
        assert e == pytest.approx((3.3e6 * 40 + 2.35e8) * volume, rel=1e-12)
        assert e == pytest.approx(1.15e-15, rel=1e-2)

    def test_volumetric_totals(self):
        vo2 = transition_energy(VO2_TABLE1, self.GEO_10) / (
            math.pi * (10e-9) ** 2 * 10e-9)
        assert vo2 == pytest.approx(3.67e8, rel=1e-3)
        nbo2 = material_preset("nbo2-table1")
        total = nbo2.cp * nbo2.dT + nbo2.dh_tr
        assert total == pytest.approx(2.24e9, rel=1e-3)

    def test_material_ratio(self):
        nbo2 = material_preset("nbo2-table1")
        ratio = (transition_energy(nbo2, self.GEO_10)
                 / transition_energy(VO2_TABLE1, self.GEO_10))
        assert abs(ratio - 6.1) < 0.1

    def test_volume_scaling(self):
        doubled = DeviceGeometry(r_ch=20e-9, l_ch=10e-9)
        assert transition_energy(VO2_TABLE1, doubled) == pytest.approx(
            4 * transition_energy(VO2_TABLE1, self.GEO_10), rel=1e-12)


class TestQuasiStaticIV:
    def test_force_current_has_ndr(self):
        curve = quasi_static_iv(VO2_TABLE2, GEO, "force-current",
                                sweep=(0.0, 8e-3), resolution=2e-6)
        mask = curve.ndr_segment()
        # a contiguous run of negative-slope points
        runs = np.flatnonzero(mask)
        assert len(runs) > 10
        assert np.all(np.diff(runs[:10]) == 1)

    def test_pinched_at_origin(self):
        for mode in ("force-current", "force-voltage"):
            curve = quasi_static_iv(VO2_TABLE2, GEO, mode,
                                    sweep=(0.0, 1e-4 if mode == "force-current"
                                           else 0.05),
                                    resolution=1e-6 if mode == "force-current"
                                    else 1e-3)
            assert curve.voltage[0] == 0.0
            assert curve.current[0] == 0.0

    def test_force_current_single_valued(self):
        curve = quasi_static_iv(VO2_TABLE2, GEO, "force-current",
                                sweep=(0.0, 8e-3), resolution=4e-6)
        up_v = curve.voltage[:curve.n_up]
        down_v = curve.voltage[curve.n_up:][::-1]
        # bare device: up and down sweeps coincide (no hysteresis in force-I)
        np.testing.assert_allclose(down_v, up_v[:-1], rtol=2e-2, atol=1e-4)

    def test_force_voltage_hysteresis(self):
        curve = quasi_static_iv(VO2_TABLE2, GEO, "force-voltage")
        n = curve.n_up
        up_jump = np.flatnonzero(np.diff(curve.u[:n]) > 0.1)
        down_jump = np.flatnonzero(np.diff(curve.u[n:]) < -0.1)
        assert len(up_jump) and len(down_jump)
        v_up = curve.voltage[up_jump[0] + 1]
        v_down = curve.voltage[n + down_jump[0]]
        assert v_up > v_down + 0.05

    def test_power_balance_points_exist_in_ndr(self):
        # for currents in the NDR range a u* with du/dt = 0 exists
        u_grid = np.linspace(U_FLOOR, U_CEIL, 1000)
        for i in (1e-4, 5e-4, 1e-3, 3e-3):
            rates = state_derivative(u_grid, i, VO2_TABLE2, GEO)
            assert np.any(np.sign(rates[:-1]) != np.sign(rates[1:]))


class TestThresholdVoltage:
    def test_table2_device_range(self):
        vth = threshold_voltage(VO2_TABLE2, GEO)
        assert 0.4 <= vth <= 1.3

    def test_extraction_methods_agree(self):
        v_sweep = threshold_voltage(VO2_TABLE2, GEO)
        v_scurve = threshold_voltage_from_s_curve(VO2_TABLE2, GEO)
        assert v_sweep == pytest.approx(v_scurve, rel=2e-2)

    def test_monotone_in_radius(self):
        radii = [10e-9, 20e-9, 36e-9, 56e-9]
        vths = [threshold_voltage(VO2_TABLE2,
                                  DeviceGeometry(r_ch=r, l_ch=100e-9))
                for r in radii]
        # wider channels switch at lower voltage at fixed length
        assert all(a > b for a, b in zip(vths, vths[1:]))


class TestPresetsAndValidation:
    def test_table2_values(self):
        m = material_preset("vo2-table2")
        assert (m.cp, m.dh_tr, m.kappa) == (3.30e6, 2.35e8, 3.5)
        assert (m.rho_met, m.rho_ins, m.dT) == (3e-6, 1e-2, 43.0)

    def test_nbo2_values_and_warning(self):
        with pytest.warns(UserWarning, match="NbO2"):
            m = material_preset("nbo2-table1")
        assert (m.cp, m.dh_tr, m.dT) == (2.6e6, 1.6e8, 800.0)

    def test_unknown_preset(self):
        with pytest.raises(DomainError):
            material_preset("graphene")

    def test_invalid_material(self):
        with pytest.raises(DomainError):
            MaterialParams(cp=-1, dh_tr=1, kappa=1, rho_met=1e-6,
                           rho_ins=1e-2, dT=40)
        with pytest.raises(DomainError):
            MaterialParams(cp=1e6, dh_tr=1e8, kappa=3, rho_met=1e-2,
                           rho_ins=1e-6, dT=40)

    def test_invalid_geometry(self):
        with pytest.raises(DomainError):
            DeviceGeometry(r_ch=0.0)
        with pytest.raises(DomainError):
            DeviceGeometry(r_shunt=-5.0)


class TestKernelParity:
    """The jitted scalar kernels must match the public numpy implementations."""

    def test_device_functions(self):
        dev = device.pack_device(VO2_TABLE2, GEO)
        for u in np.geomspace(U_FLOOR, U_CEIL, 50):
            assert kernels.dev_resistance(u, dev) == pytest.approx(
                channel_resistance(u, VO2_TABLE2, GEO), rel=1e-14)
            assert kernels.dev_heat_loss(u, dev) == pytest.approx(
                thermal_conductance(u, VO2_TABLE2, GEO) * VO2_TABLE2.dT,
                rel=1e-14)
            assert kernels.dev_enthalpy_deriv(u, dev) == pytest.approx(
                enthalpy_derivative(u, VO2_TABLE2, GEO), rel=1e-14)

    def test_branch_with_parasitics(self):
        geo = DeviceGeometry(r_e=325.0, r_shunt=15e3)
        dev = device.pack_device(VO2_TABLE2, geo)
        u, vb = 0.2, 1.1
        rch = channel_resistance(u, VO2_TABLE2, geo)
        rp = rch * 15e3 / (rch + 15e3)
        ib, ich, pj, diss = kernels.dev_branch(vb, u, dev)
        assert ib == pytest.approx(vb / (325.0 + rp), rel=1e-12)
        assert ich == pytest.approx(ib * 15e3 / (rch + 15e3), rel=1e-12)
        assert pj == pytest.approx(ich ** 2 * rch, rel=1e-12)
        assert diss == pytest.approx(ib ** 2 * 325.0 + (ib * rp) ** 2 / 15e3 + pj,
                                     rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(u=st.floats(min_value=U_FLOOR, max_value=U_CEIL),
       scale=st.floats(min_value=0.5, max_value=2.0))
def test_property_monotone_pair(u, scale):
    """R_ch falls and Gamma_th rises when u grows by any factor (in range)."""
    u2 = min(max(u * scale, U_FLOOR), U_CEIL)
    lo, hi = min(u, u2), max(u, u2)
    if hi - lo < 1e-9 * lo:
        return
    assert channel_resistance(hi, VO2_TABLE2, GEO) < channel_resistance(
        lo, VO2_TABLE2, GEO)
    assert thermal_conductance(hi, VO2_TABLE2, GEO) > thermal_conductance(
        lo, VO2_TABLE2, GEO)
