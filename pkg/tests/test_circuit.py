"""Circuit assembly and RHS fidelity tests.

The central oracle: an independent transcription of the four-state
two-channel neuron equations, compared against the packed kernel RHS at
random states.
"""

import math

import numpy as np
import pytest

from mottneuron import analysis, solver, stimulus
from mottneuron.circuit import (
    CircuitState,
    NeuronCircuit,
    assemble,
    load_line_check,
    resting_state,
    supply_power,
)
from mottneuron.device import (
    U_FLOOR,
    VO2_TABLE2,
    DeviceGeometry,
    channel_resistance,
    enthalpy_derivative,
    thermal_conductance,
)
from mottneuron.errors import ConfigurationError, ConvergenceError

BARE = (VO2_TABLE2, DeviceGeometry())  # r_e = 0, no shunt
PARASITIC = (VO2_TABLE2, DeviceGeometry(r_e=150.0, r_shunt=13e3))


def bare_tonic(c1=5e-9, c2=2e-9, e=1.5, rl=5e3):
    return NeuronCircuit(topology="tonic", rl1=rl, rl2=rl, c1=c1, c2=c2,
                         e1=e, e2=e, dev1=BARE, dev2=BARE)


def table_tonic(c1=5e-9, c2=2e-9, e=1.5, rl=5e3, stray=1e-9):
    return NeuronCircuit(topology="tonic", rl1=rl, rl2=rl, c1=c1, c2=c2,
                         e1=e, e2=e, dev1=PARASITIC, dev2=PARASITIC,
                         c_stray=stray)


def two_channel_oracle(y, current, circ):
    """Independent transcription of the two-stage neuron ODEs.

    Valid for the bare device (no series/parallel parasitics) in current
    clamp with no stray capacitance.
    """
    u1, u2, v_na, v_k = y
    mat, geo = circ.dev1
    r1 = channel_resistance(u1, mat, geo)
    r2 = channel_resistance(u2, mat, geo)
    rl2 = circ.rl2
    dv_na = (current - (1 / rl2 + 1 / r1) * v_na + v_k / rl2
             - circ.e1 / r1) / circ.c1
    dv_k = (v_na / rl2 - (1 / rl2 + 1 / r2) * v_k
            + circ.e2 / r2) / circ.c2
    du1 = ((v_na + circ.e1) ** 2 / r1
           - thermal_conductance(u1, mat, geo) * mat.dT) \
        / enthalpy_derivative(u1, mat, geo)
    du2 = ((v_k - circ.e2) ** 2 / r2
           - thermal_conductance(u2, mat, geo) * mat.dT) \
        / enthalpy_derivative(u2, mat, geo)
    return np.array([du1, du2, dv_na, dv_k])


class TestRhsFidelity:
    def test_matches_independent_transcription(self):
        circ = bare_tonic()
        system = assemble(circ, "current")
        rng = np.random.default_rng(7)
        for _ in range(100):
            y = np.array([
                rng.uniform(2 * U_FLOOR, 0.99),
                rng.uniform(2 * U_FLOOR, 0.99),
                rng.uniform(-2.0, 2.0),
                rng.uniform(-2.0, 2.0),
                0.0,
            ])
            current = rng.uniform(-1e-4, 3e-4)
            got = system.rhs(y, current)
            want = two_channel_oracle(y[:4], current, circ)
            np.testing.assert_allclose(got[:4], want, rtol=1e-12, atol=0)

    def test_capacitance_scaling(self):
        a = assemble(bare_tonic(c1=5e-9, c2=2e-9), "current")
        b = assemble(bare_tonic(c1=10e-9, c2=4e-9), "current")
        y = np.array([0.01, 0.02, -0.3, 0.4, 0.0])
        da = a.rhs(y, 5e-5)
        db = b.rhs(y, 5e-5)
        assert db[2] == pytest.approx(da[2] / 2, rel=1e-12)
        assert db[3] == pytest.approx(da[3] / 2, rel=1e-12)
        np.testing.assert_allclose(db[:2], da[:2], rtol=1e-12)

    def test_cooling_at_zero_branch_current(self):
        system = assemble(bare_tonic(), "current")
        # v_na = -e1 puts zero volts across device 1
        y = np.array([0.3, 0.3, -1.5, 0.0, 0.0])
        dy = system.rhs(y, 0.0)
        assert dy[0] < 0

    def test_kcl_at_central_node(self):
        """d(C1 v_na)/dt + d(C2 v_k)/dt + i1 + i2 = I at random states."""
        circ = bare_tonic()
        system = assemble(circ, "current")
        rng = np.random.default_rng(3)
        for _ in range(50):
            y = np.array([rng.uniform(1e-3, 0.9), rng.uniform(1e-3, 0.9),
                          rng.uniform(-1.6, 1.0), rng.uniform(-1.0, 1.6),
                          0.0])
            current = rng.uniform(-1e-4, 2e-4)
            dy = system.rhs(y, current)
            i1, i2 = system.branch_currents(y)
            resid = circ.c1 * dy[2] + circ.c2 * dy[3] + i1 + i2 - current
            assert abs(resid) < 1e-9 * max(abs(current), 1e-6)

    def test_nonfinite_state_raises(self):
        system = assemble(bare_tonic(), "current")
        from mottneuron.errors import NumericalError
        with pytest.raises(NumericalError):
            system.rhs(np.array([0.5, 0.5, np.nan, 0.0, 0.0]), 0.0)


class TestRestingState:
    def test_table_row_resting_window(self):
        rest = resting_state(table_tonic())
        assert 0.2 <= rest.v_k <= 0.3
        assert rest.v_na == pytest.approx(-rest.v_k, rel=0.05)
        assert rest.u1 < 0.01 and rest.u2 < 0.01

    def test_fixed_point(self):
        circ = table_tonic()
        system = assemble(circ, "current")
        rest = resting_state(circ)
        dy = system.rhs(rest, 0.0)
        # voltage drift < 1 mV over a 1 ms horizon
        assert abs(dy[2]) < 1.0 and abs(dy[3]) < 1.0

    def test_series_leakage_currents_equal(self):
        circ = table_tonic()
        system = assemble(circ, "current")
        rest = resting_state(circ)
        i1, i2 = system.branch_currents(rest)
        assert i1 == pytest.approx(-i2, rel=1e-3)

    def test_unpowered_circuit(self):
        circ = NeuronCircuit(topology="tonic", rl1=5e3, rl2=5e3, c1=5e-9,
                             c2=2e-9, e1=0.0, e2=0.0, dev1=BARE, dev2=BARE)
        rest = resting_state(circ)
        assert abs(rest.v_na) < 1e-6 and abs(rest.v_k) < 1e-6
        system = assemble(circ, "current")
        assert supply_power(system, rest) == pytest.approx(0.0, abs=1e-15)

    def test_supply_power_matches_dc_analysis(self):
        circ = table_tonic()
        system = assemble(circ, "current")
        rest = resting_state(circ)
        got = supply_power(system, rest)
        # DC nodal oracle: series leakage path at the relaxed device states
        mat, geo = circ.dev1

        def branch_res(u):
            rch = channel_resistance(u, mat, geo)
            rp = rch * geo.r_shunt / (rch + geo.r_shunt)
            return geo.r_e + rp

        rb1 = branch_res(rest.u1)
        rb2 = branch_res(rest.u2)
        i_leak = (circ.e1 + circ.e2) / (rb1 + circ.rl2 + rb2)
        assert got == pytest.approx((circ.e1 + circ.e2) * i_leak, rel=1e-3)


class TestTopologyValidation:
    def test_phasic_requires_voltage(self):
        circ = NeuronCircuit(topology="phasic", rl2=7e3, c1=1e-9, c2=2e-9,
                             cin=0.3e-9, e1=1.6, e2=1.6, dev1=BARE)
        with pytest.raises(ConfigurationError, match="voltage"):
            assemble(circ, "current")

    def test_phasic_rejects_rl1(self):
        with pytest.raises(ConfigurationError):
            NeuronCircuit(topology="phasic", rl1=5e3, rl2=7e3, c1=1e-9,
                          c2=2e-9, cin=0.3e-9, e1=1.6, e2=1.6, dev1=BARE)

    def test_tonic_requires_rl1(self):
        with pytest.raises(ConfigurationError):
            NeuronCircuit(topology="tonic", rl2=7e3, c1=1e-9, c2=2e-9,
                          e1=1.6, e2=1.6, dev1=BARE)

    def test_mixed_requires_both(self):
        with pytest.raises(ConfigurationError):
            NeuronCircuit(topology="mixed", rl1=5e3, rl2=7e3, c1=1e-9,
                          c2=2e-9, e1=1.6, e2=1.6, dev1=BARE)

    def test_capacitance_positivity(self):
        with pytest.raises(ConfigurationError):
            NeuronCircuit(topology="tonic", rl1=5e3, rl2=5e3, c1=0.0,
                          c2=2e-9, e1=1.5, e2=1.5, dev1=BARE)

    def test_unknown_topology(self):
        with pytest.raises(ConfigurationError):
            NeuronCircuit(topology="ring", rl1=1, rl2=1, c1=1, c2=1,
                          e1=1, e2=1, dev1=BARE)


class TestChargeBookkeeping:
    def test_charges_recoverable(self):
        circ = table_tonic()
        system = assemble(circ, "current")
        state = CircuitState(u1=0.01, u2=0.01, v_na=-0.3, v_k=0.25)
        q1, q2 = system.charges(state)
        assert q1 == pytest.approx(circ.c1_total * -0.3, rel=1e-15)
        assert q2 == pytest.approx(circ.c2_total * 0.25, rel=1e-15)


class TestLoadLine:
    PA_DEV = (VO2_TABLE2, DeviceGeometry(r_e=370.0, r_shunt=15e3))

    def pa(self, v_dc, rl):
        return NeuronCircuit(topology="pearson_anson", rl2=rl, c1=22e-12,
                             c2=0.0, e1=v_dc, e2=0.0, dev1=self.PA_DEV)

    def test_ndr_intersection_oscillates(self):
        circ = self.pa(3.0, 10e3)
        assert load_line_check(circ) is True
        with pytest.raises(ConvergenceError):
            resting_state(circ, mode="current", max_chunks=40)

    def test_subthreshold_is_stable(self):
        circ = self.pa(1.0, 10e3)
        assert load_line_check(circ) is False
        rest = resting_state(circ, mode="current")
        assert rest.u1 < 0.02

    def test_metallic_intersection_is_stable(self):
        circ = self.pa(3.0, 100.0)
        assert load_line_check(circ) is False
        rest = resting_state(circ, mode="current")
        assert rest.u1 > 0.5

    def test_wrong_topology_rejected(self):
        with pytest.raises(ConfigurationError):
            load_line_check(bare_tonic())


class TestTopologyReduction:
    """Mixed-mode limits: cin -> 0 reproduces tonic, rl1 -> inf phasic."""

    CFG = solver.SolverConfig(dense_interval=50e-9, min_step=1e-16)

    def _first_spike(self, circ, text, t_end):
        program = stimulus.parse_protocol(text)
        rest = resting_state(circ, mode=program.mode, cfg=self.CFG)
        trace = solver.integrate(circ, program, t_end, self.CFG,
                                 initial_state=rest)
        train = analysis.detect_spikes(trace)
        return train.times[0] if len(train) else None

    def test_small_cin_approaches_tonic(self):
        text = "pulse t0=50us width=40us amp=0.9V t1=400us"
        tonic = NeuronCircuit(topology="tonic", rl1=6e3, rl2=6e3, c1=2e-9,
                              c2=2e-9, e1=1.4, e2=1.4, dev1=PARASITIC,
                              dev2=PARASITIC, c_stray=1e-9)
        mixed = NeuronCircuit(topology="mixed", rl1=6e3, rl2=6e3, c1=2e-9,
                              c2=2e-9, cin=1e-13, e1=1.4, e2=1.4,
                              dev1=PARASITIC, dev2=PARASITIC, c_stray=1e-9,
                              r_src=1.0)
        t_tonic = self._first_spike(tonic, text, 400e-6)
        t_mixed = self._first_spike(mixed, text, 400e-6)
        assert t_tonic is not None and t_mixed is not None
        assert abs(t_mixed - t_tonic) / t_tonic < 0.01

    def test_large_rl1_approaches_phasic(self):
        text = "dc t0=50us t1=500us amp=1.2V"
        phasic = NeuronCircuit(topology="phasic", rl2=7e3, c1=1e-9, c2=2e-9,
                               cin=0.3e-9, e1=1.6, e2=1.6, dev1=PARASITIC,
                               dev2=PARASITIC, c_stray=1e-9)
        mixed = NeuronCircuit(topology="mixed", rl1=1e9, rl2=7e3, c1=1e-9,
                              c2=2e-9, cin=0.3e-9, e1=1.6, e2=1.6,
                              dev1=PARASITIC, dev2=PARASITIC, c_stray=1e-9)
        t_phasic = self._first_spike(phasic, text, 500e-6)
        t_mixed = self._first_spike(mixed, text, 500e-6)
        assert t_phasic is not None and t_mixed is not None
        assert abs(t_mixed - t_phasic) / t_phasic < 0.01
