"""Neuron circuit topologies assembled into explicit ODE systems.

The two-channel neuron couples a negatively biased device stage (membrane
potential v_na across C1) to a positively biased stage (v_k across C2, the
neuron output) through the load resistor R_L2. The input stage selects the
topology: resistive (tonic), capacitive (phasic), both in parallel (mixed),
or a single biased stage (pearson_anson relaxation oscillator).

State vector layout is fixed at [u1, u2, v_na, v_k, v_aux]; v_aux is the
input coupling capacitor voltage and only participates in topologies with
C_in. Voltage-clamp programs drive C_in through a small source resistance
r_src so that step edges transfer charge over a finite time.
"""

from dataclasses import dataclass

import numpy as np

from . import device, kernels
from .device import DeviceGeometry, MaterialParams
from .errors import ConfigurationError, ConvergenceError

TOPOLOGIES = ("tonic", "phasic", "mixed", "pearson_anson")

_TOPO_CODE = {
    "tonic": kernels.TOPO_TONIC,
    "phasic": kernels.TOPO_PHASIC,
    "mixed": kernels.TOPO_MIXED,
    "pearson_anson": kernels.TOPO_PEARSON_ANSON,
}

_WMASK = {
    "tonic": (1.0, 1.0, 1.0, 1.0, 0.0),
    "phasic": (1.0, 1.0, 1.0, 1.0, 1.0),
    "mixed": (1.0, 1.0, 1.0, 1.0, 1.0),
    "pearson_anson": (1.0, 0.0, 0.0, 1.0, 0.0),
}

STATE_NAMES = ("u1", "u2", "v_na", "v_k", "v_aux")


@dataclass(frozen=True)
class CircuitState:
    u1: float
    u2: float
    v_na: float
    v_k: float
    v_aux: float = 0.0

    def as_array(self):
        return np.array([self.u1, self.u2, self.v_na, self.v_k, self.v_aux])

    @classmethod
    def from_array(cls, y):
        return cls(u1=float(y[0]), u2=float(y[1]), v_na=float(y[2]),
                   v_k=float(y[3]), v_aux=float(y[4]))

    @property
    def q1(self):
        raise AttributeError("charge q1 = C1 * v_na needs the circuit; "
                             "use OdeSystem.charges")


@dataclass(frozen=True)
class NeuronCircuit:
    """Topology plus passive element values and DC bias magnitudes.

    dev1/dev2 are (MaterialParams, DeviceGeometry) pairs. c_stray is added to
    both membrane capacitors (cabling in the experimental setup). For the
    pearson_anson topology only rl2 (load resistor), c1, e1 and dev1 are
    used.
    """

    topology: str
    rl2: float
    c1: float
    c2: float
    e1: float
    e2: float
    dev1: tuple
    dev2: tuple | None = None
    rl1: float | None = None
    cin: float | None = None
    c_stray: float = 0.0
    r_src: float = 50.0

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ConfigurationError(
                f"unknown topology {self.topology!r}; one of {TOPOLOGIES}")
        if self.rl2 <= 0:
            raise ConfigurationError("rl2 must be > 0")
        if self.e1 < 0 or self.e2 < 0:
            raise ConfigurationError("bias magnitudes must be >= 0")
        if self.c_stray < 0:
            raise ConfigurationError("c_stray must be >= 0")
        if self.c1 + self.c_stray <= 0:
            raise ConfigurationError("c1 + c_stray must be > 0")
        if self.topology != "pearson_anson" and self.c2 + self.c_stray <= 0:
            raise ConfigurationError("c2 + c_stray must be > 0")
        if self.topology == "tonic":
            if self.cin is not None:
                raise ConfigurationError("tonic topology has no cin")
            if self.rl1 is None:
                raise ConfigurationError("tonic topology requires rl1")
            if self.rl1 < 0:
                raise ConfigurationError("rl1 must be >= 0")
        elif self.topology == "phasic":
            if self.rl1 is not None:
                raise ConfigurationError(
                    "phasic topology replaces rl1 with cin; leave rl1 unset")
            if not self.cin or self.cin <= 0:
                raise ConfigurationError("phasic topology requires cin > 0")
        elif self.topology == "mixed":
            if not self.rl1 or self.rl1 <= 0:
                raise ConfigurationError("mixed topology requires rl1 > 0")
            if not self.cin or self.cin <= 0:
                raise ConfigurationError("mixed topology requires cin > 0")
        else:  # pearson_anson
            if self.rl1 is not None or self.cin is not None:
                raise ConfigurationError(
                    "pearson_anson uses only rl2/c1/e1/dev1")
        if self.r_src <= 0:
            raise ConfigurationError("r_src must be > 0")

    @property
    def c1_total(self):
        return self.c1 + self.c_stray

    @property
    def c2_total(self):
        return self.c2 + self.c_stray


@dataclass(frozen=True)
class OdeSystem:
    """A packed, integrable description of one circuit in one clamp mode."""

    circuit: NeuronCircuit
    mode: str
    params: np.ndarray
    wmask: np.ndarray
    dim: int

    def rhs(self, state, input_value, t=0.0):
        """State derivatives at (state, input). Accepts CircuitState or array."""
        y = state.as_array() if isinstance(state, CircuitState) else \
            np.asarray(state, dtype=float)
        dy = np.empty(kernels.NDIM)
        kinds, segp = _const_input(input_value)
        kernels.circuit_rhs(float(t), y, self.params, kinds, segp, 0.0, dy)
        if not np.all(np.isfinite(dy)):
            from .errors import NumericalError
            raise NumericalError("non-finite derivative", t=t, state=y)
        return dy

    def rhs_with_powers(self, state, input_value, t=0.0):
        """(dy, p_supply, p_input, p_dissipated) for bookkeeping tests."""
        y = state.as_array() if isinstance(state, CircuitState) else \
            np.asarray(state, dtype=float)
        dy = np.empty(kernels.NDIM)
        kinds, segp = _const_input(input_value)
        powers = kernels.circuit_rhs(float(t), y, self.params, kinds, segp,
                                     0.0, dy)
        return dy, powers[0], powers[1], powers[2]

    def outputs(self, state, input_value, t=0.0):
        """(i1_channel, i2_channel, input, p_supply) at a state."""
        y = state.as_array() if isinstance(state, CircuitState) else \
            np.asarray(state, dtype=float)
        kinds, segp = _const_input(input_value)
        return kernels.trace_outputs(float(t), y, self.params, kinds, segp, 0.0)

    def branch_currents(self, state):
        """Currents entering each device branch from its membrane node."""
        y = state.as_array() if isinstance(state, CircuitState) else \
            np.asarray(state, dtype=float)
        P = self.params
        d1 = P[kernels.P_DEV1:kernels.P_DEV1 + kernels.DEV_LEN]
        d2 = P[kernels.P_DEV2:kernels.P_DEV2 + kernels.DEV_LEN]
        if self.circuit.topology == "pearson_anson":
            ib1 = kernels.dev_branch(y[3], y[0], d1)[0]
            return ib1, 0.0
        ib1 = kernels.dev_branch(y[2] + P[kernels.P_E1], y[0], d1)[0]
        ib2 = kernels.dev_branch(y[3] - P[kernels.P_E2], y[1], d2)[0]
        return ib1, ib2

    def charges(self, state):
        """(q1, q2) = (C1 * v_na, C2 * v_k), exactly recoverable."""
        y = state.as_array() if isinstance(state, CircuitState) else \
            np.asarray(state, dtype=float)
        return (self.circuit.c1_total * y[2], self.circuit.c2_total * y[3])

    def cap_energy(self, state):
        y = state.as_array() if isinstance(state, CircuitState) else \
            np.asarray(state, dtype=float)
        return kernels.cap_energy(y, self.params)

    def initial_state(self):
        """Cold start: both devices at the clamp floor, all nodes at 0 V."""
        y = np.zeros(kernels.NDIM)
        y[0] = self.params[kernels.P_DEV1 + kernels.D_UFLOOR]
        y[1] = self.params[kernels.P_DEV2 + kernels.D_UFLOOR]
        return y

    def _branch_res_insulating(self, which):
        off = kernels.P_DEV1 if which == 0 else kernels.P_DEV2
        dev = self.params[off:off + kernels.DEV_LEN]
        rch = kernels.dev_resistance(dev[kernels.D_UFLOOR], dev)
        rp = rch / (1.0 + rch * dev[kernels.D_GSH])
        return dev[kernels.D_RE] + rp

    def insulating_guess(self):
        """DC solution of the linear network with both devices insulating.

        The natural start for the resting relaxation: powering up from
        0 V everywhere throws the full bias across device 1 and can latch
        the circuit into its metallic fixed point.
        """
        y = self.initial_state()
        e1 = self.params[kernels.P_E1]
        e2 = self.params[kernels.P_E2]
        rb1 = self._branch_res_insulating(0)
        if self.circuit.topology == "pearson_anson":
            rl = 1.0 / self.params[kernels.P_GL2]
            y[3] = e1 * rb1 / (rl + rb1)
            return y
        rb2 = self._branch_res_insulating(1)
        rl2 = 1.0 / self.params[kernels.P_GL2]
        i_leak = (e1 + e2) / (rb1 + rl2 + rb2)
        y[2] = -e1 + i_leak * rb1
        y[3] = e2 - i_leak * rb2
        return y


def _const_input(value):
    kinds = np.array([kernels.SEG_DC], dtype=np.int64)
    segp = np.array([[-1e300, 1e300, float(value), 0.0, 0.0, 0.0]])
    return kinds, segp


def assemble(circuit, mode="current"):
    """Build the ODE system for a circuit under one clamp mode."""
    if mode not in ("current", "voltage"):
        raise ConfigurationError(f"clamp mode must be current or voltage, "
                                 f"got {mode!r}")
    topo = circuit.topology
    if topo == "phasic" and mode == "current":
        raise ConfigurationError(
            "phasic topology requires voltage-clamp stimulus: an ideal "
            "current source in series with cin has no bounded steady state")
    if topo == "pearson_anson" and mode == "voltage":
        raise ConfigurationError(
            "pearson_anson supports current-clamp input only")
    if topo == "tonic" and mode == "voltage" and not circuit.rl1:
        raise ConfigurationError(
            "tonic voltage clamp requires rl1 > 0 (rl1 = 0 would clamp the "
            "membrane node directly)")

    P = np.zeros(kernels.P_LEN)
    P[kernels.P_TOPO] = _TOPO_CODE[topo]
    P[kernels.P_MODE] = 0.0 if mode == "current" else 1.0
    P[kernels.P_GL1] = (1.0 / circuit.rl1) if circuit.rl1 else 0.0
    P[kernels.P_GL2] = 1.0 / circuit.rl2
    P[kernels.P_C1] = circuit.c1_total
    P[kernels.P_C2] = circuit.c2_total if topo != "pearson_anson" else 1.0
    P[kernels.P_CIN] = circuit.cin or 0.0
    P[kernels.P_E1] = circuit.e1
    P[kernels.P_E2] = circuit.e2
    P[kernels.P_RSRC] = circuit.r_src

    mat1, geo1 = circuit.dev1
    P[kernels.P_DEV1:kernels.P_DEV1 + kernels.DEV_LEN] = \
        device.pack_device(mat1, geo1)
    mat2, geo2 = circuit.dev2 if circuit.dev2 is not None else circuit.dev1
    P[kernels.P_DEV2:kernels.P_DEV2 + kernels.DEV_LEN] = \
        device.pack_device(mat2, geo2)

    wmask = np.array(_WMASK[topo])
    dim = int(wmask.sum())
    return OdeSystem(circuit=circuit, mode=mode, params=P, wmask=wmask,
                     dim=dim)


def supply_power(system, state, input_value=0.0):
    """Total power delivered by the two DC bias sources, in W."""
    return float(system.outputs(state, input_value)[3])


def resting_state(circuit, mode=None, max_chunks=400, cfg=None):
    """Relax the unstimulated circuit to its fixed point.

    Integrates from the insulating DC solution in chunks of ~50 membrane
    time constants until the state stops moving. Circuits that
    self-oscillate at zero input never settle; that is reported as
    ConvergenceError. mode defaults to the only clamp mode the topology
    supports, else current clamp.
    """
    from dataclasses import replace

    from . import solver  # deferred: solver imports this module's siblings

    if isinstance(circuit, OdeSystem):
        system = circuit
    else:
        if mode is None:
            mode = "voltage" if circuit.topology == "phasic" else "current"
        system = assemble(circuit, mode)
    circ = system.circuit
    tau = circ.rl2 * max(circ.c1_total,
                         circ.c2_total if circ.topology != "pearson_anson"
                         else circ.c1_total)
    chunk = 50.0 * tau
    if cfg is None:
        cfg = solver.SolverConfig(min_step=1e-16)
    cfg = replace(cfg, dense_interval=chunk / 64.0, max_step=None)
    y = system.insulating_guess()
    prev = y.copy()
    for k in range(max_chunks):
        trace = solver.integrate(system, None, (k * chunk, (k + 1) * chunk),
                                 cfg, initial_state=y)
        y = trace.final_state()
        dv = max(abs(y[2] - prev[2]), abs(y[3] - prev[3]), abs(y[4] - prev[4]))
        du = max(abs(y[0] - prev[0]), abs(y[1] - prev[1]))
        if k > 0 and dv < 1e-6 and du < 1e-7:
            return CircuitState.from_array(y)
        prev = y.copy()
    raise ConvergenceError(
        "circuit did not settle at zero input; it is self-oscillatory "
        "in this bias regime", last_value=CircuitState.from_array(y))


def load_line_check(circuit, n_points=3000):
    """True iff the DC load line crosses the device I-V only inside the NDR.

    Pearson-Anson oscillator criterion: V_dc (= e1) and the load resistor
    (= rl2) define the line V = V_dc - I * R_L; sustained relaxation
    oscillation requires every intersection with the quasi-static
    force-current curve to fall on the negative-slope segment.
    """
    if circuit.topology != "pearson_anson":
        raise ConfigurationError("load_line_check applies to the "
                                 "pearson_anson topology")
    mat, geo = circuit.dev1
    i_hi = max(device._metallic_current(mat, geo) * 1.2,
               circuit.e1 / circuit.rl2)
    drives = np.linspace(0.0, i_hi, n_points)
    curve = device.quasi_static_iv(mat, geo, "force-current", sweep=drives)
    v = curve.voltage
    i = curve.current
    load = circuit.e1 - i * circuit.rl2
    resid = v - load
    sign_change = np.flatnonzero(np.diff(np.sign(resid)) != 0)
    if len(sign_change) == 0:
        return False
    dv_di = np.gradient(v, i)
    return bool(np.all(dv_di[sign_change] < 0.0))
