"""Adaptive stiff-capable integration driver and trace containers.

The embedded Cash-Karp 5(4) pair in :mod:`mottneuron.kernels` does the
stepping; this module packs inputs, sizes output buffers, resumes the kernel
when buffers fill, and wraps results in :class:`SimulationTrace`. Steps are
clipped so they never straddle a stimulus discontinuity or a noise hold
boundary, which keeps the error control meaningful; supply/input/dissipation
powers are accumulated with the same fifth-order quadrature as the states,
so energy bookkeeping closes to solver accuracy.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import circuit as circuit_mod
from . import kernels, stimulus
from .errors import (
    ConfigurationError,
    NumericalError,
    StiffnessError,
)

CSV_HEADER = "t,u1,u2,v_na,v_k,i1,i2,input,p_supply"

_EMPTY_PROGRAM = stimulus.StimulusProgram(mode="current")


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-6
    abs_tol_v: float = 1e-9       # V
    abs_tol_u: float = 1e-9       # dimensionless state
    max_step: float | None = None  # default: span / 100
    min_step: float = 1e-13
    dense_interval: float | None = 10e-9  # None: emit every accepted step
    initial_step: float | None = None
    max_output_points: int = 80_000_000

    def scaled(self, tol):
        """Ladder helper: rel_tol = tol with abs tolerances in proportion."""
        return replace(self, rel_tol=tol, abs_tol_v=tol * 1e-3,
                       abs_tol_u=tol * 1e-3)


@dataclass(frozen=True)
class SolverStats:
    n_steps: int
    n_rejected: int
    n_rhs: int
    min_step_used: float
    energy_supplied: float
    energy_input: float
    energy_dissipated: float
    cap_energy_initial: float
    cap_energy_final: float


@dataclass(frozen=True)
class SimulationTrace:
    """Time series of states and derived observables from one integration."""

    times: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    v_na: np.ndarray
    v_k: np.ndarray
    v_aux: np.ndarray
    i1: np.ndarray
    i2: np.ndarray
    input: np.ndarray
    p_supply: np.ndarray
    clamp_floor_events: int
    clamp_ceil_events: int
    stats: SolverStats
    seed: int
    mode: str

    def __post_init__(self):
        n = len(self.times)
        for name in ("u1", "u2", "v_na", "v_k", "v_aux", "i1", "i2",
                     "input", "p_supply"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"series {name} length mismatch")

    def final_state(self):
        return np.array([self.u1[-1], self.u2[-1], self.v_na[-1],
                         self.v_k[-1], self.v_aux[-1]])

    def energy_residual(self):
        """Relative closure error of the energy balance over the trace.

        supplied + input - dissipated must equal the capacitor energy change.
        """
        s = self.stats
        lhs = s.energy_supplied + s.energy_input - s.energy_dissipated
        dcaps = s.cap_energy_final - s.cap_energy_initial
        scale = max(abs(s.energy_supplied), abs(s.energy_input),
                    abs(s.energy_dissipated), abs(dcaps), 1e-30)
        return abs(lhs - dcaps) / scale

    def to_csv(self, path):
        data = np.column_stack([self.times, self.u1, self.u2, self.v_na,
                                self.v_k, self.i1, self.i2, self.input,
                                self.p_supply])
        np.savetxt(path, data, delimiter=",", header=CSV_HEADER, comments="",
                   fmt="%.12e")

    def to_npz(self, path):
        """Compact binary form. Layout: times (n,), states (n,5) in
        [u1,u2,v_na,v_k,v_aux] order, aux (n,4) in [i1,i2,input,p_supply]
        order, stats (9,) in SolverStats field order, clamps (2,), seed (),
        mode (str)."""
        states = np.column_stack([self.u1, self.u2, self.v_na, self.v_k,
                                  self.v_aux])
        aux = np.column_stack([self.i1, self.i2, self.input, self.p_supply])
        stats = np.array([self.stats.n_steps, self.stats.n_rejected,
                          self.stats.n_rhs, self.stats.min_step_used,
                          self.stats.energy_supplied, self.stats.energy_input,
                          self.stats.energy_dissipated,
                          self.stats.cap_energy_initial,
                          self.stats.cap_energy_final])
        np.savez_compressed(path, times=self.times, states=states, aux=aux,
                            stats=stats,
                            clamps=np.array([self.clamp_floor_events,
                                             self.clamp_ceil_events]),
                            seed=np.array(self.seed), mode=np.array(self.mode))

    @classmethod
    def from_npz(cls, path):
        z = np.load(path)
        states = z["states"]
        aux = z["aux"]
        st = z["stats"]
        stats = SolverStats(n_steps=int(st[0]), n_rejected=int(st[1]),
                            n_rhs=int(st[2]), min_step_used=float(st[3]),
                            energy_supplied=float(st[4]),
                            energy_input=float(st[5]),
                            energy_dissipated=float(st[6]),
                            cap_energy_initial=float(st[7]),
                            cap_energy_final=float(st[8]))
        return cls(times=z["times"], u1=states[:, 0], u2=states[:, 1],
                   v_na=states[:, 2], v_k=states[:, 3], v_aux=states[:, 4],
                   i1=aux[:, 0], i2=aux[:, 1], input=aux[:, 2],
                   p_supply=aux[:, 3],
                   clamp_floor_events=int(z["clamps"][0]),
                   clamp_ceil_events=int(z["clamps"][1]),
                   stats=stats, seed=int(z["seed"]), mode=str(z["mode"]))


def _initial_step(t0, t1, y0, f0, cfg, max_step):
    scale = np.where(np.arange(kernels.NDIM) < 2, cfg.abs_tol_u,
                     cfg.abs_tol_v) + cfg.rel_tol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    if d1 > 0:
        h0 = 0.01 * d0 / d1
    else:
        h0 = (t1 - t0) * 1e-6
    return float(min(max(h0, 1e-18), max_step, (t1 - t0)))


def integrate(system, program, t_span, cfg=None, seed=0, initial_state=None,
              run_index=0):
    """Integrate a circuit ODE system under a stimulus program.

    system: OdeSystem, or NeuronCircuit (assembled using the program's mode).
    program: StimulusProgram or None for an unstimulated run.
    t_span: (t0, t1) or final time t1.
    initial_state: None for the circuit resting state, "cold" for the
    unbiased cold start, or an explicit 5-state array.
    """
    cfg = cfg or SolverConfig()
    if program is None:
        program = _EMPTY_PROGRAM
    if isinstance(system, circuit_mod.NeuronCircuit):
        system = circuit_mod.assemble(system, program.mode)
    if program.segments and program.mode != system.mode:
        raise ConfigurationError(
            f"program mode {program.mode!r} does not match the assembled "
            f"system mode {system.mode!r}")
    if np.isscalar(t_span):
        t0, t1 = 0.0, float(t_span)
    else:
        t0, t1 = map(float, t_span)
    if t1 <= t0:
        raise ConfigurationError("t_span must have t1 > t0")

    if initial_state is None:
        y0 = circuit_mod.resting_state(system).as_array()
    elif isinstance(initial_state, str) and initial_state == "cold":
        y0 = system.initial_state()
    elif isinstance(initial_state, circuit_mod.CircuitState):
        y0 = initial_state.as_array()
    else:
        y0 = np.asarray(initial_state, dtype=float).copy()
        if y0.shape != (kernels.NDIM,):
            raise ConfigurationError(f"initial state must have "
                                     f"{kernels.NDIM} entries")
    for j, off in ((0, kernels.P_DEV1), (1, kernels.P_DEV2)):
        floor = system.params[off + kernels.D_UFLOOR]
        ceil = system.params[off + kernels.D_UCEIL]
        if y0[j] < floor:
            warnings.warn(f"initial u{j + 1}={y0[j]:.3g} below the clamp "
                          f"floor; snapped to {floor:g}")
            y0[j] = floor
        elif y0[j] > ceil:
            warnings.warn(f"initial u{j + 1}={y0[j]:.3g} above the clamp "
                          f"ceiling; snapped to {ceil:g}")
            y0[j] = ceil

    kinds, segp = stimulus.pack_segments(program)
    breaks = stimulus.breakpoints(program, t_end=t1)
    noise = stimulus.make_noise_stream(program, seed, t1, run_index)

    max_step = cfg.max_step if cfg.max_step is not None else (t1 - t0) / 100.0
    atol = np.array([cfg.abs_tol_u, cfg.abs_tol_u, cfg.abs_tol_v,
                     cfg.abs_tol_v, cfg.abs_tol_v])

    y = y0.copy()
    f = np.empty(kernels.NDIM)
    pw = np.zeros(3)
    nval0 = noise.at(t0)
    p0 = kernels.circuit_rhs(t0, y, system.params, kinds, segp, nval0, f)
    if not np.all(np.isfinite(f)):
        raise NumericalError("non-finite derivative at the initial state",
                             t=t0, state=y)
    pw[0], pw[1], pw[2] = p0

    acc = np.zeros(kernels.ACC_LEN)
    acc[kernels.ACC_MINH] = np.inf
    e_caps0 = kernels.cap_energy(y, system.params)

    dense = cfg.dense_interval
    if dense is not None and dense <= 0:
        raise ConfigurationError("dense_interval must be positive or None")
    if dense is not None:
        n_expect = int(np.floor((t1 - t0) / dense + 1e-9)) + 1
        if n_expect > cfg.max_output_points:
            raise ConfigurationError(
                f"dense output would produce {n_expect} points; raise "
                f"dense_interval or max_output_points")
        chunk_cap = n_expect
        dense_dt = dense
    else:
        chunk_cap = 1 << 20
        dense_dt = 0.0

    h = cfg.initial_step or _initial_step(t0, t1, y, f, cfg, max_step)

    chunks_t, chunks_y, chunks_aux = [], [], []
    # row 0: the initial point
    i1, i2, inp, psup = kernels.trace_outputs(t0, y, system.params, kinds,
                                              segp, nval0)
    chunks_t.append(np.array([t0]))
    chunks_y.append(y.reshape(1, -1).copy())
    chunks_aux.append(np.array([[i1, i2, inp, psup]]))

    t = t0
    k_next = 1
    total_out = 1
    while True:
        out_t = np.empty(chunk_cap)
        out_y = np.empty((chunk_cap, kernels.NDIM))
        out_aux = np.empty((chunk_cap, 4))
        status, n_out, t, h, k_next = kernels.integrate_core(
            system.params, system.wmask, atol, cfg.rel_tol,
            kinds, segp, breaks, noise.values, noise.hold,
            t, t1, y, f, pw, h,
            max_step, cfg.min_step,
            dense_dt, t0, k_next,
            out_t, out_y, out_aux, acc)
        if n_out:
            chunks_t.append(out_t[:n_out].copy())
            chunks_y.append(out_y[:n_out].copy())
            chunks_aux.append(out_aux[:n_out].copy())
            total_out += n_out
        if status == kernels.STATUS_DONE:
            break
        if status == kernels.STATUS_BUFFER_FULL:
            if total_out > cfg.max_output_points:
                raise ConfigurationError(
                    "output exceeded max_output_points; raise the cap or "
                    "use a coarser dense_interval")
            continue
        if status == kernels.STATUS_STEP_UNDERFLOW:
            raise StiffnessError(
                f"step size underflowed min_step={cfg.min_step:g}",
                t=t, state=y.copy())
        raise NumericalError("non-finite value during integration",
                             t=t, state=y.copy())

    times = np.concatenate(chunks_t)
    ys = np.vstack(chunks_y)
    aux = np.vstack(chunks_aux)

    stats = SolverStats(
        n_steps=int(acc[kernels.ACC_NSTEPS]),
        n_rejected=int(acc[kernels.ACC_NREJECTED]),
        n_rhs=int(acc[kernels.ACC_NRHS]) + 1,
        min_step_used=float(acc[kernels.ACC_MINH]),
        energy_supplied=float(acc[kernels.ACC_ESUP]),
        energy_input=float(acc[kernels.ACC_EIN]),
        energy_dissipated=float(acc[kernels.ACC_EDISS]),
        cap_energy_initial=float(e_caps0),
        cap_energy_final=float(kernels.cap_energy(y, system.params)),
    )
    return SimulationTrace(
        times=times, u1=ys[:, 0], u2=ys[:, 1], v_na=ys[:, 2], v_k=ys[:, 3],
        v_aux=ys[:, 4], i1=aux[:, 0], i2=aux[:, 1], input=aux[:, 2],
        p_supply=aux[:, 3],
        clamp_floor_events=int(acc[kernels.ACC_NFLOOR]),
        clamp_ceil_events=int(acc[kernels.ACC_NCEIL]),
        stats=stats, seed=int(seed), mode=system.mode)


@dataclass(frozen=True)
class ConvergenceReport:
    tolerances: tuple
    first_spike_times: tuple
    drifts: tuple          # |t_k - t_{k+1}| / t_{k+1} between ladder levels
    spiking: bool
    ok: bool


def convergence_report(system, program, t_span, tolerances, cfg=None, seed=0,
                       initial_state=None, detect_kwargs=None):
    """Self-convergence check: first-spike drift down a tolerance ladder."""
    from . import analysis

    if len(tolerances) < 2:
        raise ConfigurationError("convergence ladder needs >= 2 tolerance "
                                 "levels")
    tolerances = tuple(sorted(tolerances, reverse=True))
    base = cfg or SolverConfig()
    firsts = []
    for tol in tolerances:
        trace = integrate(system, program, t_span, base.scaled(tol),
                          seed=seed, initial_state=initial_state)
        train = analysis.detect_spikes(trace, **(detect_kwargs or {}))
        firsts.append(train.times[0] if len(train.times) else None)
    if any(x is None for x in firsts):
        return ConvergenceReport(tolerances=tolerances,
                                 first_spike_times=tuple(firsts),
                                 drifts=(), spiking=False,
                                 ok=all(x is None for x in firsts))
    drifts = tuple(abs(a - b) / b for a, b in zip(firsts, firsts[1:]))
    ok = all(d2 <= d1 * 1.5 + 1e-12 for d1, d2 in zip(drifts, drifts[1:]))
    return ConvergenceReport(tolerances=tolerances,
                             first_spike_times=tuple(firsts),
                             drifts=drifts, spiking=True, ok=ok)
