"""Experiment execution: single runs, parameter sweeps, scaling curves.

Backs the CLI. Reports are JSON with sorted keys and a separate timestamp
field, so identical config + seed reproduces byte-identical files apart
from that one line. Sweep cells are skipped when their report already
exists, making long sweeps resumable.
"""

import itertools
import json
import math
import os
import re
import time
from dataclasses import replace

import numpy as np

from . import analysis, catalog, circuit as circuit_mod, config as config_mod
from . import device, solver, stimulus
from .errors import ConfigurationError


def _sanitize(obj):
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_report(report, path):
    body = _sanitize(dict(report))
    body["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_experiment(cfg, write_traces=True, predicate=None):
    """Execute one ExperimentConfig; returns (report dict, trace)."""
    started = time.time()
    program = cfg.program
    system = circuit_mod.assemble(cfg.circuit, program.mode
                                  if program.segments else "current")
    trace = solver.integrate(system, program, cfg.t_end, cfg.solver,
                             seed=cfg.seed)
    onset = min((s.t0 for s in program.segments), default=0.0)
    stim_window = (onset, program.span) if program.segments else None
    rep = analysis.build_report(trace, stimulus_onset=onset,
                                stim_window=stim_window,
                                classify=stim_window is not None,
                                **cfg.analysis.detect_kwargs())
    report = {
        "kind": "run",
        "config": cfg.source_path,
        "seed": cfg.seed,
        "mode": trace.mode,
        "t_end": cfg.t_end,
        "analysis": rep.to_dict(),
        "solver_stats": {
            "n_steps": trace.stats.n_steps,
            "n_rejected": trace.stats.n_rejected,
            "min_step_used": trace.stats.min_step_used,
            "energy_supplied": trace.stats.energy_supplied,
        },
        "runtime_s": round(time.time() - started, 3),
    }
    if predicate is not None:
        if predicate not in catalog.PREDICATES:
            raise ConfigurationError(f"unknown predicate {predicate!r}")
        train = analysis.detect_spikes(trace, **cfg.analysis.detect_kwargs())
        res = {"main": catalog.RunResult(trace=trace, train=train,
                                         program=program)}
        passed, metrics = catalog.PREDICATES[predicate](None, res)
        report["passed"] = bool(passed)
        report["predicate"] = predicate
        report["predicate_metrics"] = metrics
    if write_traces:
        os.makedirs(cfg.out_dir, exist_ok=True)
        trace.to_csv(os.path.join(cfg.out_dir, f"{cfg.basename}.csv"))
        write_report(report, os.path.join(cfg.out_dir,
                                          f"{cfg.basename}.report.json"))
    return report, trace


_AXIS_RE = re.compile(
    r"^(?P<key>[a-z0-9_.]+)=(?P<lo>[^:]+):(?P<hi>[^:]+):(?P<n>\d+)"
    r"(?::(?P<scale>log|lin))?$")


def parse_axis(spec):
    """Parse an axis spec like "circuit.c1=1n:30n:8:log"."""
    m = _AXIS_RE.match(spec.strip())
    if not m:
        raise ConfigurationError(
            f"bad axis spec {spec!r}; expected key=lo:hi:n[:log|lin]")
    key = m.group("key")
    lo = config_mod.parse_si(m.group("lo"), key)
    hi = config_mod.parse_si(m.group("hi"), key)
    n = int(m.group("n"))
    if n < 1:
        raise ConfigurationError("axis needs at least one point")
    if m.group("scale") == "log":
        if lo <= 0 or hi <= 0:
            raise ConfigurationError("log axis needs positive bounds")
        values = np.geomspace(lo, hi, n)
    else:
        values = np.linspace(lo, hi, n)
    return key, values


_CIRCUIT_FIELDS = {"rl1", "rl2", "c1", "c2", "cin", "e1", "e2", "c_stray",
                   "r_src"}


def _apply_axis(cfg, key, value):
    if key.startswith("circuit."):
        field = key.split(".", 1)[1]
        if field not in _CIRCUIT_FIELDS:
            raise ConfigurationError(f"cannot sweep circuit field {field!r}")
        return replace(cfg, circuit=replace(cfg.circuit, **{field: value}))
    if key == "seed":
        return replace(cfg, seed=int(value))
    raise ConfigurationError(f"cannot sweep key {key!r}")


def run_sweep(cfg, axis_specs, jobs=1, write_traces=False):
    """Grid sweep over <= 2 axes; one report per cell plus an aggregate CSV.

    Cells whose report file already exists are skipped (resume support).
    Returns the aggregate rows.
    """
    if not 1 <= len(axis_specs) <= 2:
        raise ConfigurationError("sweep needs 1 or 2 axes")
    axes = [parse_axis(s) for s in axis_specs]
    os.makedirs(cfg.out_dir, exist_ok=True)

    grids = [vals for _, vals in axes]
    keys = [key for key, _ in axes]
    cells = list(itertools.product(*[range(len(g)) for g in grids]))

    def cell_name(idx):
        return "cell_" + "_".join(f"{k}{i:03d}" for k, i in zip("ij", idx))

    def run_cell(idx):
        name = cell_name(idx)
        path = os.path.join(cfg.out_dir, f"{name}.report.json")
        values = [float(grids[a][i]) for a, i in enumerate(idx)]
        if os.path.exists(path):
            with open(path) as fh:
                return values, json.load(fh), True
        sub = cfg
        for (key, _), val in zip(axes, values):
            sub = _apply_axis(sub, key, val)
        sub = replace(sub, basename=name)
        try:
            report, _ = run_experiment(sub, write_traces=write_traces)
        except Exception as exc:
            report = {"kind": "run", "error": f"{type(exc).__name__}: {exc}"}
        for key, val in zip(keys, values):
            report[f"axis:{key}"] = val
        write_report(report, path)
        return values, report, False

    if jobs and jobs > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=jobs)(delayed(run_cell)(i) for i in cells)
    else:
        results = [run_cell(i) for i in cells]

    rows = []
    for values, report, _ in results:
        ana = report.get("analysis", {})
        rows.append({
            **{k: v for k, v in zip(keys, values)},
            "n_spikes": len(ana.get("spike_times", [])),
            "energy_per_spike": ana.get("energy_per_spike"),
            "burst_count": ana.get("burst_count"),
            "excitability": ana.get("excitability"),
            "error": report.get("error"),
        })
    agg_path = os.path.join(cfg.out_dir, "sweep_aggregate.csv")
    cols = list(rows[0].keys())
    with open(agg_path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join("" if row[c] is None else str(row[c])
                              for c in cols) + "\n")
    return rows


# ---------------------------------------------------------------------------
# energy scaling experiments
# ---------------------------------------------------------------------------

# Tonic neuron used for the femtofarad-scale energy studies: bare channel
# (no parasitics, no stray), load chosen so the bias divider rests below the
# switching threshold, drive set inside the spiking window.
SCALING_RL = 1.0e6
SCALING_BIAS = 1.5
SCALING_DRIVE = 4e-6


def scaling_circuit(c_farads, r_ch=10e-9, l_ch=10e-9):
    geo = device.DeviceGeometry(r_ch=r_ch, l_ch=l_ch)
    dev = (device.VO2_TABLE2, geo)
    return circuit_mod.NeuronCircuit(
        topology="tonic", rl1=SCALING_RL, rl2=SCALING_RL,
        c1=c_farads, c2=c_farads, e1=SCALING_BIAS, e2=SCALING_BIAS,
        dev1=dev, dev2=dev, c_stray=0.0)


def spike_energy_at(c_farads, r_ch=10e-9, l_ch=10e-9, n_spikes_target=12,
                    drive=None, seed=0):
    """Mean supply energy per spike for a C1=C2=C tonic neuron, in J."""
    circ = scaling_circuit(c_farads, r_ch, l_ch)
    drive = SCALING_DRIVE if drive is None else drive
    tau = SCALING_RL * c_farads
    t_on = 20.0 * tau
    t_end = t_on + n_spikes_target * 40.0 * tau
    text = f"dc t0={t_on!r} t1={t_end!r} amp={drive!r}"
    program = stimulus.parse_protocol(text)
    cfg = solver.SolverConfig(dense_interval=None, min_step=1e-19,
                              max_step=tau)
    rest = circuit_mod.resting_state(circ)
    trace = solver.integrate(circ, program, t_end, cfg, seed=seed,
                             initial_state=rest)
    p_static = float(np.median(trace.p_supply[trace.times < t_on]))
    sep = 2.0 * tau
    energy, n = analysis.mean_spike_energy(
        trace, static_power=p_static, threshold=0.3, min_separation=sep)
    return energy, n


def energy_scaling_curve(c_values, r_ch=10e-9, l_ch=10e-9, jobs=1):
    """Energy per spike across membrane capacitance; returns (C, E) arrays."""
    c_values = np.asarray(c_values, dtype=float)

    def one(c):
        return spike_energy_at(c, r_ch=r_ch, l_ch=l_ch)[0]

    if jobs and jobs > 1:
        from joblib import Parallel, delayed
        energies = Parallel(n_jobs=jobs)(delayed(one)(c) for c in c_values)
    else:
        energies = [one(c) for c in c_values]
    return c_values, np.asarray(energies)


def ee_area_curve(density_f_per_m2, areas_m2, r_ch=10e-9, l_ch=10e-9,
                  capacitor_fraction=0.8, jobs=1):
    """Energy efficiency (spikes/J) against neuron area.

    The two membrane capacitors fill capacitor_fraction of the neuron area
    at the given capacitance density; EE is 1 / (energy per spike).
    """
    areas = np.asarray(areas_m2, dtype=float)
    c_each = density_f_per_m2 * capacitor_fraction * areas / 2.0
    _, energies = energy_scaling_curve(c_each, r_ch=r_ch, l_ch=l_ch,
                                       jobs=jobs)
    return areas, 1.0 / energies
