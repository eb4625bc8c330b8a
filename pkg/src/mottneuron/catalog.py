"""The built-in behavior catalog: load entries, run them, judge predicates.

Entries live in data/catalog.toml (Table rows plus reconstructed stimulus
protocols); each maps to a predicate here that turns traces into a pass/fail
verdict with supporting metrics. Thresholds sit in the predicate functions
so they can be reviewed in one place.
"""

import importlib.resources as resources
import time
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import analysis, circuit as circuit_mod, config, solver, stimulus
from .errors import ConfigurationError

DETECT = {"threshold": 0.3, "min_separation": 2e-6}


@dataclass(frozen=True)
class RunSpec:
    protocol: str
    t_end: float
    circuit: circuit_mod.NeuronCircuit


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    group: str
    figure: str
    predicate: str
    circuit: circuit_mod.NeuronCircuit
    runs: dict
    meta: dict
    solver: solver.SolverConfig


@dataclass(frozen=True)
class RunResult:
    trace: object
    train: object
    program: object


def _merge_circuit_tables(base, patch):
    merged = dict(base)
    for key, val in patch.items():
        if val == "none":
            merged.pop(key, None)
        else:
            merged[key] = val
    return merged


def load_catalog():
    """Parse the built-in catalog file into CatalogEntry objects."""
    text = resources.files("mottneuron.data").joinpath("catalog.toml") \
        .read_bytes()
    raw = tomllib.loads(text.decode())
    defaults = raw.get("defaults", {})
    dev_tab = defaults.get("device", {"material": "vo2-table2"})
    c_stray = defaults.get("c_stray", "0")
    cfg = solver.SolverConfig(
        dense_interval=config.parse_si(defaults.get("dense_interval", 10e-9)),
        min_step=config.parse_si(defaults.get("min_step", 1e-13)),
    )
    entries = []
    for item in raw["entry"]:
        circ_tab = dict(item["circuit"])
        circ_tab.setdefault("c_stray", c_stray)
        circ_tab.setdefault("device", dict(dev_tab))
        base_circuit = config.circuit_from_table(circ_tab)
        runs = {}
        for run_name, spec in item["runs"].items():
            run_circ = base_circuit
            if "circuit" in spec:
                run_tab = _merge_circuit_tables(circ_tab, spec["circuit"])
                run_circ = config.circuit_from_table(run_tab)
            runs[run_name] = RunSpec(
                protocol=spec["protocol"],
                t_end=config.parse_si(spec["t_end"]),
                circuit=run_circ,
            )
        entries.append(CatalogEntry(
            name=item["name"], group=item["group"], figure=item["figure"],
            predicate=item["predicate"], circuit=base_circuit, runs=runs,
            meta=dict(item.get("meta", {})), solver=cfg,
        ))
    names = [e.name for e in entries]
    if len(names) != len(set(names)):
        raise ConfigurationError("catalog has duplicate behavior names")
    return entries


def entry_by_name(name):
    for entry in load_catalog():
        if entry.name == name:
            return entry
    known = ", ".join(e.name for e in load_catalog())
    raise ConfigurationError(f"unknown behavior {name!r}; valid names: {known}")


def execute_runs(entry, seed=0, tol=None):
    """Integrate every run of an entry; returns {run_name: RunResult}."""
    cfg = entry.solver if tol is None else entry.solver.scaled(tol)
    results = {}
    rest_cache = {}
    for run_name, spec in sorted(entry.runs.items()):
        program = stimulus.parse_protocol(spec.protocol)
        key = (id(spec.circuit), program.mode)
        if key not in rest_cache:
            rest_cache[key] = circuit_mod.resting_state(
                spec.circuit, mode=program.mode, cfg=cfg)
        trace = solver.integrate(spec.circuit, program, spec.t_end, cfg,
                                 seed=seed, initial_state=rest_cache[key])
        train = analysis.detect_spikes(trace, **DETECT)
        results[run_name] = RunResult(trace=trace, train=train,
                                      program=program)
    return results


# ---------------------------------------------------------------------------
# predicates
# ---------------------------------------------------------------------------


def _sustained(trace, train, slack=6.0):
    if len(train) < 3:
        return False
    isi = float(np.median(np.diff(train.times)))
    return (trace.times[-1] - train.times[-1]) < slack * isi


def _stim_onset(program):
    return min((s.t0 for s in program.segments), default=0.0)


def _resting_level(trace):
    head = max(2, len(trace.v_k) // 50)
    return float(np.median(trace.v_k[:head]))


def _isi_cv(train):
    isis = np.diff(train.times)
    return float(np.std(isis) / np.mean(isis)) if len(isis) >= 2 else None


def p_tonic_spiking(entry, res):
    r = res["main"]
    n = len(r.train)
    cv = _isi_cv(r.train)
    ok = n >= 20 and _sustained(r.trace, r.train) and cv is not None \
        and cv < 0.05
    return ok, {"n_spikes": n, "isi_cv": cv,
                "isi_median_us": None if n < 3 else
                float(np.median(np.diff(r.train.times)) * 1e6)}


def p_phasic_spiking(entry, res):
    r = res["main"]
    onset = _stim_onset(r.program)
    n = len(r.train)
    ok = n == 1 and (r.train.times[0] - onset) < 150e-6
    return ok, {"n_spikes": n,
                "latency_us": None if n == 0 else
                float((r.train.times[0] - onset) * 1e6)}


def p_tonic_bursting(entry, res):
    r = res["main"]
    if len(r.train) < 4:
        return False, {"n_spikes": len(r.train)}
    bm = analysis.burst_metrics(r.train)
    periods_ok = bm.burst_period is not None
    onsets = np.array([b[0] for b in bm.bursts])
    per_cv = (float(np.std(np.diff(onsets)) / np.mean(np.diff(onsets)))
              if len(onsets) >= 3 else None)
    ok = (len(bm.bursts) >= 3 and float(np.mean(bm.spikes_per_burst)) >= 2.0
          and periods_ok and per_cv is not None and per_cv < 0.2
          and _sustained(r.trace, r.train, slack=3.0 * max(
              bm.spikes_per_burst.max(), 2)))
    return ok, {"n_bursts": len(bm.bursts),
                "spikes_per_burst": float(np.mean(bm.spikes_per_burst)),
                "burst_period_us": None if bm.burst_period is None else
                float(bm.burst_period * 1e6),
                "burst_period_cv": per_cv}


def p_phasic_bursting(entry, res):
    r = res["main"]
    onset = _stim_onset(r.program)
    n = len(r.train)
    if n < 2:
        return False, {"n_spikes": n}
    span = r.trace.times[-1] - onset
    early = r.train.times[-1] < onset + 0.35 * span
    return early, {"n_spikes": n,
                   "burst_span_us": float((r.train.times[-1]
                                           - r.train.times[0]) * 1e6)}


def p_mixed_mode(entry, res):
    r = res["main"]
    if len(r.train) < 6:
        return False, {"n_spikes": len(r.train)}
    isis = np.diff(r.train.times)
    tail = np.median(isis[len(isis) // 2:])
    early_fast = np.flatnonzero(isis[:4] < 0.6 * tail)
    tail_cv = float(np.std(isis[len(isis) // 2:])
                    / np.mean(isis[len(isis) // 2:]))
    ok = len(early_fast) >= 1 and isis[0] < 0.6 * tail \
        and _sustained(r.trace, r.train) and tail_cv < 0.1
    return ok, {"n_spikes": len(r.train),
                "first_isi_us": float(isis[0] * 1e6),
                "tail_isi_us": float(tail * 1e6), "tail_cv": tail_cv}


def p_spike_frequency_adaptation(entry, res):
    r = res["main"]
    if len(r.train) < 6:
        return False, {"n_spikes": len(r.train)}
    isis = np.diff(r.train.times)
    grow = np.mean(np.diff(isis) > 0)
    ok = isis[-1] > 1.5 * isis[0] and grow > 0.6
    return ok, {"n_spikes": len(r.train),
                "first_isi_us": float(isis[0] * 1e6),
                "last_isi_us": float(isis[-1] * 1e6),
                "fraction_growing": float(grow)}


def _fi(res_run):
    program = res_run.program
    window = (_stim_onset(program), program.span)
    return analysis.f_i_from_trace(res_run.trace, res_run.train, window)


def p_class1_excitable(entry, res):
    fi = _fi(res["ramp"])
    label = analysis.classify_excitability(fi)
    metrics = {"class": label, "n_spikes": len(fi.spike_times)}
    if len(fi.freqs):
        metrics["f_onset_hz"] = float(fi.freqs[0])
        metrics["f_max_hz"] = float(fi.freqs.max())
    return label == "class1", metrics


def p_class2_excitable(entry, res):
    fi = _fi(res["ramp"])
    label = analysis.classify_excitability(fi)
    osc, f_osc, amp = analysis.detect_subthreshold_oscillation(
        res["subthreshold"].trace, window=(1.0e-3, 3.0e-3))
    no_spikes_sub = len(res["subthreshold"].train) == 0
    ok = label == "class2" and osc and no_spikes_sub
    return ok, {"class": label, "subthreshold_osc": bool(osc),
                "osc_freq_hz": f_osc, "osc_amplitude_v": amp,
                "n_spikes": len(fi.spike_times)}


def p_spike_latency(entry, res):
    names = sorted(res)
    amps, lats = [], []
    for name in names:
        r = res[name]
        amp = max(s.amp for s in r.program.segments)
        lat = analysis.spike_latency(r.trace, _stim_onset(r.program),
                                     **DETECT)
        if lat is not None:
            amps.append(amp)
            lats.append(lat)
    if len(lats) < 4:
        return False, {"n_points": len(lats)}
    amps = np.array(amps)
    lats = np.array(lats)
    order = np.argsort(amps)
    decreasing = bool(np.all(np.diff(lats[order]) < 0))
    metrics = {"n_points": len(lats), "amps_v": amps.tolist(),
               "latencies_us": (lats * 1e6).tolist()}
    fit = analysis.fit_latency_curve(amps, lats)
    if fit is not None:
        metrics.update({"tau0_us": fit.tau0 * 1e6, "b_us": fit.b * 1e6,
                        "e_volts": fit.e, "r_squared": fit.r_squared})
        return bool(decreasing and fit.r_squared >= 0.99), metrics
    return False, metrics


def p_subthreshold_oscillations(entry, res):
    out = {}
    ok = True
    freqs = []
    for name in ("low", "high"):
        r = res[name]
        osc, f, amp = analysis.detect_subthreshold_oscillation(
            r.trace, window=(r.trace.times[-1] * 0.3, r.trace.times[-1]))
        out[f"{name}_osc"] = bool(osc)
        out[f"{name}_freq_hz"] = f
        out[f"{name}_amp_v"] = amp
        out[f"{name}_n_spikes"] = len(r.train)
        ok = ok and osc and len(r.train) == 0
        freqs.append(f)
    ok = ok and freqs[1] is not None and freqs[0] is not None \
        and freqs[1] > freqs[0]
    return ok, out


def _zap_freq_at(program, times):
    seg = next(s for s in program.segments if s.kind == "zap")
    tau = np.asarray(times) - seg.t0
    return seg.f0 + (seg.f1 - seg.f0) * tau / (seg.t1 - seg.t0)


def p_resonator(entry, res):
    rp = res["zap"]
    rt = res["zap_tonic"]
    if len(rp.train) < 2:
        return False, {"n_spikes_phasic": len(rp.train)}
    seg = next(s for s in rp.program.segments if s.kind == "zap")
    f_span = seg.f1 - seg.f0
    fp = _zap_freq_at(rp.program, rp.train.times)
    interior = (fp.min() > seg.f0 + 0.1 * f_span) and \
        (fp.max() < seg.f1 - 0.1 * f_span)
    center = float(np.median(fp))
    metrics = {"n_spikes_phasic": len(rp.train),
               "band_center_hz": center,
               "band_lo_hz": float(fp.min()), "band_hi_hz": float(fp.max()),
               "n_spikes_tonic": len(rt.train)}
    if len(rt.train):
        ft = _zap_freq_at(rt.program, rt.train.times)
        metrics["tonic_lo_hz"] = float(ft.min())
        # tonic twin is low-pass: it responds from the bottom of the sweep
        lowpass = ft.min() < seg.f0 + 0.1 * f_span
    else:
        lowpass = False
    return bool(interior and lowpass), metrics


def p_integrator(entry, res):
    short = res["short_gap"]
    long_ = res["long_gap"]
    ok = len(short.train) >= 1 and len(long_.train) == 0
    return ok, {"short_gap_spikes": len(short.train),
                "long_gap_spikes": len(long_.train)}


def p_bistability(entry, res):
    kick = res["kick"]
    pulse_end = max(s.t0 + (s.width or 0) for s in kick.program.segments)
    persistent = len(kick.train) >= 5 and _sustained(kick.trace, kick.train) \
        and kick.train.times[-1] > pulse_end + 300e-6
    off_names = [n for n in res if n.startswith("off")]
    switched = {}
    any_off = False
    for name in off_names:
        r = res[name]
        tail_start = r.trace.times[-1] - 250e-6
        tail_spikes = int(np.sum(r.train.times > tail_start))
        switched[name] = tail_spikes == 0
        any_off = any_off or tail_spikes == 0
    return bool(persistent and any_off), {
        "kick_spikes": len(kick.train), "persistent": bool(persistent),
        "switch_off": switched}


def p_depolarizing_after_potential(entry, res):
    single = res["single"]
    double = res["double"]
    if len(single.train) != 1:
        return False, {"single_spikes": len(single.train),
                       "double_spikes": len(double.train)}
    rest = _resting_level(single.trace)
    t_spike = single.train.times[0]
    t = single.trace.times
    v = single.trace.v_k
    sel = (t > t_spike + 5e-6) & (t < t_spike + 300e-6)
    if not np.any(sel):
        return False, {"single_spikes": 1}
    v_post = v[sel]
    # after-potential: dips below rest then rises back above it
    k_min = int(np.argmin(v_post))
    dap_height = float(v_post[k_min:].max() - rest)
    undershoot = float(rest - v_post[k_min])
    ok = undershoot > 0.01 and dap_height > 0.02 \
        and len(double.train) >= 2
    return ok, {"single_spikes": len(single.train),
                "double_spikes": len(double.train),
                "undershoot_v": undershoot, "dap_height_v": dap_height}


def p_accommodation(entry, res):
    fast = res["fast"]
    slow = res["slow"]
    ok = len(fast.train) >= 1 and len(slow.train) == 0
    return ok, {"fast_spikes": len(fast.train),
                "slow_spikes": len(slow.train)}


def p_inhibition_induced_spiking(entry, res):
    quiet = res["quiet"]
    inh = res["inhibited"]
    ok = len(quiet.train) == 0 and len(inh.train) >= 10 \
        and _sustained(inh.trace, inh.train)
    return ok, {"quiet_spikes": len(quiet.train),
                "inhibited_spikes": len(inh.train)}


def p_inhibition_induced_bursting(entry, res):
    r = res["inhibited"]
    if len(r.train) < 4:
        return False, {"n_spikes": len(r.train)}
    bm = analysis.burst_metrics(r.train)
    multi = int(np.sum(bm.spikes_per_burst >= 2))
    ok = len(bm.bursts) >= 2 and multi >= 2
    return ok, {"n_spikes": len(r.train), "n_bursts": len(bm.bursts),
                "spikes_per_burst": bm.spikes_per_burst.tolist()}


def p_all_or_nothing(entry, res):
    subs = [res["sub1"], res["sub2"]]
    supras = [res["supra1"], res["supra2"]]
    sub_ok = all(len(r.train) == 0 for r in subs)
    supra_ok = all(len(r.train) >= 1 for r in supras)
    metrics = {"sub_spikes": [len(r.train) for r in subs],
               "supra_spikes": [len(r.train) for r in supras]}
    if supra_ok:
        rests = [_resting_level(r.trace) for r in supras]
        amps = [float(r.train.amplitudes[0]) - rest
                for r, rest in zip(supras, rests)]
        spread = abs(amps[0] - amps[1]) / max(amps)
        metrics["spike_amplitudes_v"] = amps
        metrics["amplitude_spread"] = float(spread)
        return bool(sub_ok and spread < 0.05), metrics
    return False, metrics


def p_refractory_period(entry, res):
    names = sorted(res)
    gaps, counts = [], []
    for name in names:
        r = res[name]
        seg = r.program.segments[0]
        gaps.append(seg.gap)
        counts.append(len(r.train))
    counts = np.array(counts)
    gaps = np.array(gaps)
    order = np.argsort(gaps)
    counts = counts[order]
    gaps = gaps[order]
    # one spike inside the refractory window, two outside, one transition
    ok = counts[0] == 1 and counts[-1] == 2 \
        and bool(np.all(np.diff(counts) >= 0)) \
        and set(counts.tolist()) <= {1, 2}
    t_star = None
    two = np.flatnonzero(counts == 2)
    if len(two):
        t_star = float(gaps[two[0]] * 1e6)
    return bool(ok), {"gaps_us": (gaps * 1e6).tolist(),
                      "spike_counts": counts.tolist(),
                      "refractory_boundary_us": t_star}


def p_excitation_block(entry, res):
    r = res["ramp"]
    if len(r.train) < 5:
        return False, {"n_spikes": len(r.train)}
    rest = _resting_level(r.trace)
    i_at = np.interp(r.train.times, r.trace.times, r.trace.input)
    t_end = r.trace.times[-1]
    stopped_early = r.train.times[-1] < 0.85 * t_end
    tail = r.trace.v_k[r.trace.times > 0.95 * t_end]
    locked_high = float(np.min(tail)) > rest + 0.3
    flat = float(np.ptp(tail)) < 0.1
    return bool(stopped_early and locked_high and flat), {
        "n_spikes": len(r.train),
        "first_spike_uA": float(i_at[0] * 1e6),
        "block_uA": float(i_at[-1] * 1e6),
        "locked_level_v": float(np.median(tail))}


def p_rebound_spike(entry, res):
    def release_spikes(r):
        seg = r.program.segments[0]
        release = seg.t0 + seg.width
        return int(np.sum(r.train.times > release))

    sub = release_spikes(res["sub"])
    supra = release_spikes(res["supra"])
    short = release_spikes(res["short"])
    longer = release_spikes(res["longer"])
    ok = sub == 0 and supra >= 1 and short == 0 and longer >= 1
    return ok, {"sub_release_spikes": sub, "supra_release_spikes": supra,
                "short_duration_spikes": short,
                "longer_duration_spikes": longer}


def p_rebound_burst(entry, res):
    r = res["main"]
    seg = r.program.segments[0]
    release = seg.t0 + seg.width
    n = int(np.sum(r.train.times > release))
    return n >= 2, {"release_spikes": n}


def p_threshold_variability(entry, res):
    exc = res["exc_alone"]
    pair = res["inh_then_exc"]
    inh = res["inh_alone"]
    ok = len(exc.train) == 0 and len(inh.train) == 0 and len(pair.train) >= 1
    return ok, {"exc_alone_spikes": len(exc.train),
                "inh_alone_spikes": len(inh.train),
                "paired_spikes": len(pair.train)}


PREDICATES = {
    "tonic_spiking": p_tonic_spiking,
    "phasic_spiking": p_phasic_spiking,
    "tonic_bursting": p_tonic_bursting,
    "phasic_bursting": p_phasic_bursting,
    "mixed_mode": p_mixed_mode,
    "spike_frequency_adaptation": p_spike_frequency_adaptation,
    "class1_excitable": p_class1_excitable,
    "class2_excitable": p_class2_excitable,
    "spike_latency": p_spike_latency,
    "subthreshold_oscillations": p_subthreshold_oscillations,
    "resonator": p_resonator,
    "integrator": p_integrator,
    "bistability": p_bistability,
    "depolarizing_after_potential": p_depolarizing_after_potential,
    "accommodation": p_accommodation,
    "inhibition_induced_spiking": p_inhibition_induced_spiking,
    "inhibition_induced_bursting": p_inhibition_induced_bursting,
    "all_or_nothing": p_all_or_nothing,
    "refractory_period": p_refractory_period,
    "excitation_block": p_excitation_block,
    "rebound_spike": p_rebound_spike,
    "rebound_burst": p_rebound_burst,
    "threshold_variability": p_threshold_variability,
}


def run_entry(entry, seed=0, tol=None):
    """Execute one catalog entry; returns a report dict."""
    if isinstance(entry, str):
        entry = entry_by_name(entry)
    started = time.time()
    results = execute_runs(entry, seed=seed, tol=tol)
    passed, metrics = PREDICATES[entry.predicate](entry, results)
    residuals = {name: r.trace.energy_residual()
                 for name, r in results.items()}
    return {
        "behavior": entry.name,
        "group": entry.group,
        "figure": entry.figure,
        "passed": bool(passed),
        "metrics": metrics,
        "energy_residuals": residuals,
        "meta": entry.meta,
        "seed": int(seed),
        "runtime_s": round(time.time() - started, 3),
    }, results


def run_all(seed=0, tol=None, jobs=1):
    """Run every catalog entry; returns the list of report dicts."""
    entries = load_catalog()
    if jobs and jobs > 1:
        from joblib import Parallel, delayed
        reports = Parallel(n_jobs=jobs)(
            delayed(lambda e: run_entry(e, seed=seed, tol=tol)[0])(e)
            for e in entries)
    else:
        reports = [run_entry(e, seed=seed, tol=tol)[0] for e in entries]
    return reports


def skipping_circuit():
    """The stochastic-firing study circuit (not one of the 23 behaviors)."""
    entries_tab = {
        "topology": "tonic", "rl1": "7k", "rl2": "7k", "c1": "1n",
        "c2": "1n", "e1": 1.5, "e2": 1.5, "c_stray": "1n",
        "device": {"material": "vo2-table2", "r_ch": "56n", "l_ch": "100n",
                   "r_e": 150, "r_shunt": "13k"},
    }
    return config.circuit_from_table(entries_tab)


def skipping_protocol(noise_pp_uA, dc_uA=82.5, duration=35e-3, hold="100ns"):
    return (f"dc t0=50us t1={duration * 1e3:g}ms amp={dc_uA}uA\n"
            f"noise pp={noise_pp_uA}uA hold={hold}")
