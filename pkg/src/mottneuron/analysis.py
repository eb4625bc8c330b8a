"""Figures of merit extracted from simulation traces.

All functions are pure over immutable traces. Spike detection feeds the
interval statistics (ISI, joint-ISI return maps, burst splitting), the
excitability classifier, latency and energy metrics; the regime-map driver
composes them over a capacitance grid.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class SpikeTrain:
    times: np.ndarray
    amplitudes: np.ndarray
    threshold: float
    min_separation: float
    baseline: float

    def __len__(self):
        return len(self.times)


def detect_spikes(trace, threshold=0.3, min_separation=2e-6, baseline=None,
                  min_prominence=None):
    """Local maxima of v_k above baseline + threshold, min_separation apart.

    baseline defaults to the median of the first 5% of the trace, and
    min_prominence to threshold / 2: a peak must stand that far above the
    valleys separating it from higher ground, which rejects numerical
    ripple on elevated plateaus. Peak times are refined by a parabola
    through the three samples around each maximum.
    """
    t = trace.times
    v = trace.v_k
    if baseline is None:
        head = max(2, len(v) // 20)
        baseline = float(np.median(v[:head]))
    if min_prominence is None:
        min_prominence = 0.5 * threshold
    level = baseline + threshold

    core = (v[1:-1] >= v[:-2]) & (v[1:-1] > v[2:]) & (v[1:-1] > level)
    idx = np.flatnonzero(core) + 1
    if len(idx) and min_prominence > 0:
        keep = []
        for i in idx:
            vi = v[i]
            ref = vi - min_prominence
            # walk outward until higher ground; track the deepest valley
            ok_left = False
            j = i - 1
            lo = vi
            while j >= 0:
                if v[j] < lo:
                    lo = v[j]
                    if lo <= ref:
                        ok_left = True
                        break
                if v[j] > vi:
                    break
                j -= 1
            else:
                ok_left = lo <= ref
            ok_right = False
            j = i + 1
            lo = vi
            while j < len(v):
                if v[j] < lo:
                    lo = v[j]
                    if lo <= ref:
                        ok_right = True
                        break
                if v[j] > vi:
                    break
                j += 1
            else:
                ok_right = lo <= ref
            if ok_left and ok_right:
                keep.append(i)
        idx = np.array(keep, dtype=int)
    # keep the taller peak when two fall within min_separation
    accepted = []
    for i in idx[np.argsort(v[idx])[::-1]]:
        ti = t[i]
        if all(abs(ti - t[j]) >= min_separation for j in accepted):
            accepted.append(i)
    accepted.sort()

    times = np.empty(len(accepted))
    amps = np.empty(len(accepted))
    for k, i in enumerate(accepted):
        t0, t1, t2 = t[i - 1], t[i], t[i + 1]
        v0, v1, v2 = v[i - 1], v[i], v[i + 1]
        denom = (t0 - t1) * (t0 - t2) * (t1 - t2)
        if denom != 0:
            a = (t2 * (v1 - v0) + t1 * (v0 - v2) + t0 * (v2 - v1)) / denom
            b = (t2 * t2 * (v0 - v1) + t1 * t1 * (v2 - v0)
                 + t0 * t0 * (v1 - v2)) / denom
            if a < 0:
                tv = -b / (2 * a)
                if t0 <= tv <= t2:
                    times[k] = tv
                    c = (v0 - a * t0 * t0 - b * t0)
                    amps[k] = a * tv * tv + b * tv + c
                    continue
        times[k] = t1
        amps[k] = v1
    return SpikeTrain(times=times, amplitudes=amps, threshold=threshold,
                      min_separation=min_separation, baseline=baseline)


@dataclass(frozen=True)
class IsiStats:
    isis: np.ndarray
    jisi_pairs: np.ndarray      # shape (n_spikes - 2, 2)
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    sufficient: bool


def isi_and_jisi(train, bin_width=None):
    """Interspike intervals, joint-ISI return-map pairs, and a histogram."""
    times = train.times if isinstance(train, SpikeTrain) else \
        np.asarray(train, dtype=float)
    if len(times) < 2:
        return IsiStats(isis=np.empty(0), jisi_pairs=np.empty((0, 2)),
                        hist_counts=np.empty(0, dtype=int),
                        hist_edges=np.empty(0), sufficient=False)
    isis = np.diff(times)
    pairs = np.column_stack([isis[:-1], isis[1:]]) if len(isis) >= 2 \
        else np.empty((0, 2))
    if bin_width is None:
        bin_width = max(float(np.median(isis)) / 10.0, 1e-12)
    hi = isis.max() + bin_width
    edges = np.arange(0.0, hi + bin_width, bin_width)
    counts, edges = np.histogram(isis, bins=edges)
    return IsiStats(isis=isis, jisi_pairs=pairs, hist_counts=counts,
                    hist_edges=edges, sufficient=len(times) >= 3)


def fundamental_isi(isis, bin_width=None, mode_floor=0.1):
    """Smallest histogram-mode center among modes above mode_floor * max."""
    isis = np.asarray(isis, dtype=float)
    if len(isis) == 0:
        return None
    if bin_width is None:
        bin_width = max(float(np.median(isis)) / 10.0, 1e-12)
    edges = np.arange(0.0, isis.max() + 2 * bin_width, bin_width)
    counts, edges = np.histogram(isis, bins=edges)
    if counts.max() == 0:
        return None
    floor_count = mode_floor * counts.max()
    centers = 0.5 * (edges[:-1] + edges[1:])
    padded = np.concatenate([[0], counts, [0]])
    is_mode = (padded[1:-1] >= padded[:-2]) & (padded[1:-1] >= padded[2:]) \
        & (counts > floor_count)
    mode_centers = centers[is_mode]
    return float(mode_centers.min()) if len(mode_centers) else None


@dataclass(frozen=True)
class BurstMetrics:
    bursts: tuple               # tuple of spike-time arrays
    spikes_per_burst: np.ndarray
    burst_period: float | None  # mean inter-onset interval, None if < 2 bursts


def burst_metrics(train, gap_factor=3.0):
    """Split a train into bursts where ISI > gap_factor * median(ISI)."""
    times = train.times if isinstance(train, SpikeTrain) else \
        np.asarray(train, dtype=float)
    if len(times) == 0:
        raise DomainError("burst_metrics needs at least one spike")
    if len(times) == 1:
        return BurstMetrics(bursts=(times,), spikes_per_burst=np.array([1]),
                            burst_period=None)
    isis = np.diff(times)
    gap = gap_factor * float(np.median(isis))
    cut = np.flatnonzero(isis > gap) + 1
    bursts = tuple(np.split(times, cut))
    onsets = np.array([b[0] for b in bursts])
    period = float(np.mean(np.diff(onsets))) if len(onsets) >= 2 else None
    return BurstMetrics(bursts=bursts,
                        spikes_per_burst=np.array([len(b) for b in bursts]),
                        burst_period=period)


@dataclass(frozen=True)
class FICurve:
    """Instantaneous frequency against drive current from a ramp run."""

    currents: np.ndarray
    freqs: np.ndarray
    spike_times: np.ndarray
    stim_window: tuple


def f_i_from_trace(trace, train, stim_window):
    """Build the f-I curve: 1/ISI against the input current at ISI midpoints."""
    times = train.times
    if len(times) < 2:
        return FICurve(currents=np.empty(0), freqs=np.empty(0),
                       spike_times=times, stim_window=stim_window)
    isis = np.diff(times)
    mids = 0.5 * (times[:-1] + times[1:])
    currents = np.interp(mids, trace.times, trace.input)
    return FICurve(currents=currents, freqs=1.0 / isis, spike_times=times,
                   stim_window=stim_window)


def classify_excitability(fi, onset_fraction=0.25, onset_window=0.3):
    """Hodgkin class from an f-I curve.

    "class3": spiking confined to the stimulus onset with silence after;
    "class1": onset frequency below onset_fraction of the maximum with a
    rising trend; "class2": otherwise (abrupt onset, nearly constant rate);
    "none": no spikes in the tested range.
    """
    t_on, t_off = fi.stim_window
    if len(fi.spike_times) == 0:
        return "none"
    span = t_off - t_on
    if len(fi.spike_times) <= 2 or len(fi.freqs) == 0:
        return "class3"
    if fi.spike_times[-1] < t_on + onset_window * span:
        return "class3"
    f_onset = fi.freqs[0]
    f_max = fi.freqs.max()
    slope = np.polyfit(fi.currents, fi.freqs, 1)[0] if len(fi.freqs) >= 3 \
        else 0.0
    if f_onset < onset_fraction * f_max and slope > 0:
        return "class1"
    return "class2"


def spike_latency(trace, stimulus_onset, **detect_kwargs):
    """Delay from stimulus onset to the first spike peak; None if no spike."""
    train = detect_spikes(trace, **detect_kwargs)
    after = train.times[train.times > stimulus_onset]
    if len(after) == 0:
        return None
    return float(after[0] - stimulus_onset)


@dataclass(frozen=True)
class LatencyFit:
    """tau(V) = tau0 + b * ln(1 / (V - e)): latency diverges as V -> e+."""

    tau0: float
    b: float
    e: float
    r_squared: float


def fit_latency_curve(amps, latencies):
    """Fit the logarithmic latency law over an amplitude sweep.

    Returns None when the fit fails. The capacitor-charging origin of the
    law makes latency linear in ln(V - e) with negative slope; e is found
    by maximizing the linear fit quality.
    """
    from scipy.optimize import minimize_scalar

    amps = np.asarray(amps, dtype=float)
    lats = np.asarray(latencies, dtype=float)
    if len(amps) < 4:
        return None

    def sse_for(e):
        x = np.log(amps - e)
        coef = np.polyfit(x, lats, 1)
        resid = lats - np.polyval(coef, x)
        return float(np.sum(resid ** 2))

    hi = amps.min() - 1e-6
    try:
        opt = minimize_scalar(sse_for, bounds=(1e-6, hi), method="bounded")
    except Exception:
        return None
    e = float(opt.x)
    x = np.log(amps - e)
    slope, intercept = np.polyfit(x, lats, 1)
    resid = lats - (slope * x + intercept)
    ss_tot = float(np.sum((lats - lats.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 0.0
    return LatencyFit(tau0=float(intercept), b=float(-slope), e=e,
                      r_squared=r2)


def phase_plane(trace, decimate=1, smooth=None):
    """(v_na, v_k) trajectory, optionally boxcar-smoothed then decimated."""
    vna = trace.v_na
    vk = trace.v_k
    if smooth is not None and smooth > 1:
        kernel = np.ones(smooth) / smooth
        vna = np.convolve(vna, kernel, mode="valid")
        vk = np.convolve(vk, kernel, mode="valid")
    return np.column_stack([vna[::decimate], vk[::decimate]])


@dataclass(frozen=True)
class AmplitudeRecurrence:
    pairs: np.ndarray           # (A_n, A_{n+1})
    mean: float
    skewness: float
    sufficient: bool


def amplitude_recurrence(train):
    """Adjacent spike-amplitude pairs plus mean and sample skewness."""
    amps = train.amplitudes if isinstance(train, SpikeTrain) else \
        np.asarray(train, dtype=float)
    if len(amps) < 3:
        return AmplitudeRecurrence(pairs=np.empty((0, 2)), mean=float("nan"),
                                   skewness=float("nan"), sufficient=False)
    pairs = np.column_stack([amps[:-1], amps[1:]])
    mean = float(np.mean(amps))
    dev = amps - mean
    m2 = float(np.mean(dev ** 2))
    skew = float(np.mean(dev ** 3) / m2 ** 1.5) if m2 > 0 else 0.0
    return AmplitudeRecurrence(pairs=pairs, mean=mean, skewness=skew,
                               sufficient=True)


def trace_energy(trace, t_a, t_b, static_power=0.0):
    """Trapezoidal supply energy over [t_a, t_b] above a static baseline."""
    mask = (trace.times >= t_a) & (trace.times <= t_b)
    if mask.sum() < 2:
        raise DomainError("energy window contains fewer than 2 samples")
    t = trace.times[mask]
    p = trace.p_supply[mask] - static_power
    return float(np.trapezoid(p, t))


def dynamic_spike_energy(trace, window=None, static_power=None,
                         **detect_kwargs):
    """Supply energy of one isolated spike above the static baseline, in J.

    window defaults to the stretch between the midpoints around the single
    detected spike; more than one spike without an explicit window is an
    error (lower the stimulus rate or pass a window).
    """
    if static_power is None:
        head = max(2, len(trace.times) // 50)
        static_power = float(np.median(trace.p_supply[:head]))
    if window is None:
        train = detect_spikes(trace, **detect_kwargs)
        if len(train) == 0:
            raise DomainError("no spike found in the trace")
        if len(train) > 1:
            raise DomainError(
                "multiple spikes in the trace; pass an explicit window or "
                "lower the stimulus rate")
        t_spike = train.times[0]
        span = trace.times[-1] - trace.times[0]
        t_a = max(trace.times[0], t_spike - 0.2 * span)
        t_b = min(trace.times[-1], t_spike + 0.5 * span)
        window = (t_a, t_b)
    return trace_energy(trace, window[0], window[1], static_power)


def mean_spike_energy(trace, static_power=None, train=None, **detect_kwargs):
    """Mean supply energy per spike over a sustained train.

    Integrates p_supply - static over [first - ISI/2, last + ISI/2] and
    divides by the spike count. Returns (energy_per_spike, n_spikes).
    """
    if train is None:
        train = detect_spikes(trace, **detect_kwargs)
    if len(train) < 2:
        raise DomainError("mean_spike_energy needs a sustained spike train")
    if static_power is None:
        head = max(2, len(trace.times) // 50)
        static_power = float(np.median(trace.p_supply[:head]))
    half = 0.5 * float(np.median(np.diff(train.times)))
    t_a = max(trace.times[0], train.times[0] - half)
    t_b = min(trace.times[-1], train.times[-1] + half)
    energy = trace_energy(trace, t_a, t_b, static_power)
    return energy / len(train), len(train)


def static_power_bounds(circ, v_th):
    """(lower, upper) standby power with both branches biased at V_th/2, V_th.

    Branch resistances are taken in the insulating state (u at the clamp
    floor).
    """
    from . import device, kernels

    def branch_res(pair):
        mat, geo = pair
        dev = device.pack_device(mat, geo)
        rch = kernels.dev_resistance(dev[kernels.D_UFLOOR], dev)
        rp = rch / (1.0 + rch * dev[kernels.D_GSH])
        return dev[kernels.D_RE] + rp

    r1 = branch_res(circ.dev1)
    r2 = branch_res(circ.dev2 if circ.dev2 is not None else circ.dev1)

    def power(v_dc):
        return v_dc * v_dc / r1 + v_dc * v_dc / r2

    return power(v_th / 2.0), power(v_th)


def switching_time(trace, rise_lo=0.1, rise_hi=0.9, min_amplitude_ratio=0.5):
    """Mean 10%-90% rise time of i1 over insulating->metallic transitions.

    Returns None when the trace has no transitions. Works best on
    per-step (adaptive) output where samples cluster inside the fast edge.
    """
    t = trace.times
    i = trace.i1
    i_max = i.max()
    if i_max <= 0:
        return None
    level = min_amplitude_ratio * i_max
    above = i >= level
    edges = np.flatnonzero(~above[:-1] & above[1:]) + 1
    if len(edges) == 0:
        return None
    rises = []
    for e in edges:
        # walk back to the local baseline before this transition
        lo = e
        while lo > 0 and i[lo - 1] < i[lo]:
            lo -= 1
        base = i[lo]
        hi = e
        while hi < len(i) - 1 and i[hi] < i[hi + 1]:
            hi += 1
        peak = i[hi]
        amp = peak - base
        if amp <= 0:
            continue
        lo_level = base + rise_lo * amp
        hi_level = base + rise_hi * amp
        seg_t = t[lo:hi + 1]
        seg_i = i[lo:hi + 1]
        t_lo = np.interp(lo_level, seg_i, seg_t)
        t_hi = np.interp(hi_level, seg_i, seg_t)
        if t_hi > t_lo:
            rises.append(t_hi - t_lo)
    return float(np.mean(rises)) if rises else None


@dataclass(frozen=True)
class RegimeMap:
    c1_values: np.ndarray
    c2_values: np.ndarray
    labels: list                # labels[i][j] for (c1_values[i], c2_values[j])
    errors: dict = field(default_factory=dict)


def regime_map(base_circuit, c1_values, c2_values, program, t_span,
               cfg=None, seed=0, burst_gap_factor=3.0, jobs=1,
               detect_kwargs=None):
    """Classify each (C1, C2) cell of a capacitance grid under a ramp drive.

    Labels: "class1-bursting", "class1-spiking", "class2" (spiking or
    subthreshold oscillation), "none", or "error". Per-cell failures are
    recorded in errors without aborting the map.
    """
    from dataclasses import replace as dc_replace

    from . import solver
    from joblib import Parallel, delayed

    c1_values = np.asarray(c1_values, dtype=float)
    c2_values = np.asarray(c2_values, dtype=float)
    stim_window = (program.segments[0].t0, program.segments[-1].t1)

    def run_cell(c1, c2):
        circ = dc_replace(base_circuit, c1=c1, c2=c2)
        trace = solver.integrate(circ, program, t_span, cfg, seed=seed)
        train = detect_spikes(trace, **(detect_kwargs or {}))
        fi = f_i_from_trace(trace, train, stim_window)
        label = classify_excitability(fi)
        if label == "class1" and len(train) >= 3:
            bm = burst_metrics(train, gap_factor=burst_gap_factor)
            multi = np.sum(bm.spikes_per_burst >= 2)
            if len(bm.bursts) >= 2 and multi >= 2:
                return "class1-bursting"
            return "class1-spiking"
        return label

    cells = [(i, j, c1, c2) for i, c1 in enumerate(c1_values)
             for j, c2 in enumerate(c2_values)]

    def safe(i, j, c1, c2):
        try:
            return i, j, run_cell(c1, c2), None
        except Exception as exc:  # per-cell isolation
            return i, j, "error", f"{type(exc).__name__}: {exc}"

    if jobs and jobs > 1:
        results = Parallel(n_jobs=jobs)(delayed(safe)(*c) for c in cells)
    else:
        results = [safe(*c) for c in cells]

    labels = [["none"] * len(c2_values) for _ in c1_values]
    errors = {}
    for i, j, label, err in results:
        labels[i][j] = label
        if err is not None:
            errors[(float(c1_values[i]), float(c2_values[j]))] = err
    return RegimeMap(c1_values=c1_values, c2_values=c2_values, labels=labels,
                     errors=errors)


@dataclass(frozen=True)
class AnalysisReport:
    """Aggregated figures of merit for one trace, JSON-friendly."""

    spike_times: list
    spike_amplitudes: list
    isis: list
    n_jisi_pairs: int
    burst_count: int | None
    spikes_per_burst: list
    burst_period: float | None
    excitability: str | None
    latency: float | None
    energy_per_spike: float | None
    resting_level: float
    oscillating: bool
    oscillation_freq: float | None
    clamp_floor_events: int
    clamp_ceil_events: int
    energy_residual: float

    def to_dict(self):
        out = {}
        for key, val in self.__dict__.items():
            if isinstance(val, float) and not math.isfinite(val):
                val = None
            out[key] = val
        return out


def build_report(trace, stimulus_onset=0.0, stim_window=None,
                 classify=False, **detect_kwargs):
    """Run the standard analysis battery over one trace."""
    train = detect_spikes(trace, **detect_kwargs)
    stats = isi_and_jisi(train)
    head = max(2, len(trace.v_k) // 50)
    rest = float(np.median(trace.v_k[:head]))
    burst_count = None
    spikes_per_burst = []
    burst_period = None
    if len(train) >= 1:
        bm = burst_metrics(train)
        burst_count = len(bm.bursts)
        spikes_per_burst = bm.spikes_per_burst.tolist()
        burst_period = bm.burst_period
    excitability = None
    if classify and stim_window is not None:
        excitability = classify_excitability(
            f_i_from_trace(trace, train, stim_window))
    latency = None
    after = train.times[train.times > stimulus_onset]
    if len(after):
        latency = float(after[0] - stimulus_onset)
    energy = None
    if len(train) >= 2:
        try:
            energy = mean_spike_energy(trace, train=train)[0]
        except DomainError:
            energy = None
    try:
        osc, f_osc, _ = detect_subthreshold_oscillation(trace)
    except ConfigurationError:
        osc, f_osc = False, None
    return AnalysisReport(
        spike_times=train.times.tolist(),
        spike_amplitudes=train.amplitudes.tolist(),
        isis=stats.isis.tolist(),
        n_jisi_pairs=int(len(stats.jisi_pairs)),
        burst_count=burst_count,
        spikes_per_burst=spikes_per_burst,
        burst_period=burst_period,
        excitability=excitability,
        latency=latency,
        energy_per_spike=energy,
        resting_level=rest,
        oscillating=bool(osc),
        oscillation_freq=f_osc,
        clamp_floor_events=trace.clamp_floor_events,
        clamp_ceil_events=trace.clamp_ceil_events,
        energy_residual=trace.energy_residual(),
    )


def detect_subthreshold_oscillation(trace, window=None, min_amplitude=5e-3,
                                    max_amplitude=0.3):
    """Dominant spectral component of v_k between 5 mV and the spike scale.

    Returns (oscillating, frequency, amplitude). Requires a uniform trace.
    """
    t = trace.times
    if window is not None:
        mask = (t >= window[0]) & (t <= window[1])
        t = t[mask]
        v = trace.v_k[mask]
    else:
        v = trace.v_k
    if len(t) < 16:
        return False, None, 0.0
    dt = np.diff(t)
    if dt.max() > 1.5 * dt.min():
        raise ConfigurationError("oscillation detector needs a uniform trace")
    v = v - np.mean(v)
    spec = np.abs(np.fft.rfft(v)) * 2.0 / len(v)
    freqs = np.fft.rfftfreq(len(v), float(dt.mean()))
    spec[0] = 0.0
    k = int(np.argmax(spec))
    amp = float(spec[k])
    return (min_amplitude < amp < max_amplitude), float(freqs[k]), amp
