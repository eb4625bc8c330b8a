"""Stimulus programs: a line-oriented protocol grammar, sampling, and noise.

Grammar (one directive per line, ``#`` comments, blank lines ignored)::

    mode current|voltage          # optional; inferred from amplitude units
    isolator gain=0.1mA/V         # optional; A/V, used by to_current_clamp
    noise pp=50uA hold=100ns      # optional; zero-mean uniform, held constant
                                  # over each hold interval
    dc      t0=0 t1=35ms amp=82.5uA
    pulse   t0=0 width=10us amp=0.25V [t1=...]
    doublet t0=0 width=10us gap=40us amp=0.5V [amp2=1.0V] [t1=...]
    ramp    t0=0 t1=3ms from=0uA to=150uA
    zap     t0=0 t1=100ms amp=0.6V f0=1kHz f1=20kHz
    silence t0=0 t1=1ms

Times accept s/ms/us/ns/ps, amplitudes V/mV or A/mA/uA/nA, frequencies
Hz..GHz; bare numbers are SI. Segments may leave gaps (sampled as 0) but must
not overlap. A doublet's ``gap`` is onset-to-onset, so it equals two pulses
at t0 and t0+gap.
"""

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import StimulusParseError

_KIND_CODES = {
    "dc": kernels.SEG_DC,
    "pulse": kernels.SEG_PULSE,
    "doublet": kernels.SEG_DOUBLET,
    "ramp": kernels.SEG_RAMP,
    "zap": kernels.SEG_ZAP,
    "silence": kernels.SEG_SILENCE,
}

_TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9, "ps": 1e-12}
_CURRENT_UNITS = {"a": 1.0, "ma": 1e-3, "ua": 1e-6, "na": 1e-9}
_VOLTAGE_UNITS = {"v": 1.0, "mv": 1e-3}
_FREQ_UNITS = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}

_QTY_RE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)([a-zA-Zµ/]*)$")


@dataclass(frozen=True)
class Segment:
    """One stimulus segment. Unused kind-specific fields stay None."""

    kind: str
    t0: float
    t1: float
    amp: float = 0.0
    width: float | None = None
    gap: float | None = None
    amp2: float | None = None
    f0: float | None = None
    f1: float | None = None


@dataclass(frozen=True)
class NoiseSpec:
    pp: float          # peak-to-peak amplitude, program units
    hold: float = 100e-9


@dataclass(frozen=True)
class StimulusProgram:
    mode: str = "current"  # "current" or "voltage"
    segments: tuple = ()
    noise: NoiseSpec | None = None
    isolator_gain: float = 1e-4

    @property
    def span(self):
        return max((s.t1 for s in self.segments), default=0.0)

    def sample(self, t, noise_stream=None):
        return sample(self, t, noise_stream)


def _parse_quantity(text, unit_class, line_no, col):
    m = _QTY_RE.match(text.replace("µ", "u"))
    if not m:
        raise StimulusParseError(f"cannot parse quantity {text!r}", line_no, col)
    value = float(m.group(1))
    suffix = m.group(2)
    if suffix == "":
        return value, None
    key = suffix.lower()
    if unit_class == "time" and key in _TIME_UNITS:
        return value * _TIME_UNITS[key], None
    if unit_class == "freq" and key in _FREQ_UNITS:
        return value * _FREQ_UNITS[key], None
    if unit_class == "amp":
        if key in _CURRENT_UNITS:
            return value * _CURRENT_UNITS[key], "current"
        if key in _VOLTAGE_UNITS:
            return value * _VOLTAGE_UNITS[key], "voltage"
    if unit_class == "gain" and key.endswith("/v"):
        base = key[:-2]
        if base in _CURRENT_UNITS:
            return value * _CURRENT_UNITS[base], None
    raise StimulusParseError(
        f"unknown {unit_class} unit {suffix!r} in {text!r}", line_no, col)


def _fields(tokens, line_no):
    out = {}
    col = 0
    for tok in tokens:
        col = col + 1
        if "=" not in tok:
            raise StimulusParseError(f"expected key=value, got {tok!r}",
                                     line_no, col)
        key, _, val = tok.partition("=")
        if key in out:
            raise StimulusParseError(f"duplicate key {key!r}", line_no, col)
        out[key] = (val, col)
    return out


_SEGMENT_KEYS = {
    "dc": ({"t0", "t1", "amp"}, set()),
    "pulse": ({"t0", "width", "amp"}, {"t1"}),
    "doublet": ({"t0", "width", "gap", "amp"}, {"t1", "amp2"}),
    "ramp": ({"t0", "t1", "to"}, {"from"}),
    "zap": ({"t0", "t1", "amp", "f0", "f1"}, set()),
    "silence": ({"t0", "t1"}, set()),
}


def parse_protocol(text):
    """Parse protocol text into a StimulusProgram.

    The clamp mode is inferred from amplitude units unless a ``mode`` line is
    present; voltage amplitudes inside a current-clamp program are rejected
    (convert explicitly with to_current_clamp).
    """
    explicit_mode = None
    inferred_mode = None
    inferred_where = None
    segments = []
    noise = None
    gain = 1e-4

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        word = tokens[0].lower()

        if word == "mode":
            if len(tokens) != 2 or tokens[1] not in ("current", "voltage"):
                raise StimulusParseError("mode must be 'current' or 'voltage'",
                                         line_no, 1)
            explicit_mode = tokens[1]
            continue
        if word == "isolator":
            kv = _fields(tokens[1:], line_no)
            if set(kv) != {"gain"}:
                raise StimulusParseError("isolator takes exactly gain=...",
                                         line_no, 1)
            gain, _ = _parse_quantity(kv["gain"][0], "gain", line_no,
                                      kv["gain"][1])
            continue
        if word == "noise":
            kv = _fields(tokens[1:], line_no)
            unknown = set(kv) - {"pp", "hold"}
            if unknown or "pp" not in kv:
                raise StimulusParseError("noise takes pp=... [hold=...]",
                                         line_no, 1)
            pp, unit_kind = _parse_quantity(kv["pp"][0], "amp", line_no,
                                            kv["pp"][1])
            if pp < 0:
                raise StimulusParseError("noise pp must be >= 0", line_no, 1)
            hold = 100e-9
            if "hold" in kv:
                hold, _ = _parse_quantity(kv["hold"][0], "time", line_no,
                                          kv["hold"][1])
                if hold <= 0:
                    raise StimulusParseError("noise hold must be > 0",
                                             line_no, 1)
            noise = NoiseSpec(pp=pp, hold=hold)
            if unit_kind is not None:
                if inferred_mode is None:
                    inferred_mode, inferred_where = unit_kind, line_no
                elif inferred_mode != unit_kind:
                    raise StimulusParseError(
                        f"amplitude units disagree with {inferred_mode} units "
                        f"first seen on line {inferred_where}", line_no, 1)
            continue

        if word not in _SEGMENT_KEYS:
            raise StimulusParseError(f"unknown keyword {word!r}", line_no, 1)
        required, optional = _SEGMENT_KEYS[word]
        kv = _fields(tokens[1:], line_no)
        missing = required - set(kv)
        unknown = set(kv) - required - optional
        if missing:
            raise StimulusParseError(
                f"{word} is missing {sorted(missing)}", line_no, 1)
        if unknown:
            raise StimulusParseError(
                f"{word} got unknown keys {sorted(unknown)}", line_no, 1)

        def qty(key, unit_class, default=None):
            if key not in kv:
                return default, None
            return _parse_quantity(kv[key][0], unit_class, line_no, kv[key][1])

        t0, _ = qty("t0", "time")
        width, _ = qty("width", "time")
        gap, _ = qty("gap", "time")
        unit_kind = None
        amp = 0.0
        amp2 = None
        f0 = f1 = None
        if word == "ramp":
            a_from, k1 = qty("from", "amp", default=0.0)
            a_to, k2 = qty("to", "amp")
            amp, amp2 = a_from, a_to
            unit_kind = k1 or k2
        elif word != "silence":
            amp, unit_kind = qty("amp", "amp")
            if word == "doublet":
                amp2, k2 = qty("amp2", "amp", default=amp)
                unit_kind = unit_kind or k2
        if word == "zap":
            f0, _ = qty("f0", "freq")
            f1, _ = qty("f1", "freq")
            if f0 <= 0 or f1 <= 0:
                raise StimulusParseError("zap frequencies must be > 0",
                                         line_no, 1)

        if word == "pulse":
            t1, _ = qty("t1", "time", default=t0 + width)
        elif word == "doublet":
            t1, _ = qty("t1", "time", default=t0 + gap + width)
        else:
            t1, _ = qty("t1", "time")

        if t1 <= t0:
            raise StimulusParseError(f"t1 must exceed t0 (got {t0} .. {t1})",
                                     line_no, 1)
        if word == "pulse" and t0 + width > t1 * (1 + 1e-12):
            raise StimulusParseError("pulse width exceeds segment span",
                                     line_no, 1)
        if word == "doublet":
            if gap < width:
                raise StimulusParseError("doublet pulses overlap (gap < width)",
                                         line_no, 1)
            if t0 + gap + width > t1 * (1 + 1e-12):
                raise StimulusParseError("doublet does not fit in its span",
                                         line_no, 1)

        if unit_kind is not None:
            if inferred_mode is None:
                inferred_mode, inferred_where = unit_kind, line_no
            elif inferred_mode != unit_kind:
                raise StimulusParseError(
                    f"amplitude units disagree with {inferred_mode} units "
                    f"first seen on line {inferred_where}", line_no, 1)

        segments.append(Segment(kind=word, t0=t0, t1=t1, amp=amp, width=width,
                                gap=gap, amp2=amp2, f0=f0, f1=f1))

    mode = explicit_mode or inferred_mode or "current"
    if explicit_mode == "current" and inferred_mode == "voltage":
        raise StimulusParseError(
            "voltage amplitudes in a current-clamp program; run "
            "to_current_clamp with the isolator gain or fix the units",
            inferred_where, 1)
    if explicit_mode == "voltage" and inferred_mode == "current":
        raise StimulusParseError(
            "current amplitudes in a voltage-clamp program", inferred_where, 1)

    segments.sort(key=lambda s: (s.t0, s.t1))
    for a, b in zip(segments, segments[1:]):
        if b.t0 < a.t1 * (1 - 1e-12):
            raise StimulusParseError(
                f"segments overlap: [{a.t0:g}, {a.t1:g}] and "
                f"[{b.t0:g}, {b.t1:g}]")

    return StimulusProgram(mode=mode, segments=tuple(segments), noise=noise,
                           isolator_gain=gain)


def render(program):
    """Render a program back to canonical protocol text (reparses equal)."""
    lines = [f"mode {program.mode}", f"isolator gain={program.isolator_gain!r}"]
    if program.noise is not None:
        lines.append(f"noise pp={program.noise.pp!r} hold={program.noise.hold!r}")
    for s in program.segments:
        parts = [s.kind, f"t0={s.t0!r}", f"t1={s.t1!r}"]
        if s.kind == "ramp":
            parts.append(f"from={s.amp!r}")
            parts.append(f"to={s.amp2!r}")
        elif s.kind != "silence":
            parts.append(f"amp={s.amp!r}")
        if s.width is not None:
            parts.append(f"width={s.width!r}")
        if s.gap is not None:
            parts.append(f"gap={s.gap!r}")
        if s.kind == "doublet":
            parts.append(f"amp2={s.amp2!r}")
        if s.kind == "zap":
            parts.append(f"f0={s.f0!r}")
            parts.append(f"f1={s.f1!r}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def to_current_clamp(program, gain=None):
    """Convert a voltage program to current clamp via the isolator gain."""
    if program.mode == "current":
        return program
    g = program.isolator_gain if gain is None else gain
    segs = tuple(
        replace(s, amp=s.amp * g,
                amp2=None if s.amp2 is None else s.amp2 * g)
        for s in program.segments
    )
    noise = None
    if program.noise is not None:
        noise = replace(program.noise, pp=program.noise.pp * g)
    return StimulusProgram(mode="current", segments=segs, noise=noise,
                           isolator_gain=g)


# ---------------------------------------------------------------------------
# packing and sampling
# ---------------------------------------------------------------------------


def pack_segments(program):
    """Pack segments into (kind_codes, params) arrays for the kernels."""
    n = len(program.segments)
    kinds = np.empty(n, dtype=np.int64)
    segp = np.zeros((n, 6))
    for k, s in enumerate(program.segments):
        kinds[k] = _KIND_CODES[s.kind]
        segp[k, 0] = s.t0
        segp[k, 1] = s.t1
        if s.kind == "dc":
            segp[k, 2] = s.amp
        elif s.kind == "pulse":
            segp[k, 2] = s.amp
            segp[k, 3] = s.width
        elif s.kind == "doublet":
            segp[k, 2] = s.amp
            segp[k, 3] = s.width
            segp[k, 4] = s.gap
            segp[k, 5] = s.amp if s.amp2 is None else s.amp2
        elif s.kind == "ramp":
            segp[k, 2] = s.amp
            segp[k, 3] = s.amp2
        elif s.kind == "zap":
            segp[k, 2] = s.amp
            segp[k, 3] = s.f0
            segp[k, 4] = s.f1
    return kinds, segp


def breakpoints(program, t_end=None):
    """Sorted unique discontinuity times (segment edges, pulse edges)."""
    pts = set()
    for s in program.segments:
        pts.add(s.t0)
        pts.add(s.t1)
        if s.kind == "pulse":
            pts.add(s.t0 + s.width)
        elif s.kind == "doublet":
            pts.update((s.t0 + s.width, s.t0 + s.gap, s.t0 + s.gap + s.width))
    if t_end is not None:
        pts = {p for p in pts if p < t_end}
        pts.add(t_end)
    return np.array(sorted(pts))


@dataclass(frozen=True)
class NoiseStream:
    """Precomputed piecewise-constant noise samples for one integration run."""

    values: np.ndarray
    hold: float

    def at(self, t):
        return kernels.noise_at(t, self.values, self.hold)


_EMPTY_NOISE = NoiseStream(values=np.zeros(0), hold=0.0)


def make_noise_stream(program, seed, t_end, run_index=0):
    """Deterministic uniform noise held constant over each hold interval.

    The stream is seeded by (seed, run_index), so sweeps can derive
    independent per-run streams from one experiment seed.
    """
    if program.noise is None or program.noise.pp == 0.0:
        return _EMPTY_NOISE
    hold = program.noise.hold
    n = int(math.ceil(t_end / hold)) + 2
    rng = np.random.default_rng([int(seed) & 0x7FFFFFFF, int(run_index)])
    half = 0.5 * program.noise.pp
    return NoiseStream(values=rng.uniform(-half, half, n), hold=hold)


def sample(program, t, noise_stream=None):
    """Program value at time t; 0 outside all segments."""
    kinds, segp = pack_segments(program)
    base = kernels.stim_value(float(t), kinds, segp)
    if noise_stream is not None:
        base += noise_stream.at(float(t))
    return base


def sample_many(program, times, noise_stream=None):
    kinds, segp = pack_segments(program)
    out = np.empty(len(times))
    for k, t in enumerate(np.asarray(times, dtype=float)):
        v = kernels.stim_value(t, kinds, segp)
        if noise_stream is not None:
            v += noise_stream.at(t)
        out[k] = v
    return out
