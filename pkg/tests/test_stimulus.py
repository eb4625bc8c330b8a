"""Stimulus grammar, sampling, and noise determinism tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mottneuron.errors import StimulusParseError
from mottneuron.stimulus import (
    NoiseSpec,
    Segment,
    StimulusProgram,
    breakpoints,
    make_noise_stream,
    parse_protocol,
    render,
    sample,
    sample_many,
    to_current_clamp,
)


class TestParse:
    def test_single_dc(self):
        p = parse_protocol("dc t0=0us t1=35ms amp=82.5uA")
        assert p.mode == "current"
        assert len(p.segments) == 1
        s = p.segments[0]
        assert (s.kind, s.t0, s.t1) == ("dc", 0.0, 35e-3)
        assert s.amp == pytest.approx(82.5e-6)

    def test_empty_program(self):
        p = parse_protocol("")
        assert p.segments == ()
        assert p.span == 0.0
        for t in (0.0, 1e-3, 5.0):
            assert sample(p, t) == 0.0

    def test_comments_and_blank_lines(self):
        p = parse_protocol("# header\n\ndc t0=0 t1=1ms amp=10uA  # tail\n")
        assert len(p.segments) == 1

    def test_mode_inference_voltage(self):
        p = parse_protocol("pulse t0=0 width=10us amp=0.25V")
        assert p.mode == "voltage"

    def test_unknown_keyword(self):
        with pytest.raises(StimulusParseError, match="unknown keyword"):
            parse_protocol("wiggle t0=0 t1=1ms amp=1uA")

    def test_error_carries_line(self):
        with pytest.raises(StimulusParseError) as err:
            parse_protocol("dc t0=0 t1=1ms amp=1uA\nbogus t0=0 t1=2ms amp=1uA")
        assert err.value.line == 2

    def test_unit_mismatch_in_current_mode(self):
        text = "mode current\npulse t0=0 width=10us amp=0.25V"
        with pytest.raises(StimulusParseError, match="isolator"):
            parse_protocol(text)

    def test_mixed_units_rejected(self):
        text = "dc t0=0 t1=1ms amp=10uA\npulse t0=2ms width=10us amp=0.5V"
        with pytest.raises(StimulusParseError, match="disagree"):
            parse_protocol(text)

    def test_overlap_rejected(self):
        text = "dc t0=0 t1=1ms amp=1uA\ndc t0=0.5ms t1=2ms amp=2uA"
        with pytest.raises(StimulusParseError, match="overlap"):
            parse_protocol(text)

    def test_zap_frequency_checks(self):
        with pytest.raises(StimulusParseError, match="frequencies"):
            parse_protocol("zap t0=0 t1=1ms amp=0.5V f0=0Hz f1=10kHz")

    def test_doublet_geometry_checks(self):
        with pytest.raises(StimulusParseError, match="overlap"):
            parse_protocol("doublet t0=0 width=10us gap=5us amp=1uA")

    def test_isolator_gain_units(self):
        p = parse_protocol("isolator gain=0.1mA/V\npulse t0=0 width=1us amp=1V")
        assert p.isolator_gain == pytest.approx(1e-4)


class TestSampling:
    def test_doublet_equals_two_pulses(self):
        doublet = parse_protocol("doublet t0=0 width=10us gap=20us amp=0.25V")
        pulses = parse_protocol(
            "pulse t0=0 width=10us amp=0.25V\n"
            "pulse t0=20us width=10us amp=0.25V")
        times = np.linspace(0.0, 35e-6, 100_000)
        np.testing.assert_array_equal(sample_many(doublet, times),
                                      sample_many(pulses, times))

    def test_doublet_second_amplitude(self):
        p = parse_protocol("doublet t0=0 width=5us gap=20us amp=1uA amp2=2uA")
        assert sample(p, 2e-6) == pytest.approx(1e-6)
        assert sample(p, 22e-6) == pytest.approx(2e-6)

    def test_ramp_midpoint(self):
        p = parse_protocol("ramp t0=0 t1=2ms from=0uA to=150uA")
        assert sample(p, 1e-3) == pytest.approx(75e-6)

    def test_out_of_span_is_zero(self):
        p = parse_protocol("dc t0=1ms t1=2ms amp=5uA")
        assert sample(p, 0.5e-3) == 0.0
        assert sample(p, 2.5e-3) == 0.0

    def test_zap_matches_chirp_oracle(self):
        p = parse_protocol("zap t0=0 t1=10ms amp=0.6V f0=1kHz f1=20kHz")
        rng = np.random.default_rng(0)
        for t in rng.uniform(0, 10e-3, 200):
            # chirp: phase is the integral of the linearly swept frequency
            phase = 1e3 * t + 0.5 * (20e3 - 1e3) * t * t / 10e-3
            assert sample(p, t) == pytest.approx(0.6 * math.sin(2 * math.pi * phase))

    def test_zap_instantaneous_frequency(self):
        p = parse_protocol("zap t0=0 t1=100ms amp=1V f0=1kHz f1=11kHz")
        t = np.linspace(0, 100e-3, 2_000_001)
        v = sample_many(p, t)
        crossings = t[1:][(v[:-1] < 0) & (v[1:] >= 0)]
        # total cycles = f0*T + (f1-f0)*T/2 = 600 exactly for this sweep
        assert len(crossings) == 600
        # first full cycle sits where f ~ 1.05 kHz, the last where f ~ 11 kHz
        first = 1.0 / (crossings[1] - crossings[0])
        last = 1.0 / (crossings[-1] - crossings[-2])
        assert first == pytest.approx(1.05e3, rel=0.1)
        assert last == pytest.approx(11e3, rel=0.05)

    def test_breakpoints(self):
        p = parse_protocol("pulse t0=0 width=10us amp=1uA t1=30us\n"
                           "dc t0=30us t1=50us amp=2uA")
        pts = breakpoints(p)
        assert set(np.round(pts * 1e6, 9)) == {0.0, 10.0, 30.0, 50.0}


class TestNoise:
    PROGRAM = parse_protocol("dc t0=0 t1=100ms amp=82.5uA\nnoise pp=50uA hold=100ns")

    def test_bounds_and_mean(self):
        ns = make_noise_stream(self.PROGRAM, seed=7, t_end=100e-3)
        assert len(ns.values) >= 1_000_000
        assert ns.values.min() >= -25e-6
        assert ns.values.max() <= 25e-6
        assert abs(ns.values.mean()) < 0.5e-6

    def test_deterministic(self):
        a = make_noise_stream(self.PROGRAM, seed=42, t_end=1e-3)
        b = make_noise_stream(self.PROGRAM, seed=42, t_end=1e-3)
        np.testing.assert_array_equal(a.values, b.values)
        c = make_noise_stream(self.PROGRAM, seed=43, t_end=1e-3)
        assert not np.array_equal(a.values, c.values)

    def test_run_index_decorrelates(self):
        a = make_noise_stream(self.PROGRAM, seed=42, t_end=1e-3, run_index=0)
        b = make_noise_stream(self.PROGRAM, seed=42, t_end=1e-3, run_index=1)
        assert not np.array_equal(a.values, b.values)

    def test_piecewise_constant_over_hold(self):
        ns = make_noise_stream(self.PROGRAM, seed=3, t_end=10e-6)
        assert ns.at(0.0) == ns.at(99e-9)
        assert ns.at(0.0) != ns.at(101e-9)

    def test_vanishing_autocorrelation_beyond_hold(self):
        ns = make_noise_stream(self.PROGRAM, seed=11, t_end=100e-3)
        v = ns.values[:1_000_000]
        v = v - v.mean()
        corr = float(np.dot(v[:-1], v[1:]) / np.dot(v, v))
        assert abs(corr) < 0.01

    def test_no_noise_stream(self):
        p = parse_protocol("dc t0=0 t1=1ms amp=1uA")
        ns = make_noise_stream(p, seed=1, t_end=1e-3)
        assert ns.at(0.5e-3) == 0.0


class TestIsolatorConversion:
    def test_isolator_085(self):
        p = parse_protocol("pulse t0=0 width=15us amp=0.85V")
        q = to_current_clamp(p)
        assert q.mode == "current"
        assert q.segments[0].amp == pytest.approx(85e-6)

    def test_zero_maps_to_zero(self):
        p = parse_protocol("pulse t0=0 width=15us amp=0V")
        assert to_current_clamp(p).segments[0].amp == 0.0

    def test_custom_gain(self):
        p = parse_protocol("pulse t0=0 width=15us amp=0.5V")
        q = to_current_clamp(p, gain=2e-4)
        assert q.segments[0].amp == pytest.approx(100e-6)

    def test_noise_converts_too(self):
        p = parse_protocol("noise pp=0.5V hold=1us\npulse t0=0 width=1us amp=1V")
        q = to_current_clamp(p)
        assert q.noise.pp == pytest.approx(0.5e-4)

    def test_current_program_passthrough(self):
        p = parse_protocol("dc t0=0 t1=1ms amp=10uA")
        assert to_current_clamp(p) is p


_amp = st.floats(min_value=-1e-3, max_value=1e-3, allow_nan=False).filter(
    lambda x: x == 0 or abs(x) > 1e-9)
_dur = st.floats(min_value=1e-7, max_value=1e-3, allow_nan=False)


@st.composite
def _programs(draw):
    segments = []
    t = 0.0
    for _ in range(draw(st.integers(min_value=0, max_value=5))):
        t += draw(_dur)
        kind = draw(st.sampled_from(["dc", "pulse", "doublet", "ramp", "zap",
                                     "silence"]))
        dur = draw(_dur)
        if kind == "dc":
            seg = Segment("dc", t, t + dur, amp=draw(_amp))
        elif kind == "pulse":
            width = dur * draw(st.floats(min_value=0.1, max_value=1.0))
            seg = Segment("pulse", t, t + dur, amp=draw(_amp), width=width)
        elif kind == "doublet":
            width = dur * 0.2
            gap = dur * draw(st.floats(min_value=0.25, max_value=0.7))
            seg = Segment("doublet", t, t + dur, amp=draw(_amp), width=width,
                          gap=gap, amp2=draw(_amp))
        elif kind == "ramp":
            seg = Segment("ramp", t, t + dur, amp=draw(_amp), amp2=draw(_amp))
        elif kind == "zap":
            seg = Segment("zap", t, t + dur, amp=draw(_amp),
                          f0=draw(st.floats(min_value=1.0, max_value=1e6)),
                          f1=draw(st.floats(min_value=1.0, max_value=1e6)))
        else:
            seg = Segment("silence", t, t + dur)
        segments.append(seg)
        t = seg.t1
    noise = draw(st.one_of(st.none(), st.just(NoiseSpec(pp=1e-6, hold=1e-7))))
    return StimulusProgram(mode=draw(st.sampled_from(["current", "voltage"])),
                           segments=tuple(segments), noise=noise)


@settings(max_examples=80, deadline=None)
@given(_programs())
def test_render_parse_round_trip(program):
    assert parse_protocol(render(program)) == program
