import math

import numpy as np
import pytest

from coughscreen.audio_io import AudioClip
from coughscreen.augment import (KINDS, LEGAL_RANGES, AugmentSpec, LabeledClip, apply,
                                 expand_minority, random_spec)
from coughscreen.errors import InvalidMagnitude, SingleClassInput

SR = 16000


def _clip(rng, seconds=1.0):
    return AudioClip(rng.standard_normal(int(seconds * SR)) * 0.2, SR)


def _tone(freq, seconds=1.0):
    t = np.arange(int(seconds * SR)) / SR
    return AudioClip(0.5 * np.sin(2 * np.pi * freq * t), SR)


def _peak_hz(x):
    """Spectral peak refined by parabolic interpolation of the log magnitude."""
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    k = int(np.argmax(spec))
    a, b, c = np.log(spec[k - 1:k + 2])
    return (k + 0.5 * (a - c) / (a - 2 * b + c)) * SR / len(x)


def _rms(x):
    return math.sqrt(float(np.mean(x * x)))


class TestSpec:
    @pytest.mark.parametrize("kind,bad", [("pitch", 2.5), ("speed", 0.5), ("time_shift", -1.5),
                                          ("gain", 0.0), ("noise", 5.0), ("gain", float("nan"))])
    def test_out_of_range(self, kind, bad):
        with pytest.raises(InvalidMagnitude):
            AugmentSpec(kind, bad)

    def test_unknown_kind(self):
        with pytest.raises(InvalidMagnitude):
            AugmentSpec("reverb", 1.0)

    def test_random_spec_in_range(self, rng):
        seen = set()
        for _ in range(300):
            s = random_spec(rng)
            lo, hi = LEGAL_RANGES[s.kind]
            assert lo <= s.magnitude <= hi
            seen.add(s.kind)
        assert seen == set(KINDS)


class TestApply:
    def test_gain_identity_and_scaling(self, rng):
        clip = _clip(rng)
        np.testing.assert_array_equal(apply(clip, AugmentSpec("gain", 1.0)).samples, clip.samples)
        np.testing.assert_array_equal(apply(clip, AugmentSpec("gain", 0.5)).samples,
                                      clip.samples * 0.5)

    def test_time_shift_is_circular(self, rng):
        clip = _clip(rng, 5.0)
        out = apply(clip, AugmentSpec("time_shift", 0.5)).samples
        i = np.arange(80000)
        np.testing.assert_array_equal(out[(i + 8000) % 80000], clip.samples)

    def test_noise_snr(self):
        clip = AudioClip(np.sin(2 * np.pi * 440 * np.arange(5 * SR) / SR) * math.sqrt(2), SR)
        assert _rms(clip.samples) == pytest.approx(1.0, rel=1e-3)
        out = apply(clip, AugmentSpec("noise", 20.0, seed=3))
        assert _rms(out.samples - clip.samples) == pytest.approx(0.1, rel=0.05)

    def test_noise_on_silence_stays_silent(self):
        out = apply(AudioClip(np.zeros(100), SR), AugmentSpec("noise", 20.0))
        assert np.all(out.samples == 0)

    @pytest.mark.parametrize("ratio", [0.9, 1.0, 1.1])
    def test_speed_scales_duration(self, rng, ratio):
        clip = _clip(rng)
        out = apply(clip, AugmentSpec("speed", ratio))
        assert abs(len(out) - len(clip) / ratio) <= 1

    def test_speed_raises_tone(self):
        out = apply(_tone(1000), AugmentSpec("speed", 1.1))
        assert abs(1200 * math.log2(_peak_hz(out.samples) / 1100)) < 5

    @pytest.mark.parametrize("semitones", [-2.0, -0.7, 1.3, 2.0])
    @pytest.mark.parametrize("freq", [150, 1000, 4000])
    def test_pitch_keeps_duration_and_moves_tone(self, semitones, freq):
        clip = _tone(freq)
        out = apply(clip, AugmentSpec("pitch", semitones))
        assert len(out) == len(clip)
        cents = 1200 * math.log2(_peak_hz(out.samples) / (freq * 2 ** (semitones / 12)))
        assert abs(cents) < 5

    def test_identity_points(self, rng):
        clip = _clip(rng)
        for spec in (AugmentSpec("pitch", 0.0), AugmentSpec("speed", 1.0)):
            out = apply(clip, spec)
            assert len(out) == len(clip)
            assert np.max(np.abs(out.samples - clip.samples)) <= 1e-3

    def test_pure_and_rate_preserving(self, rng):
        clip = _clip(rng)
        for _ in range(20):
            spec = random_spec(rng)
            a, b = apply(clip, spec), apply(clip, spec)
            np.testing.assert_array_equal(a.samples, b.samples)
            assert a.sample_rate_hz == SR
            assert np.all(np.isfinite(a.samples))


def _records(n_pos, n_neg, length=200):
    rng = np.random.default_rng(0)
    return ([LabeledClip(AudioClip(rng.standard_normal(length), SR), 1, f"p{i}") for i in range(n_pos)]
            + [LabeledClip(AudioClip(rng.standard_normal(length), SR), 0, f"n{i}") for i in range(n_neg)])


class TestExpandMinority:
    def test_challenge_imbalance(self):
        recs = _records(75, 965, length=64)
        out = expand_minority(recs, 0.5, seed=1)
        n_pos = sum(r.label for r in out)
        assert n_pos >= 483 and n_pos == math.ceil(0.5 * 965)
        assert len(out) - n_pos == 965
        assert out[:len(recs)] == recs

    def test_balanced_and_zero_target_unchanged(self):
        recs = _records(5, 5)
        assert expand_minority(recs, 1.0, seed=0) == recs
        skewed = _records(2, 6)
        assert expand_minority(skewed, 0.0, seed=0) == skewed

    def test_originals_untouched(self):
        recs = _records(3, 9)
        before = [r.clip.samples.copy() for r in recs]
        expand_minority(recs, 1.0, seed=4)
        for r, b in zip(recs, before):
            np.testing.assert_array_equal(r.clip.samples, b)

    def test_deterministic(self):
        recs = _records(3, 9)
        a = expand_minority(recs, 1.0, seed=4)
        b = expand_minority(recs, 1.0, seed=4)
        assert [r.name for r in a] == [r.name for r in b]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.clip.samples, y.clip.samples)

    def test_single_class(self):
        with pytest.raises(SingleClassInput):
            expand_minority(_records(0, 4), 1.0, seed=0)
