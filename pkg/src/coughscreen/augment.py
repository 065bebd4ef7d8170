"""Waveform-domain augmentation for minority-class expansion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from .audio_io import AudioClip
from .errors import InvalidMagnitude, SingleClassInput

KINDS = ("pitch", "speed", "time_shift", "gain", "noise")

# (low, high) per kind: semitones, speed ratio, seconds, linear gain, SNR in dB
LEGAL_RANGES = {
    "pitch": (-2.0, 2.0),
    "speed": (0.9, 1.1),
    "time_shift": (-1.0, 1.0),
    "gain": (0.5, 1.5),
    "noise": (15.0, 30.0),
}


@dataclass(frozen=True)
class AugmentSpec:
    kind: str
    magnitude: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in LEGAL_RANGES:
            raise InvalidMagnitude(f"unknown augmentation kind {self.kind!r}")
        lo, hi = LEGAL_RANGES[self.kind]
        if not (lo <= self.magnitude <= hi) or not math.isfinite(self.magnitude):
            raise InvalidMagnitude(
                f"{self.kind} magnitude {self.magnitude} outside [{lo}, {hi}]")


@dataclass(frozen=True, eq=False)
class LabeledClip:
    clip: AudioClip
    label: int  # 1 = positive
    name: str = ""


def _resample_by(x: np.ndarray, ratio: float) -> np.ndarray:
    """Resample so the output has about len(x) * ratio samples."""
    frac = Fraction(ratio).limit_denominator(1000)
    if frac == 1:
        return x.copy()
    return signal.resample_poly(x, frac.numerator, frac.denominator,
                                window=("kaiser", 8.0))


def _wsola_stretch(x: np.ndarray, n_out: int, frame: int = 1024, tol: int = 256) -> np.ndarray:
    """Time stretch to exactly ``n_out`` samples with pitch kept (WSOLA).

    Each output frame is taken near its nominal input position, shifted by
    up to ``tol`` samples to best continue the previously copied segment,
    so consecutive frames add in phase.
    """
    if n_out == x.size:
        return x.copy()
    hop = frame // 2
    rate = x.size / n_out
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(frame) / frame)
    n_frames = int(math.ceil(n_out / hop)) + 2
    lead = frame + tol
    padded = np.pad(x, (lead, lead + int(n_frames * hop * rate) + frame))
    out = np.zeros((n_frames + 1) * hop + frame)
    norm = np.zeros_like(out)
    prev = None
    for i in range(n_frames):
        nominal = lead + int(round(i * hop * rate)) - frame // 2
        start = nominal
        if prev is not None:
            target = padded[prev + hop:prev + hop + frame]
            region = padded[nominal - tol:nominal + tol + frame]
            corr = signal.correlate(region, target, mode="valid", method="fft")
            if np.max(corr) > 1e-12 * max(float(target @ target), 1e-30):
                start = nominal - tol + int(np.argmax(corr))
        out[i * hop:i * hop + frame] += padded[start:start + frame] * win
        norm[i * hop:i * hop + frame] += win
        prev = start
    y = out[frame // 2:frame // 2 + n_out]
    w = norm[frame // 2:frame // 2 + n_out]
    return y / np.maximum(w, 1e-8)


def apply(clip: AudioClip, spec: AugmentSpec) -> AudioClip:
    """Apply one augmentation; the result depends only on (clip, spec)."""
    x = clip.samples
    sr = clip.sample_rate_hz
    if spec.kind == "gain":
        y = x * spec.magnitude
    elif spec.kind == "time_shift":
        y = np.roll(x, int(round(spec.magnitude * sr)))
    elif spec.kind == "speed":
        # faster playback: fewer samples, same rate
        y = _resample_by(x, 1.0 / spec.magnitude)
    elif spec.kind == "pitch":
        factor = 2.0 ** (spec.magnitude / 12.0)
        y = _wsola_stretch(_resample_by(x, 1.0 / factor), x.size)
    else:  # noise
        rms = math.sqrt(float(np.mean(x * x)))
        noise = np.random.default_rng(spec.seed).standard_normal(x.size)
        noise_rms = math.sqrt(float(np.mean(noise * noise)))
        target = rms * 10.0 ** (-spec.magnitude / 20.0)
        y = x + noise * (target / noise_rms if noise_rms > 0 else 0.0)
    if y.size == 0:
        y = np.zeros(1)
    return AudioClip(y, sr)


def random_spec(rng: np.random.Generator) -> AugmentSpec:
    kind = KINDS[int(rng.integers(len(KINDS)))]
    lo, hi = LEGAL_RANGES[kind]
    return AugmentSpec(kind, float(rng.uniform(lo, hi)), int(rng.integers(2**31 - 1)))


def expand_minority(records, target_ratio: float, seed: int) -> list[LabeledClip]:
    """Append augmented minority copies until minority/majority >= target_ratio.

    Originals are kept in order at the front of the result.  Sources are
    drawn round-robin from a seeded permutation of the minority records.
    """
    records = list(records)
    labels = np.array([r.label for r in records])
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise SingleClassInput("augmentation needs both classes present")
    minority = classes[np.argmin(counts)]
    n_min, n_maj = counts.min(), counts.max()
    needed = max(0, math.ceil(target_ratio * n_maj - 1e-12) - n_min)
    if needed == 0:
        return records

    rng = np.random.default_rng(seed)
    pool = [r for r in records if r.label == minority]
    order = rng.permutation(len(pool))
    out = list(records)
    for i in range(needed):
        src = pool[order[i % len(pool)]]
        spec = random_spec(rng)
        name = f"{src.name}#aug{i}-{spec.kind}" if src.name else f"aug{i}-{spec.kind}"
        out.append(LabeledClip(apply(src.clip, spec), src.label, name))
    return out
