"""
Augmenting the minority class
=============================

Each transform is applied to a 1 kHz tone and the result is measured,
then a 75-positive manifest is expanded to a 1:2 class ratio.

    python3 demos/02_augmentation.py
"""

import numpy as np

from coughscreen.audio_io import AudioClip
from coughscreen.augment import AugmentSpec, LabeledClip, apply, expand_minority

SR = 16000
t = np.arange(5 * SR) / SR
tone = AudioClip(0.5 * np.sin(2 * np.pi * 1000 * t), SR)


def peak_hz(x):
    mag = np.abs(np.fft.rfft(x * np.hanning(x.size)))
    return np.argmax(mag) * SR / x.size


def rms(x):
    return float(np.sqrt(np.mean(x ** 2)))


print(f"original      peak {peak_hz(tone.samples):7.1f} Hz  len {len(tone)}  rms {rms(tone.samples):.3f}")
for spec in [AugmentSpec("pitch", 2.0), AugmentSpec("pitch", -2.0),
             AugmentSpec("speed", 1.1), AugmentSpec("speed", 0.9),
             AugmentSpec("gain", 1.5), AugmentSpec("time_shift", 0.5),
             AugmentSpec("noise", 20.0, seed=1)]:
    y = apply(tone, spec).samples
    print(f"{spec.kind:>10} {spec.magnitude:+5.1f}  peak {peak_hz(y):7.1f} Hz  len {y.size}  rms {rms(y):.3f}")

# two semitones up should be 1000 * 2**(2/12) ~ 1122.5 Hz
print(f"expected pitch +2 peak: {1000 * 2 ** (2 / 12):.1f} Hz")

# out-of-range magnitudes are refused
try:
    AugmentSpec("speed", 1.5)
except Exception as e:
    print("refused:", e)

# 75 positives and 965 negatives -> 483 positives (ceil(965 / 2))
rng = np.random.default_rng(0)
short = AudioClip(rng.standard_normal(SR) * 0.1, SR)
records = [LabeledClip(short, 1, f"p{i}") for i in range(75)] + \
          [LabeledClip(short, 0, f"n{i}") for i in range(965)]
out = expand_minority(records, target_ratio=0.5, seed=0)
print(f"positives {sum(r.label for r in records)} -> {sum(r.label for r in out)}")
