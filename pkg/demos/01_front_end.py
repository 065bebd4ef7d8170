"""
From waveform to log-Mel spectrogram
====================================

Walk one synthetic recording through the front end: activity profile,
leading trim, 5 s centre crop, then the log-Mel spectrogram the network sees.

    python3 demos/01_front_end.py
"""

import numpy as np

from coughscreen.audio_io import AudioClip
from coughscreen.features import FeatureConfig, build_filterbank, extract
from coughscreen.preprocess import activity_profile, center_crop, first_active_window, trim_leading
from coughscreen.synthetic import synth_clip

rng = np.random.default_rng(3)
clip = synth_clip(rng, tonal=True)

# put 0.8 s of faint room noise in front so the trimmer has something to remove
lead = rng.standard_normal(12800) * 1e-4
clip = AudioClip(np.r_[lead, clip.samples], clip.sample_rate_hz)
print(f"input: {len(clip)} samples, {clip.duration_s:.2f} s at {clip.sample_rate_hz} Hz")

# one speech-presence probability per 100 ms window
profile = activity_profile(clip)
print("activity:", " ".join(f"{p:.2f}" for p in profile.probabilities[:15]), "...")

w = first_active_window(profile)
print(f"first window above 0.6: #{w} -> trim {w * 1600} samples")

trimmed = trim_leading(clip, profile)
fixed = center_crop(trimmed, 5.0)
print(f"trimmed: {len(trimmed)} samples, cropped/padded: {len(fixed)} samples")

# 128 triangular filters between 0 and 8 kHz, each peaking at 1
cfg = FeatureConfig()
bank = build_filterbank(cfg)
print(f"filterbank {bank.weights.shape}, row maxima all 1: {np.allclose(bank.weights.max(axis=1), 1)}")

spec = extract(fixed, cfg)
print(f"log-Mel spectrogram: {spec.values.shape} (bands x frames)")
print(f"  range {spec.values.min():.1f} .. {spec.values.max():.1f} (natural log)")

# the tone shows up as the loudest band on average
band = int(np.argmax(spec.values.mean(axis=1)))
print(f"  loudest band #{band}")
