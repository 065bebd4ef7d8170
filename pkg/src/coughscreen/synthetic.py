"""Synthetic separable corpus: tonal bursts (positive) versus noise bursts (negative).

Used by the end-to-end tests and the demos.  Every clip opens with a
stretch of near-silent dither so the activity trimmer has something to
discard; a fifth of the clips are written at 22.05 kHz to exercise
resampling.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio_io import AudioClip, write_wav
from .dataset import NEGATIVE, POSITIVE, SampleRecord, write_manifest


def _envelope(n: int) -> np.ndarray:
    ramp = max(1, n // 8)
    env = np.ones(n)
    env[:ramp] = np.linspace(0, 1, ramp)
    env[-ramp:] = np.linspace(1, 0, ramp)
    return env


def synth_clip(rng: np.random.Generator, tonal: bool, sr: int = 16000) -> AudioClip:
    dur = rng.uniform(3.0, 4.5)
    n = int(dur * sr)
    x = rng.standard_normal(n) * 1e-4
    pos = int(rng.uniform(0.2, 0.8) * sr)
    while True:
        length = int(rng.uniform(0.25, 0.5) * sr)
        if pos + length >= n:
            break
        amp = rng.uniform(0.2, 0.8)
        if tonal:
            f0 = rng.uniform(300, 1200)
            t = np.arange(length) / sr
            burst = sum(np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi)) / h
                        for h in (1, 2, 3))
            burst = burst / np.max(np.abs(burst))
        else:
            burst = np.clip(rng.standard_normal(length) / 3.0, -1, 1)
        x[pos:pos + length] += amp * burst * _envelope(length)
        pos += length + int(rng.uniform(0.05, 0.25) * sr)
    return AudioClip(np.clip(x, -1, 1), sr)


def make_corpus(out_dir, n_per_class: int = 20, seed: int = 7) -> Path:
    """Write WAV files plus ``manifest.csv`` into ``out_dir``; return the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(2 * n_per_class):
        tonal = i % 2 == 0
        sr = 22050 if i % 5 == 4 else 16000
        clip = synth_clip(rng, tonal, sr)
        name = f"clip_{i:03d}_{'tone' if tonal else 'noise'}.wav"
        write_wav(out / name, clip)
        records.append(SampleRecord(str(out / name), POSITIVE if tonal else NEGATIVE,
                                    gender="m" if i % 3 else "f",
                                    nationality="I" if i % 4 else "O", source="dicova"))
    manifest = out / "manifest.csv"
    write_manifest(manifest, records, relative_to=out)
    return manifest
