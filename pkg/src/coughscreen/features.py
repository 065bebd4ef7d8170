"""Log-Mel spectrogram extraction.

Pipeline: Hann-windowed STFT power (complete frames only), triangular
Mel filterbank, natural-log compression with an additive floor.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import AudioClip
from .errors import (BadMagic, ClipTooShort, ConfigMismatch, DegenerateFilter,
                     InvalidConfig, ShapeMismatch, TruncatedFile, VersionMismatch)


@dataclass(frozen=True)
class FeatureConfig:
    n_fft: int = 1024
    hop: int = 512
    n_mels: int = 32
    f_low_hz: float = 32.0
    f_high_hz: float = 8000.0
    sample_rate_hz: int = 16000
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.n_fft <= 0 or self.hop <= 0 or self.n_mels <= 0:
            raise InvalidConfig("n_fft, hop and n_mels must be positive")
        if self.hop > self.n_fft:
            raise InvalidConfig("hop must not exceed n_fft")
        if self.sample_rate_hz <= 0:
            raise InvalidConfig("sample_rate_hz must be positive")
        if not 0 <= self.f_low_hz < self.f_high_hz <= self.sample_rate_hz / 2:
            raise InvalidConfig("need 0 <= f_low < f_high <= sample_rate / 2")
        if self.log_floor <= 0:
            raise InvalidConfig("log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return frame_count(n_samples, self.n_fft, self.hop)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True, eq=False)
class MelFilterBank:
    weights: np.ndarray          # (n_mels, n_fft // 2 + 1)
    center_freqs_hz: np.ndarray  # (n_mels,)
    edges_hz: np.ndarray         # (n_mels + 2,)


@dataclass(eq=False)
class Spectrogram:
    values: np.ndarray  # (n_mels, n_frames)
    domain: str = "power"
    config: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        if self.domain not in ("power", "log"):
            raise ValueError(f"unknown spectrogram domain {self.domain!r}")
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ShapeMismatch("spectrogram values must be a 2-D (mels x frames) matrix")

    @property
    def shape(self):
        return self.values.shape


def hz_to_mel(f_hz):
    """Mel value of ``f_hz``: 2595 * log10(1 + f / 700)."""
    f = np.asarray(f_hz, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be nonnegative")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("mel value must be nonnegative")
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


def frame_count(n_samples: int, n_fft: int, hop: int) -> int:
    if n_samples < n_fft:
        return 0
    return 1 + (n_samples - n_fft) // hop


def build_filterbank(config: FeatureConfig, rescue_empty: bool = True) -> MelFilterBank:
    """Triangular filters with centres evenly spaced on the Mel axis.

    Each triangle is sampled at the FFT bin frequencies and rescaled so
    its largest sampled weight is exactly 1.  When a triangle is narrower
    than the bin spacing and catches no bin, its nearest bin gets weight 1
    (``rescue_empty``); otherwise DegenerateFilter is raised.
    """
    m_lo, m_hi = hz_to_mel(config.f_low_hz), hz_to_mel(config.f_high_hz)
    edges = mel_to_hz(np.linspace(m_lo, m_hi, config.n_mels + 2))
    # pin the outer edges against round-off in the mel roundtrip
    edges[0], edges[-1] = config.f_low_hz, config.f_high_hz
    freqs = np.arange(config.n_bins) * config.sample_rate_hz / config.n_fft

    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    w = np.clip(np.minimum(rising, falling), 0.0, None)

    peaks = w.max(axis=1)
    empty = peaks <= 0
    if np.any(empty):
        if not rescue_empty:
            raise DegenerateFilter(f"{int(empty.sum())} filters contain no FFT bin")
        for m in np.flatnonzero(empty):
            w[m, int(np.argmin(np.abs(freqs - edges[m + 1])))] = 1.0
        peaks = w.max(axis=1)
    w /= peaks[:, None]
    return MelFilterBank(weights=w, center_freqs_hz=edges[1:-1].copy(), edges_hz=edges)


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the usual choice for spectral analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_power(clip: AudioClip, config: FeatureConfig) -> np.ndarray:
    """One-sided |DFT|^2 of Hann-windowed complete frames, shape (n_fft/2+1, K)."""
    x = clip.samples
    if x.size < config.n_fft:
        raise ClipTooShort(f"clip has {x.size} samples, need at least n_fft={config.n_fft}")
    frames = sliding_window_view(x, config.n_fft)[:: config.hop]
    spec = np.fft.rfft(frames * _hann(config.n_fft), axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def mel_spectrum(power: np.ndarray, bank: MelFilterBank,
                 config: FeatureConfig | None = None) -> Spectrogram:
    power = np.asarray(power, dtype=np.float64)
    if power.ndim != 2 or power.shape[0] != bank.weights.shape[1]:
        raise ShapeMismatch(
            f"power matrix {power.shape} incompatible with filterbank {bank.weights.shape}")
    return Spectrogram(bank.weights @ power, "power", config or FeatureConfig())


def log_compress(spec: Spectrogram) -> Spectrogram:
    if spec.domain != "power":
        raise ValueError("log_compress expects a power-domain spectrogram")
    return Spectrogram(np.log(spec.values + spec.config.log_floor), "log", spec.config)


_BANK_CACHE: dict[FeatureConfig, MelFilterBank] = {}


def filterbank_for(config: FeatureConfig) -> MelFilterBank:
    bank = _BANK_CACHE.get(config)
    if bank is None:
        bank = _BANK_CACHE[config] = build_filterbank(config)
    return bank


def extract(clip: AudioClip, config: FeatureConfig | None = None) -> Spectrogram:
    """Log-Mel spectrogram of a preprocessed clip."""
    config = config or FeatureConfig()
    if clip.sample_rate_hz != config.sample_rate_hz:
        raise ConfigMismatch(
            f"clip is {clip.sample_rate_hz} Hz but features expect {config.sample_rate_hz} Hz")
    power = stft_power(clip, config)
    return log_compress(mel_spectrum(power, filterbank_for(config), config))


# --- MELS binary records ---------------------------------------------------

MELS_MAGIC = b"MELS"
MELS_VERSION = 1
_MELS_HEADER = struct.Struct("<4sHBBII")
_DOMAIN_CODES = {"power": 0, "log": 1}


def spectrogram_to_bytes(spec: Spectrogram) -> bytes:
    """Serialize as: magic, u16 version, u8 domain, u8 pad, u32 M, u32 K, f32 LE row-major."""
    m, k = spec.values.shape
    head = _MELS_HEADER.pack(MELS_MAGIC, MELS_VERSION, _DOMAIN_CODES[spec.domain], 0, m, k)
    return head + np.ascontiguousarray(spec.values, dtype="<f4").tobytes()


def spectrogram_from_bytes(data: bytes, config: FeatureConfig | None = None) -> Spectrogram:
    if len(data) < _MELS_HEADER.size:
        raise TruncatedFile("MELS record shorter than its header")
    magic, version, domain, _, m, k = _MELS_HEADER.unpack_from(data, 0)
    if magic != MELS_MAGIC:
        raise BadMagic(f"expected MELS magic, got {magic!r}")
    if version != MELS_VERSION:
        raise VersionMismatch(f"MELS version {version} unsupported")
    codes = {v: key for key, v in _DOMAIN_CODES.items()}
    if domain not in codes:
        raise ValueError(f"unknown domain code {domain}")
    need = _MELS_HEADER.size + 4 * m * k
    if len(data) < need:
        raise TruncatedFile(f"MELS payload has {len(data)} bytes, need {need}")
    values = np.frombuffer(data, dtype="<f4", count=m * k, offset=_MELS_HEADER.size)
    return Spectrogram(values.reshape(m, k).astype(np.float32), codes[domain],
                       config or FeatureConfig())


def save_spectrogram(path, spec: Spectrogram) -> None:
    from ._fileio import atomic_write_bytes
    atomic_write_bytes(path, spectrogram_to_bytes(spec))


def load_spectrogram(path, config: FeatureConfig | None = None) -> Spectrogram:
    return spectrogram_from_bytes(Path(path).read_bytes(), config)


def spectrogram_to_csv(spec: Spectrogram) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mel"] + [f"frame_{j}" for j in range(spec.values.shape[1])])
    for i, row in enumerate(spec.values):
        w.writerow([i] + [repr(float(v)) for v in row])
    return buf.getvalue()
