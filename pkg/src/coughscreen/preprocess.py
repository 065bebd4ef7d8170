"""Leading-silence trimming and fixed-length centre cropping.

Activity is scored per 100 ms non-overlapping window.  The default
estimator is a statistical-model detector: per-bin Gaussian likelihood
ratios with a decision-directed a-priori SNR, against a noise PSD
tracked by minimum statistics.  Short analysis frames (about 32 ms, half
overlap) are scored individually and averaged inside each window.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import minimum_filter1d, uniform_filter1d
from scipy.special import expit

from .audio_io import AudioClip
from .errors import ClipTooShort, NoActivityFound

log = logging.getLogger(__name__)

WINDOW_MS = 100
DEFAULT_P_TH = 0.6

# Martin's M(D) table for the minimum-statistics bias correction.
_MARTIN_D = np.array([1, 2, 5, 8, 10, 15, 20, 30, 40, 60, 80, 120, 140, 160], dtype=float)
_MARTIN_M = np.array([0.0, 0.26, 0.48, 0.58, 0.61, 0.668, 0.705, 0.762, 0.8,
                      0.841, 0.865, 0.89, 0.9, 0.91])

_NOISE_FLOOR = 1e-20


@dataclass(frozen=True)
class VadConfig:
    method: str = "likelihood"      # or "energy" (debugging fallback)
    frame_ms: float = 32.0
    dd_smoothing: float = 0.98      # decision-directed a-priori SNR
    psd_smoothing: float = 0.5      # periodogram smoothing before the minimum search
    search_window_s: float = 1.5
    xi_min_db: float = -25.0
    bin_threshold: float = 0.15     # per-bin log-likelihood threshold
    noise_floor_dbfs: float = -70.0  # lowest noise level the tracker will report
    freq_smoothing_bins: int = 9     # neighbouring bins averaged before the minimum search

    def __post_init__(self):
        if self.method not in ("likelihood", "energy"):
            raise ValueError(f"unknown VAD method {self.method!r}")


@dataclass(frozen=True, eq=False)
class ActivityProfile:
    probabilities: np.ndarray
    sample_rate_hz: int
    window_ms: int = WINDOW_MS

    @property
    def window_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.window_ms / 1000))

    def __len__(self):
        return self.probabilities.size


def _frames(x: np.ndarray, sr: int, frame_ms: float):
    n = 1 << max(1, math.ceil(math.log2(frame_ms * 1e-3 * sr)))
    hop = n // 2
    if x.size < n:
        x = np.pad(x, (0, n - x.size))
    frames = sliding_window_view(x, n)[::hop]
    starts = np.arange(frames.shape[0]) * hop
    return frames, starts + n / 2.0, n, hop


def _min_stats_bias(d: int, alpha: float, dof_gain: float = 1.0) -> float:
    """Martin's bias factor for the minimum of ``d`` smoothed periodogram values.

    ``dof_gain`` scales the equivalent degrees of freedom, e.g. after
    averaging across neighbouring frequency bins.
    """
    q_eq = 2.0 * (1.0 + alpha) / (1.0 - alpha) * dof_gain
    m = float(np.interp(d, _MARTIN_D, _MARTIN_M))
    q_tilde = (q_eq - 2.0 * m) / (1.0 - m)
    return 1.0 + (d - 1) * 2.0 / q_tilde


def equivalent_bins(window: np.ndarray, width: int) -> float:
    """Independent-bin count equivalent to averaging ``width`` adjacent power bins.

    Adjacent DFT bins of a windowed frame are correlated; for white
    Gaussian input the power correlation at lag d is |W(d)|^2 / W(0)^2,
    with W the DFT of the squared window.
    """
    if width <= 1:
        return 1.0
    w2 = np.asarray(window, float) ** 2
    n = np.arange(w2.size)
    rho = np.array([abs(np.sum(w2 * np.exp(-2j * np.pi * d * n / w2.size))) for d in range(width)])
    rho2 = (rho / rho[0]) ** 2
    lags = np.abs(np.subtract.outer(np.arange(width), np.arange(width)))
    return width ** 2 / float(np.sum(rho2[lags]))


def noise_psd(power: np.ndarray, hop_s: float, cfg: VadConfig,
              floor_power: float = _NOISE_FLOOR, window=None) -> np.ndarray:
    """Minimum-statistics noise PSD for a (frames, bins) periodogram.

    The smoothed periodogram is averaged over ``cfg.freq_smoothing_bins``
    neighbouring bins before the minimum search, which keeps a single
    unlucky bin from dragging its estimate far below the true level.
    The estimate never drops below ``floor_power``, so a faint background
    next to digital zeros is not mistaken for activity.
    """
    a = cfg.psd_smoothing
    smoothed = np.empty_like(power)
    # a single raw periodogram is a poor start (it can sit far below the mean)
    acc = power[: max(1, int(round(1.0 / (1.0 - a))))].mean(axis=0)
    for t in range(power.shape[0]):
        acc = a * acc + (1.0 - a) * power[t]
        smoothed[t] = acc
    width = cfg.freq_smoothing_bins
    gain = 1.0
    if width > 1:
        smoothed = uniform_filter1d(smoothed, size=width, axis=1, mode="nearest")
        gain = equivalent_bins(window, width) if window is not None else float(width)
    d = max(1, int(round(cfg.search_window_s / hop_s)))
    # centred search window; the whole clip is available offline
    floor = minimum_filter1d(smoothed, size=d, axis=0, mode="nearest")
    return np.maximum(floor * _min_stats_bias(d, a, gain), max(floor_power, _NOISE_FLOOR))


def frame_log_odds(power: np.ndarray, noise: np.ndarray, cfg: VadConfig) -> np.ndarray:
    """Log-odds of activity per frame from per-bin Gaussian likelihood ratios."""
    xi_min = 10.0 ** (cfg.xi_min_db / 10.0)
    gamma = power / noise
    n_frames, n_bins = gamma.shape
    out = np.empty(n_frames)
    prev = np.zeros(n_bins)  # G^2 * gamma of the previous frame; no speech before the clip
    a = cfg.dd_smoothing
    for t in range(n_frames):
        g = gamma[t]
        ml = np.maximum(g - 1.0, 0.0)
        xi = a * prev + (1.0 - a) * ml
        xi = np.maximum(xi, xi_min)
        llr = g * xi / (1.0 + xi) - np.log1p(xi)
        out[t] = llr.sum() - n_bins * cfg.bin_threshold
        gain = xi / (1.0 + xi)
        prev = gain * gain * g
    return out


def _energy_probabilities(frames: np.ndarray) -> np.ndarray:
    e_db = 10.0 * np.log10(np.mean(frames ** 2, axis=1) + 1e-20)
    floor = np.percentile(e_db, 10)
    return expit((e_db - floor - 10.0) / 2.0)


def activity_profile(clip: AudioClip, cfg: VadConfig | None = None) -> ActivityProfile:
    """Probability of activity for every complete 100 ms window of ``clip``."""
    cfg = cfg or VadConfig()
    sr = clip.sample_rate_hz
    win = int(round(sr * WINDOW_MS / 1000))
    n_windows = clip.samples.size // win
    if n_windows < 1:
        raise ClipTooShort(f"clip lasts {1000 * clip.duration_s:.1f} ms, need >= {WINDOW_MS} ms")

    x = clip.samples[: n_windows * win]
    frames, centres, n, hop = _frames(x, sr, cfg.frame_ms)
    if cfg.method == "energy":
        p_frame = _energy_probabilities(frames)
    else:
        window = np.hanning(n + 1)[:n]
        spec = np.fft.rfft(frames * window, axis=1)
        power = spec.real ** 2 + spec.imag ** 2
        # per-bin power of white noise at the configured absolute floor
        floor = 10.0 ** (cfg.noise_floor_dbfs / 10.0) * float(np.sum(window ** 2))
        noise = noise_psd(power, hop / sr, cfg, floor, window)
        p_frame = expit(frame_log_odds(power, noise, cfg))

    owner = np.minimum((centres // win).astype(int), n_windows - 1)
    sums = np.bincount(owner, weights=p_frame, minlength=n_windows)
    counts = np.bincount(owner, minlength=n_windows)
    probs = np.empty(n_windows)
    has = counts > 0
    probs[has] = sums[has] / counts[has]
    for w in np.flatnonzero(~has):
        probs[w] = p_frame[np.argmin(np.abs(centres - (w + 0.5) * win))]
    return ActivityProfile(np.clip(probs, 0.0, 1.0), sr, WINDOW_MS)


def first_active_window(profile: ActivityProfile, p_th: float = DEFAULT_P_TH) -> int:
    if not 0.0 <= p_th <= 1.0:
        raise ValueError("p_th must lie in [0, 1]")
    hits = np.flatnonzero(profile.probabilities > p_th)
    if hits.size == 0:
        raise NoActivityFound(f"no window exceeds activity probability {p_th}")
    return int(hits[0])


def trim_leading(clip: AudioClip, profile: ActivityProfile,
                 p_th: float = DEFAULT_P_TH) -> AudioClip:
    """Drop everything before the first window whose probability exceeds ``p_th``."""
    start = first_active_window(profile, p_th) * profile.window_samples
    return AudioClip(clip.samples[start:].copy(), clip.sample_rate_hz)


def center_crop(clip: AudioClip, seconds: float) -> AudioClip:
    """Exactly round(seconds * rate) samples around the clip midpoint.

    Short clips are zero padded on both sides; an odd leftover sample
    goes to the end.
    """
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    n = int(round(seconds * clip.sample_rate_hz))
    x = clip.samples
    if x.size >= n:
        start = (x.size - n) // 2
        return AudioClip(x[start:start + n].copy(), clip.sample_rate_hz)
    extra = n - x.size
    return AudioClip(np.pad(x, (extra // 2, extra - extra // 2)), clip.sample_rate_hz)


def preprocess(clip: AudioClip, seconds: float = 5.0, p_th: float = DEFAULT_P_TH,
               cfg: VadConfig | None = None, fallback: bool = True) -> AudioClip:
    """Trim leading inactivity, then centre-crop to ``seconds``.

    With ``fallback`` a clip in which no window clears ``p_th`` is cropped
    untrimmed and a warning is logged; otherwise NoActivityFound propagates.
    """
    try:
        profile = activity_profile(clip, cfg)
        clip = trim_leading(clip, profile, p_th)
    except (NoActivityFound, ClipTooShort) as exc:
        if not fallback:
            raise
        log.warning("activity trimming skipped: %s", exc)
    return center_crop(clip, seconds)
