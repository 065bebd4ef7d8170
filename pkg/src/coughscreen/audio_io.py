"""WAV decoding, resampling and the AudioClip container."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from ._fileio import atomic_write_bytes
from .errors import MalformedContainer, UnsupportedEncoding

TARGET_RATE_HZ = 16000

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE

# taps per polyphase branch of the anti-aliasing filter
_RESAMPLE_HALF_TAPS = 32
_RESAMPLE_KAISER_BETA = 8.0


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono audio: float64 samples in nominal [-1, 1] plus a sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip samples must be one-dimensional")
        if samples.size == 0:
            raise ValueError("AudioClip samples must be nonempty")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate_hz)


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = pos + 8
        if body + size > len(data):
            raise MalformedContainer(
                f"chunk {cid!r} claims {size} bytes, only {len(data) - body} remain"
            )
        yield cid, data[body:body + size]
        pos = body + size + (size & 1)


def _parse_fmt(fmt: bytes):
    if len(fmt) < 16:
        raise MalformedContainer("fmt chunk shorter than 16 bytes")
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag == _FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise MalformedContainer("truncated WAVE_FORMAT_EXTENSIBLE header")
        # valid bits at offset 18, sub-format GUID at offset 24
        tag = struct.unpack_from("<H", fmt, 24)[0]
    return tag, channels, rate, block_align, bits


def decode_wav(data: bytes) -> AudioClip:
    """Decode a RIFF/WAVE byte string into a mono clip.

    Integer PCM of 8, 16, 24 or 32 bits and 32-bit IEEE float are
    accepted.  Integer samples are divided by their full scale, so the
    16-bit code 32767 becomes 32767/32768.  Stereo is averaged to mono.
    """
    data = bytes(data)
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedContainer("missing RIFF/WAVE magic")
    riff_size = struct.unpack_from("<I", data, 4)[0]
    if riff_size + 8 < 12 or riff_size + 8 > len(data) + 1:
        raise MalformedContainer(f"RIFF size {riff_size} inconsistent with {len(data)} bytes")

    fmt = payload = None
    for cid, body in _iter_chunks(data[: riff_size + 8]):
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            payload = body
    if fmt is None or payload is None:
        raise MalformedContainer("WAVE file lacks a fmt or data chunk")

    tag, channels, rate, block_align, bits = _parse_fmt(fmt)
    if tag not in (_FORMAT_PCM, _FORMAT_FLOAT):
        raise UnsupportedEncoding(f"format tag 0x{tag:04x} is not PCM or IEEE float")
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{channels} channels; only mono and stereo are supported")
    if rate <= 0:
        raise MalformedContainer("sample rate must be positive")
    width = bits // 8
    if bits % 8 or block_align != width * channels:
        raise MalformedContainer(f"block align {block_align} does not match {bits}-bit x {channels}")

    n_frames = len(payload) // block_align
    raw = payload[: n_frames * block_align]
    if tag == _FORMAT_FLOAT:
        if bits != 32:
            raise UnsupportedEncoding(f"{bits}-bit float is not supported")
        x = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    elif bits == 8:
        x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif bits == 16:
        x = np.frombuffer(raw, dtype="<i2") / 32768.0
    elif bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v / float(1 << 23)
    elif bits == 32:
        x = np.frombuffer(raw, dtype="<i4") / float(1 << 31)
    else:
        raise UnsupportedEncoding(f"{bits}-bit PCM is not supported")

    if x.size == 0:
        raise MalformedContainer("data chunk holds no complete frames")
    if channels == 2:
        x = x.reshape(-1, 2).mean(axis=1)
    return AudioClip(x, rate)


def encode_wav(clip: AudioClip, bits: int = 16) -> bytes:
    """Encode a clip as mono integer PCM (16 or 24 bit) or 32-bit float (bits=-32)."""
    x = clip.samples
    if bits == 16:
        body = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag, width = _FORMAT_PCM, 2
    elif bits == 24:
        v = np.clip(np.round(x * (1 << 23)), -(1 << 23), (1 << 23) - 1).astype(np.int32)
        v = v.astype("<i4").view(np.uint8).reshape(-1, 4)[:, :3]
        body = v.tobytes()
        tag, width = _FORMAT_PCM, 3
    elif bits == -32:
        body = x.astype("<f4").tobytes()
        tag, width = _FORMAT_FLOAT, 4
    else:
        raise UnsupportedEncoding(f"cannot encode {bits}-bit audio")
    rate = clip.sample_rate_hz
    fmt = struct.pack("<HHIIHH", tag, 1, rate, rate * width, width, width * 8)
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    chunks += b"data" + struct.pack("<I", len(body)) + body
    if len(body) & 1:
        chunks += b"\x00"
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


def read_wav(path) -> AudioClip:
    return decode_wav(Path(path).read_bytes())


def write_wav(path, clip: AudioClip, bits: int = 16) -> None:
    atomic_write_bytes(path, encode_wav(clip, bits))


def _resample_ratio(x: np.ndarray, up: int, down: int) -> np.ndarray:
    g = math.gcd(up, down)
    up, down = up // g, down // g
    if up == down:
        return x.copy()
    max_rate = max(up, down)
    half = _RESAMPLE_HALF_TAPS * max_rate
    taps = signal.firwin(2 * half + 1, 1.0 / max_rate,
                         window=("kaiser", _RESAMPLE_KAISER_BETA))
    return signal.resample_poly(x, up, down, window=taps)


def resample(clip: AudioClip, target_hz: int) -> AudioClip:
    """Kaiser-windowed sinc polyphase resampling to ``target_hz``.

    Returns the clip unchanged (same object contents, copied) when the
    rates already match.
    """
    target_hz = int(target_hz)
    if target_hz <= 0:
        raise ValueError("target_hz must be positive")
    if target_hz == clip.sample_rate_hz:
        return AudioClip(clip.samples.copy(), target_hz)
    y = _resample_ratio(clip.samples, target_hz, clip.sample_rate_hz)
    return AudioClip(y, target_hz)


def load_audio(path, target_hz: int = TARGET_RATE_HZ) -> AudioClip:
    """Read a WAV file and bring it to ``target_hz``."""
    return resample(read_wav(path), target_hz)
