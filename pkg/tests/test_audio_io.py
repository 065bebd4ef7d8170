import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coughscreen.audio_io import (AudioClip, decode_wav, encode_wav, load_audio, read_wav,
                                  resample, write_wav)
from coughscreen.errors import MalformedContainer, UnsupportedEncoding

from oracles import dft_peak_hz, wav_bytes_float32, wav_bytes_stdlib


class TestAudioClip:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            AudioClip(np.array([0.0, np.nan]), 16000)
        with pytest.raises(ValueError):
            AudioClip(np.array([np.inf]), 16000)

    def test_rejects_empty_and_bad_rate(self):
        with pytest.raises(ValueError):
            AudioClip(np.zeros(0), 16000)
        with pytest.raises(ValueError):
            AudioClip(np.zeros(4), 0)

    def test_duration(self):
        assert AudioClip(np.zeros(8000), 16000).duration_s == 0.5


class TestDecode:
    def test_full_scale_16bit(self):
        clip = decode_wav(wav_bytes_stdlib([32767, -32768, 0], 16000, 2))
        assert clip.samples[0] == 32767 / 32768
        assert clip.samples[1] == -1.0
        assert clip.samples[2] == 0.0

    def test_stereo_is_averaged(self):
        # L = +0.5, R = -0.5 interleaved
        clip = decode_wav(wav_bytes_stdlib([16384, -16384, 8192, 8192], 8000, 2, channels=2))
        np.testing.assert_array_equal(clip.samples, [0.0, 0.25])

    def test_sine_against_stdlib_writer(self):
        t = np.arange(16000) / 16000
        ints = np.round(0.5 * np.sin(2 * np.pi * 440 * t) * 32767).astype(np.int16)
        clip = decode_wav(wav_bytes_stdlib(ints, 16000, 2))
        assert len(clip) == 16000 and clip.sample_rate_hz == 16000
        np.testing.assert_array_equal(clip.samples, ints / 32768.0)
        assert abs(clip.samples.max() - 0.5) < 1e-3

    def test_8bit_unsigned(self):
        clip = decode_wav(wav_bytes_stdlib([0, 128, 255], 8000, 1))
        np.testing.assert_array_equal(clip.samples, [-1.0, 0.0, 127 / 128])

    def test_24bit(self):
        vals = [-(1 << 23), -1, 0, 1, (1 << 23) - 1]
        clip = decode_wav(wav_bytes_stdlib(vals, 16000, 3))
        np.testing.assert_array_equal(clip.samples, np.array(vals) / float(1 << 23))

    def test_32bit_int(self):
        vals = [-(1 << 31), 0, (1 << 30)]
        clip = decode_wav(wav_bytes_stdlib(vals, 16000, 4))
        np.testing.assert_array_equal(clip.samples, [-1.0, 0.0, 0.5])

    def test_float32(self):
        x = np.array([0.25, -0.75, 1.0], dtype=np.float32)
        clip = decode_wav(wav_bytes_float32(x, 22050))
        assert clip.sample_rate_hz == 22050
        np.testing.assert_array_equal(clip.samples, x.astype(np.float64))

    def test_extensible_header(self):
        body = np.array([1000, -1000], dtype="<i2").tobytes()
        sub_guid = struct.pack("<H", 1) + b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"
        fmt = struct.pack("<HHIIHHHHI", 0xFFFE, 1, 16000, 32000, 2, 16, 22, 16, 4) + sub_guid
        chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", 4) + body
        data = b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks
        np.testing.assert_array_equal(decode_wav(data).samples, [1000 / 32768, -1000 / 32768])

    def test_skips_unknown_chunks(self):
        raw = wav_bytes_stdlib([100, 200], 16000, 2)
        extra = b"LIST" + struct.pack("<I", 3) + b"abc\x00"
        body = raw[12:]
        data = b"RIFF" + struct.pack("<I", 4 + len(extra) + len(body)) + b"WAVE" + extra + body
        np.testing.assert_array_equal(decode_wav(data).samples, [100 / 32768, 200 / 32768])

    def test_bad_magic(self):
        raw = bytearray(wav_bytes_stdlib([1, 2], 16000, 2))
        raw[:4] = b"RIFX"
        with pytest.raises(MalformedContainer):
            decode_wav(bytes(raw))

    def test_truncated_and_missing_chunks(self):
        raw = wav_bytes_stdlib([1, 2, 3], 16000, 2)
        with pytest.raises(MalformedContainer):
            decode_wav(raw[:20])
        with pytest.raises(MalformedContainer):
            decode_wav(b"RIFF" + struct.pack("<I", 4) + b"WAVE")

    def test_compressed_codec_rejected(self):
        raw = bytearray(wav_bytes_stdlib([1, 2], 16000, 2))
        struct.pack_into("<H", raw, 20, 0x0055)   # MPEG layer 3 tag
        with pytest.raises(UnsupportedEncoding):
            decode_wav(bytes(raw))


class TestEncode:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=200))
    def test_16bit_roundtrip_within_one_lsb(self, values):
        clip = AudioClip(np.array(values), 16000)
        back = decode_wav(encode_wav(clip, 16))
        assert np.max(np.abs(back.samples - clip.samples)) <= 1 / 32768

    def test_24bit_and_float_roundtrip(self, rng):
        clip = AudioClip(rng.uniform(-1, 1, 101), 44100)
        assert np.max(np.abs(decode_wav(encode_wav(clip, 24)).samples - clip.samples)) <= 2 ** -23
        back = decode_wav(encode_wav(clip, -32))
        np.testing.assert_array_equal(back.samples, clip.samples.astype(np.float32))

    def test_file_roundtrip(self, tmp_path, rng):
        clip = AudioClip(rng.uniform(-0.5, 0.5, 400), 16000)
        path = tmp_path / "sub" / "a.wav"
        write_wav(path, clip)
        assert np.max(np.abs(read_wav(path).samples - clip.samples)) <= 1 / 32768
        assert not [p for p in path.parent.iterdir() if p.name.endswith(".tmp")]


class TestResample:
    def test_identity_is_bitwise(self, rng):
        clip = AudioClip(rng.standard_normal(1000) * 0.1, 16000)
        out = resample(clip, 16000)
        assert out.sample_rate_hz == 16000
        np.testing.assert_array_equal(out.samples, clip.samples)
        assert out.samples is not clip.samples

    def test_upsample_keeps_tone(self):
        t = np.arange(8000) / 8000
        out = resample(AudioClip(0.8 * np.sin(2 * np.pi * 1000 * t), 8000), 16000)
        assert len(out) == 16000
        peak, _ = dft_peak_hz(out.samples, 16000)
        assert peak == 1000.0

    def test_44100_duration(self):
        out = resample(AudioClip(np.zeros(88200), 44100), 16000)
        assert abs(len(out) - 32000) <= 1

    @settings(max_examples=25, deadline=None)
    @given(src=st.sampled_from([8000, 11025, 22050, 44100, 48000]),
           dst=st.sampled_from([8000, 16000, 22050]),
           frac=st.floats(0.05, 0.4))
    def test_tone_peak_within_one_bin(self, src, dst, frac):
        f = frac * min(src, dst)
        t = np.arange(src) / src
        out = resample(AudioClip(0.5 * np.sin(2 * np.pi * f * t), src), dst)
        assert abs(len(out) / dst - 1.0) <= 1.0 / dst
        peak, bin_hz = dft_peak_hz(out.samples, dst)
        assert abs(peak - f) <= bin_hz

    def test_rejects_nonpositive_target(self):
        with pytest.raises(ValueError):
            resample(AudioClip(np.zeros(10), 16000), 0)

    def test_load_audio_resamples(self, tmp_path):
        t = np.arange(22050) / 22050
        write_wav(tmp_path / "a.wav", AudioClip(0.3 * np.sin(2 * np.pi * 500 * t), 22050))
        clip = load_audio(tmp_path / "a.wav")
        assert clip.sample_rate_hz == 16000 and abs(len(clip) - 16000) <= 1
