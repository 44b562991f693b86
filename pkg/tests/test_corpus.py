import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from padspace.corpus import (
    AudioClip, LabelRegistry, format_manifest, load_manifest, read_wav, resample, write_wav,
)
from padspace.exceptions import DataError

from _data import sine


def _raw_wav(path, frames, channels, tag=1, bits=16):
    """Independent RIFF writer for reader tests."""
    payload = frames.tobytes()
    block = channels * bits // 8
    hdr = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(payload), b"WAVE", b"fmt ", 16,
                      tag, channels, 16000, 16000 * block, block, bits, b"data", len(payload))
    path.write_bytes(hdr + payload)
    return path


class TestManifest:
    def test_two_rows_lexicographic_registry(self, tmp_path):
        m = tmp_path / "m.csv"
        m.write_text("path,label,split\nb.wav,Sad,train\na.wav,Angry,test\n")
        entries, reg = load_manifest(m)
        assert [e.clip_path for e in entries] == ["b.wav", "a.wav"]
        assert reg.labels == ("Angry", "Sad")
        assert reg.id_of("Angry") == 0 and reg.id_of("Sad") == 1

    def test_empty_label_is_unlabeled(self, tmp_path):
        m = tmp_path / "m.csv"
        m.write_text("path,label,split\nx.wav,,test\n")
        entries, reg = load_manifest(m)
        assert entries[0].label is None
        assert len(reg) == 0

    def test_unknown_split_names_line(self, tmp_path):
        m = tmp_path / "m.csv"
        m.write_text("path,label,split\na.wav,Happy,validation\n")
        with pytest.raises(DataError, match=r"unknown split 'validation' at line 2"):
            load_manifest(m)

    def test_wrong_column_count(self, tmp_path):
        m = tmp_path / "m.csv"
        m.write_text("path,label,split\na.wav,Happy\n")
        with pytest.raises(DataError, match="line 2"):
            load_manifest(m)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_manifest(tmp_path / "nope.csv")

    def test_relative_paths_resolve_against_manifest_dir(self, tmp_path):
        (tmp_path / "sub").mkdir()
        m = tmp_path / "sub" / "m.csv"
        m.write_text("path,label,split\nclips/a.wav,Sad,train\n")
        entries, _ = load_manifest(m)
        assert entries[0].path == tmp_path / "sub" / "clips" / "a.wav"

    def test_round_trip_byte_identical(self, tmp_path):
        text = "path,label,split\nx/a.wav,Angry,train\nb.wav,,test\nc.wav,Sad,train\n"
        m = tmp_path / "m.csv"
        m.write_text(text)
        entries, _ = load_manifest(m)
        assert format_manifest(entries) == text

    def test_registry_encode(self):
        reg = LabelRegistry(["Sad", "Angry", "Sad"])
        assert list(reg.encode(["Sad", "Angry"])) == [1, 0]
        with pytest.raises(DataError):
            reg.id_of("Happy")


class TestReadWav:
    def test_pcm16_half_scale(self, tmp_path):
        p = _raw_wav(tmp_path / "a.wav", np.full(100, 16384, dtype="<i2"), 1)
        clip = read_wav(p)
        assert clip.sample_rate == 16000
        assert np.all(clip.samples == 0.5)

    def test_stereo_downmix_by_mean(self, tmp_path):
        frames = np.tile(np.array([0.2, 0.4], dtype="<f4"), 50)
        clip = read_wav(_raw_wav(tmp_path / "s.wav", frames, 2, tag=3, bits=32))
        np.testing.assert_allclose(clip.samples, 0.3, atol=1e-7)

    def test_zero_length(self, tmp_path):
        p = _raw_wav(tmp_path / "z.wav", np.zeros(0, dtype="<i2"), 1)
        with pytest.raises(DataError, match="zero-length audio"):
            read_wav(p)

    def test_unsupported_codec(self, tmp_path):
        p = _raw_wav(tmp_path / "u8.wav", np.zeros(10, dtype="u1"), 1, tag=1, bits=8)
        with pytest.raises(DataError, match="unsupported codec"):
            read_wav(p)

    def test_truncated(self, tmp_path):
        p = _raw_wav(tmp_path / "t.wav", np.zeros(100, dtype="<i2"), 1)
        p.write_bytes(p.read_bytes()[:-51])
        with pytest.raises(DataError, match="truncated"):
            read_wav(p)

    def test_identical_stereo_channels_equal_mono(self, tmp_path):
        mono = (sine(440, 0.5, 0.1) * 32767).astype("<i2")
        stereo = np.repeat(mono, 2)
        a = read_wav(_raw_wav(tmp_path / "m.wav", mono, 1))
        b = read_wav(_raw_wav(tmp_path / "s.wav", stereo, 2))
        np.testing.assert_array_equal(a.samples, b.samples)

    @pytest.mark.parametrize("fmt", ["pcm16", "float32"])
    def test_write_read_round_trip(self, tmp_path, fmt):
        clip = AudioClip(sine(300, 0.7, 0.2), 16000)
        write_wav(tmp_path / "r.wav", clip, fmt)
        back = read_wav(tmp_path / "r.wav")
        tol = 1 / 32768 if fmt == "pcm16" else 1e-7
        np.testing.assert_allclose(back.samples, clip.samples, atol=tol)


class TestAudioClip:
    def test_rejects_out_of_range(self):
        with pytest.raises(DataError):
            AudioClip(np.array([0.0, 1.5]), 16000)

    def test_rejects_nonfinite(self):
        with pytest.raises(DataError):
            AudioClip(np.array([0.0, np.nan]), 16000)

    def test_duration(self):
        assert AudioClip(np.zeros(8000), 16000).duration == 0.5


class TestResample:
    def test_identity(self):
        clip = AudioClip(sine(200, 0.5, 0.1), 16000)
        assert resample(clip, 16000) is clip

    def test_sine_keeps_dominant_bin(self):
        clip = AudioClip(sine(100, 0.9, 1.0, sr=48000), 48000)
        out = resample(clip, 16000)
        assert out.sample_rate == 16000
        assert abs(out.duration - 1.0) <= 1 / 16000
        spectrum = np.abs(np.fft.rfft(out.samples))
        freqs = np.fft.rfftfreq(out.samples.size, 1 / 16000)
        assert freqs[np.argmax(spectrum)] == pytest.approx(100.0)

    def test_zero_clip(self):
        out = resample(AudioClip(np.zeros(24000), 24000), 16000)
        assert out.samples.size == 16000
        assert np.all(out.samples == 0.0)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            resample(AudioClip(np.zeros(10), 16000), 0)

    @settings(max_examples=20, deadline=None)
    @given(src=st.sampled_from([8000, 16000, 24000, 48000]),
           dst=st.sampled_from([8000, 16000, 24000, 48000]))
    def test_rate_survives_wav_round_trip(self, tmp_path_factory, src, dst):
        clip = AudioClip(sine(150, 0.5, 0.05, sr=src), src)
        path = tmp_path_factory.mktemp("rs") / "x.wav"
        write_wav(path, resample(clip, dst))
        assert read_wav(path).sample_rate == dst
