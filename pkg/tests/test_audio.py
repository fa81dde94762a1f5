"""WAV I/O and resampling contracts."""

import numpy as np
import pytest
from conftest import sine_clip
from hypothesis import given, settings
from hypothesis import strategies as st

from pianodiff.audio import AudioClip, read_wav, resample, to_mono, write_wav
from pianodiff.errors import EmptyClip, MalformedHeader, MissingFile, UnsupportedEncoding


def test_read_missing_file(tmp_path):
    with pytest.raises(MissingFile):
        read_wav(tmp_path / "nope.wav")


def test_read_malformed_header(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"RIFFxxxxJUNK" + b"\x00" * 64)
    with pytest.raises(MalformedHeader):
        read_wav(path)


def test_read_unsupported_encoding(tmp_path):
    clip = sine_clip(440, 0.01, 8000)
    path = tmp_path / "t.wav"
    write_wav(clip, path)
    raw = bytearray(path.read_bytes())
    raw[20:22] = (2).to_bytes(2, "little")  # ADPCM format tag
    path.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedEncoding):
        read_wav(path)


def test_zero_clip_roundtrip(tmp_path):
    clip = AudioClip(samples=np.zeros(100, dtype=np.float32), sample_rate=44100)
    write_wav(clip, tmp_path / "z.wav")
    back = read_wav(tmp_path / "z.wav")
    assert back.sample_rate == 44100
    np.testing.assert_array_equal(back.samples, np.zeros(100, dtype=np.float32))


def test_pcm16_fullscale_scaling(tmp_path):
    # integer 32767 decodes as 32767/32768
    path = tmp_path / "fs.wav"
    import struct
    payload = struct.pack("<h", 32767)
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(payload), b"WAVE", b"fmt ", 16,
        1, 1, 44100, 88200, 2, 16, b"data", len(payload))
    path.write_bytes(header + payload)
    clip = read_wav(path)
    np.testing.assert_allclose(clip.samples, [32767 / 32768], rtol=1e-7)


def test_stereo_preserved_until_mixdown(tmp_path):
    stereo = AudioClip(
        samples=np.stack([np.full(50, 0.5), np.full(50, -0.5)], axis=1).astype(np.float32),
        sample_rate=8000,
    )
    path = tmp_path / "st.wav"
    write_wav(stereo, path, bit_depth=32)
    back = read_wav(path)
    assert back.n_channels == 2
    mono = to_mono(back)
    np.testing.assert_allclose(mono.samples, 0.0, atol=1e-7)


def test_to_mono_identity_and_mean():
    mono = sine_clip(440, 0.01, 8000)
    assert to_mono(mono) is mono  # idempotent on mono
    two = AudioClip(samples=np.array([[1.0, 0.0]], dtype=np.float32), sample_rate=8000)
    np.testing.assert_allclose(to_mono(two).samples, [0.5])
    with pytest.raises(EmptyClip):
        to_mono(AudioClip(samples=np.zeros((0,), dtype=np.float32), sample_rate=8000))


def test_write_16bit_quantization_bound(tmp_path):
    rng = np.random.default_rng(0)
    clip = AudioClip(samples=rng.uniform(-1, 1, 4096).astype(np.float32), sample_rate=16000)
    write_wav(clip, tmp_path / "q.wav", bit_depth=16)
    back = read_wav(tmp_path / "q.wav")
    assert np.max(np.abs(back.samples - clip.samples)) <= 1.0 / 32768 + 1e-9


def test_write_float32_exact(tmp_path):
    rng = np.random.default_rng(1)
    clip = AudioClip(samples=rng.uniform(-1, 1, 1000).astype(np.float32), sample_rate=22050)
    write_wav(clip, tmp_path / "f.wav", bit_depth=32)
    back = read_wav(tmp_path / "f.wav")
    np.testing.assert_array_equal(back.samples, clip.samples)


def test_write_clipping_count(tmp_path):
    clip = AudioClip(samples=np.array([0.0, 1.5, -2.0], dtype=np.float32), sample_rate=8000)
    clipped = write_wav(clip, tmp_path / "c.wav", bit_depth=32)
    assert clipped == 2
    back = read_wav(tmp_path / "c.wav")
    np.testing.assert_allclose(back.samples, [0.0, 1.0, -1.0])


def test_write_empty_clip_rejected(tmp_path):
    with pytest.raises(EmptyClip):
        write_wav(AudioClip(samples=np.zeros(0, dtype=np.float32), sample_rate=8000),
                  tmp_path / "e.wav")


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(min_value=-1.0, max_value=1.0, width=32), min_size=1, max_size=64))
def test_float32_roundtrip_property(tmp_path_factory, values):
    clip = AudioClip(samples=np.array(values, dtype=np.float32), sample_rate=8000)
    path = tmp_path_factory.mktemp("wav") / "p.wav"
    write_wav(clip, path, bit_depth=32)
    np.testing.assert_array_equal(read_wav(path).samples, clip.samples)


def test_resample_identity_same_rate():
    clip = sine_clip(440, 0.05, 44100)
    assert resample(clip, 44100) is clip


def test_resample_length_ratio():
    clip = AudioClip(samples=np.zeros(44100, dtype=np.float32), sample_rate=44100)
    out = resample(clip, 48000)
    assert out.n_samples == 48000
    assert out.sample_rate == 48000


def test_resample_preserves_tone_frequency():
    # dominant FFT peak stays at 997 Hz within one bin
    clip = sine_clip(997, 1.0, 44100)
    out = resample(clip, 48000)
    spectrum = np.abs(np.fft.rfft(out.samples * np.hanning(out.n_samples)))
    freqs = np.fft.rfftfreq(out.n_samples, 1 / 48000)
    peak = freqs[np.argmax(spectrum)]
    assert abs(peak - 997.0) <= freqs[1] + 1e-9


def test_resample_integer_downsample_tone():
    clip = sine_clip(997, 1.0, 48000)
    out = resample(clip, 16000)
    assert out.n_samples == 16000
    spectrum = np.abs(np.fft.rfft(out.samples * np.hanning(out.n_samples)))
    freqs = np.fft.rfftfreq(out.n_samples, 1 / 16000)
    assert abs(freqs[np.argmax(spectrum)] - 997.0) <= freqs[1] + 1e-9


def test_resample_integer_upsample_passthrough_on_grid():
    # integer-factor upsampling keeps original samples on the source grid
    rng = np.random.default_rng(0)
    clip = AudioClip(samples=rng.standard_normal(256).astype(np.float32), sample_rate=16000)
    out = resample(clip, 48000)
    np.testing.assert_allclose(out.samples[::3], clip.samples, atol=1e-6)
