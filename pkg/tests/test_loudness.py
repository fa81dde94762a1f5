"""BS.1770-style loudness measurement and the conditioning pipeline."""

import numpy as np
import pytest
from conftest import silence_clip, sine_clip
from hypothesis import given, settings
from hypothesis import strategies as st

from pianodiff.audio import AudioClip
from pianodiff.errors import ClipTooShort, IndexOutOfRange, WrongSampleRate
from pianodiff.loudness import (
    HIGHPASS_A,
    HIGHPASS_B,
    SHELF_A,
    SHELF_B,
    LoudnessVector,
    align_to_timeline,
    embed_loudness,
    integrated_loudness,
    k_weight,
    segment_loudness,
)
from pianodiff.nn.tensor import Tensor
from pianodiff.quantizer import Codebook


def cascade_gain(freq_hz: float, rate: int = 48000) -> float:
    """Frequency-response oracle evaluated directly from the coefficients."""
    z = np.exp(1j * 2 * np.pi * freq_hz / rate)

    def biquad(b, a):
        return (b[0] + b[1] / z + b[2] / z**2) / (a[0] + a[1] / z + a[2] / z**2)

    return abs(biquad(SHELF_B, SHELF_A) * biquad(HIGHPASS_B, HIGHPASS_A))


def test_k_weight_requires_48k():
    with pytest.raises(WrongSampleRate):
        k_weight(sine_clip(440, 0.1, 44100))


def test_k_weight_dc_decays_to_zero():
    clip = AudioClip(samples=np.full(48000, 0.5, dtype=np.float32), sample_rate=48000)
    weighted = k_weight(clip)
    assert abs(weighted[-1]) < 1e-4  # high-pass zero at DC


def test_k_weight_997hz_gain():
    clip = sine_clip(997.0, 1.0, 48000, amplitude=1.0)
    weighted = k_weight(clip)[4800:]  # skip the settling transient
    measured = np.sqrt(2.0 * np.mean(weighted**2))  # sine peak from RMS
    assert abs(20 * np.log10(measured / cascade_gain(997.0))) < 0.1


def test_k_weight_10khz_shelf_gain():
    clip = sine_clip(10000.0, 1.0, 48000, amplitude=1.0)
    weighted = k_weight(clip)[4800:]
    gain_db = 20 * np.log10(np.sqrt(2.0 * np.mean(weighted**2)))
    assert abs(gain_db - 4.0) < 0.5
    # and it matches the analytic response
    assert abs(gain_db - 20 * np.log10(cascade_gain(10000.0))) < 0.1


def test_integrated_loudness_silence_floor():
    assert integrated_loudness(silence_clip(0.5, 48000)) == -70.0


def test_integrated_loudness_997_conformance_tone():
    clip = sine_clip(997.0, 1.0, 48000, amplitude=1.0)
    expected = -0.691 + 10 * np.log10(0.5 * cascade_gain(997.0) ** 2)
    value = integrated_loudness(clip)
    assert abs(value - expected) < 0.1
    assert abs(value - (-3.01)) < 0.1


def test_integrated_loudness_halving_is_6dB():
    clip = sine_clip(440.0, 0.5, 48000, amplitude=0.8)
    half = AudioClip(samples=clip.samples * 0.5, sample_rate=48000)
    drop = integrated_loudness(clip) - integrated_loudness(half)
    assert abs(drop - 6.02) < 0.01


def test_integrated_loudness_resamples_other_rates():
    a = integrated_loudness(sine_clip(440.0, 0.5, 48000, amplitude=0.5))
    b = integrated_loudness(sine_clip(440.0, 0.5, 16000, amplitude=0.5))
    assert abs(a - b) < 0.05


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=0.05, max_value=1.0))
def test_gain_scaling_property(k):
    base = sine_clip(523.0, 0.25, 48000, amplitude=0.9)
    scaled = AudioClip(samples=(base.samples * k).astype(np.float32), sample_rate=48000)
    lk = integrated_loudness(scaled)
    if lk > -69.0:  # above floor
        assert abs((integrated_loudness(base) + 20 * np.log10(k)) - lk) < 0.01


def test_segment_loudness_stationary_sine():
    vec = segment_loudness(sine_clip(440.0, 2.0, 48000))
    assert np.ptp(vec.values) < 0.1


def test_segment_loudness_half_silence():
    sr = 16000
    sine = sine_clip(440.0, 1.0, sr).samples
    samples = np.concatenate([np.zeros(sr, dtype=np.float32), sine])
    vec = segment_loudness(AudioClip(samples=samples, sample_rate=sr))
    np.testing.assert_array_equal(vec.values[:8], -70.0)
    assert np.all(vec.values[8:] > -70.0)


def test_segment_length_at_paper_scale():
    n = 2**18
    clip = AudioClip(samples=np.zeros(n, dtype=np.float32), sample_rate=44100)
    assert n // 16 == 16384
    vec = segment_loudness(clip)  # exercises the 16384-sample segmentation
    assert vec.values.shape == (16,)


def test_segment_loudness_too_short():
    with pytest.raises(ClipTooShort):
        segment_loudness(AudioClip(samples=np.zeros(8, dtype=np.float32), sample_rate=8000))


def test_segment_loudness_uses_all_samples():
    # 16 segments of floor(n/16), remainder on the last
    sr = 16000
    n = 16 * 1000 + 7
    samples = np.zeros(n, dtype=np.float32)
    samples[-7:] = 0.9  # only audible in the final segment (remainder)
    vec = segment_loudness(AudioClip(samples=samples, sample_rate=sr))
    assert np.all(vec.values[:15] == -70.0)
    assert vec.values[15] > -70.0


def test_encode_loudness_to_codebook():
    cb = Codebook(centroids=np.array([-70.0, -40.0, -20.0]))
    vec = LoudnessVector(values=np.full(16, -70.0))
    idx = cb.encode_many(vec.values)
    np.testing.assert_array_equal(idx, 0)


def test_align_identity_and_repeat():
    idx = np.arange(16)
    np.testing.assert_array_equal(align_to_timeline(idx, 16), idx)
    aligned = align_to_timeline(idx, 512)
    np.testing.assert_array_equal(aligned, np.repeat(idx, 32))


def test_align_formula_target_20():
    idx = np.arange(16) * 3
    aligned = align_to_timeline(idx, 20)
    expected = idx[(np.arange(20) * 16) // 20]
    np.testing.assert_array_equal(aligned, expected)
    assert aligned[19] == idx[15]


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=16, max_value=700))
def test_align_monotone_and_covering(target):
    idx = np.arange(16)
    aligned = align_to_timeline(idx, target)
    assert aligned.shape == (target,)
    assert np.all(np.diff(aligned) >= 0)
    assert set(aligned.tolist()) == set(range(16))  # every segment appears


def test_embed_loudness_lookup(rng):
    w = Tensor(rng.standard_normal((6, 8)).astype(np.float32))
    rows = embed_loudness(np.array([0, 3, 3, 7]), w).data
    np.testing.assert_array_equal(rows[1], w.data[:, 3])
    np.testing.assert_array_equal(rows[1], rows[2])
    with pytest.raises(IndexOutOfRange):
        embed_loudness(np.array([8]), w)
    zero = embed_loudness(np.array([1, 2]), Tensor(np.zeros((4, 8), dtype=np.float32)))
    assert np.all(zero.data == 0.0)
