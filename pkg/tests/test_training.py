"""Conditioning construction, train steps, checkpoints, corpus codebook."""

import numpy as np
import pytest

import pianodiff.nn.tensor as T
from pianodiff import diffusion, quantizer
from pianodiff.audio import AudioClip
from pianodiff.dataset import PRESETS, generate_corpus, load_index, render_score, sample_score
from pianodiff.errors import BadMagic, ConfigError, TensorDimMismatch, VersionMismatch
from pianodiff.loudness import segment_loudness
from pianodiff.nn.optim import Adam
from pianodiff.nn.tensor import Tensor
from pianodiff.training import (
    ConversionModel,
    TrainConfig,
    build_conditioning,
    crop_segment,
    fit_codebook_from_corpus,
    load_checkpoint,
    save_checkpoint,
    train,
    train_step,
)

TINY_CFG = TrainConfig(
    sample_rate=8000,
    segment_length=2048,
    batch_size=2,
    epochs=1,
    seed=0,
    base_channels=8,
    channel_mults=(1, 2),
    attention_levels=(1,),
    heads=2,
    groups=4,
    pitch_embed_dim=8,
    loudness_embed_dim=8,
    codebook_k=4,
    time_dim=16,
    checkpoint_every=0,
)


def tiny_codebook():
    return quantizer.Codebook(centroids=np.array([-70.0, -45.0, -25.0, -10.0]))


def piano_segment(cfg=TINY_CFG, seed=4):
    rng = np.random.default_rng(seed)
    clip = render_score(sample_score(rng, 960), PRESETS["piano"], cfg.sample_rate)
    seg = np.zeros(cfg.segment_length, dtype=np.float32)
    n = min(clip.n_samples, cfg.segment_length)
    seg[:n] = clip.samples[:n]
    return seg


def test_config_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"sample_rate": 8000, "bogus_knob": 1})


def test_config_roundtrip():
    cfg = TrainConfig.from_dict(TINY_CFG.to_dict())
    assert cfg == TINY_CFG


def test_crop_whole_clip_when_exact():
    clip = AudioClip(samples=np.arange(10, dtype=np.float32), sample_rate=8000)
    out = crop_segment(clip, 10, np.random.default_rng(0))
    np.testing.assert_array_equal(out, clip.samples)


def test_crop_pads_short_clip():
    clip = AudioClip(samples=np.ones(6, dtype=np.float32), sample_rate=8000)
    out = crop_segment(clip, 16, np.random.default_rng(0))
    np.testing.assert_array_equal(out[:6], 1.0)
    np.testing.assert_array_equal(out[6:], 0.0)


def test_crop_seeded_determinism():
    clip = AudioClip(samples=np.arange(100, dtype=np.float32), sample_rate=8000)
    a = crop_segment(clip, 32, np.random.default_rng(9))
    b = crop_segment(clip, 32, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


def test_build_conditioning_shapes_and_silence():
    model = ConversionModel(TINY_CFG)
    silence = np.zeros(TINY_CFG.segment_length, dtype=np.float32)
    bundle = build_conditioning(silence, model, tiny_codebook())
    frames = TINY_CFG.cond_frames
    assert bundle.matrix.shape == (frames, TINY_CFG.cond_width)
    np.testing.assert_array_equal(bundle.pitch_indices, 0)
    np.testing.assert_array_equal(bundle.loudness_indices, 0)  # nearest to -70


def test_build_conditioning_row_count_formula():
    model = ConversionModel(TINY_CFG)
    bundle = build_conditioning(piano_segment(), model, tiny_codebook())
    assert bundle.matrix.shape[0] == TINY_CFG.segment_length // TINY_CFG.hop_samples


def test_train_step_first_loss_matches_mean_v_squared():
    model = ConversionModel(TINY_CFG)
    seg = piano_segment()
    segments = seg[None, :]
    opt = Adam(model.parameters(), lr=TINY_CFG.learning_rate)

    rng_loss = np.random.default_rng(31)
    value = train_step(model, segments, opt, rng_loss, tiny_codebook())

    rng_check = np.random.default_rng(31)
    t = rng_check.uniform(0.0, 1.0, size=1)
    noise = rng_check.standard_normal((1, 1, TINY_CFG.segment_length)).astype(np.float32)
    expected = float(np.mean(diffusion.v_target(seg[None, None, :], noise, t) ** 2))
    assert np.isfinite(value)
    assert abs(value - expected) < 1e-3


def test_train_step_deterministic_trajectories():
    losses = []
    for _ in range(2):
        model = ConversionModel(TINY_CFG)
        opt = Adam(model.parameters(), lr=1e-3)
        rng = np.random.default_rng(5)
        segments = piano_segment()[None, :]
        losses.append([train_step(model, segments, opt, rng, tiny_codebook())
                       for _ in range(4)])
    assert losses[0] == losses[1]


def test_embeddings_receive_gradients():
    # step 1 only moves the zero-init head; gradients reach the embedding
    # tables once the head is nonzero
    model = ConversionModel(TINY_CFG)
    opt = Adam(model.parameters(), lr=1e-3)
    rng = np.random.default_rng(5)
    for _ in range(3):
        train_step(model, piano_segment()[None, :], opt, rng, tiny_codebook())
    assert model.pitch_embed.grad is not None
    assert np.any(model.pitch_embed.grad != 0.0)
    assert model.loud_embed.grad is not None
    assert np.any(model.loud_embed.grad != 0.0)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = ConversionModel(TINY_CFG)
    opt = Adam(model.parameters(), lr=1e-3)
    rng = np.random.default_rng(5)
    train_step(model, piano_segment()[None, :], opt, rng, tiny_codebook())

    path = tmp_path / "m.tpdm"
    save_checkpoint(model, path, step=17)
    loaded, step = load_checkpoint(path)
    assert step == 17
    for (name_a, p_a), (name_b, p_b) in zip(model.named_parameters(),
                                            loaded.named_parameters()):
        assert name_a == name_b
        np.testing.assert_array_equal(p_a.data, p_b.data)
        np.testing.assert_array_equal(p_a.adam_m, p_b.adam_m)

    # identical sampler output for identical seeds
    cond = Tensor(np.random.default_rng(3).standard_normal(
        (1, TINY_CFG.cond_frames, TINY_CFG.cond_width)).astype(np.float32))
    a = diffusion.ddim_sample(model, cond, steps=4, seed=12)
    b = diffusion.ddim_sample(loaded, cond, steps=4, seed=12)
    np.testing.assert_array_equal(a, b)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "м.tpdm"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(BadMagic):
        load_checkpoint(path)


def test_checkpoint_version_gate(tmp_path):
    model = ConversionModel(TINY_CFG)
    path = tmp_path / "m.tpdm"
    save_checkpoint(model, path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatch):
        load_checkpoint(path)


def test_checkpoint_dim_mismatch(tmp_path):
    model = ConversionModel(TINY_CFG)
    path = tmp_path / "m.tpdm"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    # truncate the record stream: a missing tensor must be rejected
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises((TensorDimMismatch, Exception)):
        load_checkpoint(path)


def test_fit_codebook_pool_counting(tmp_path):
    # pool size = clips x segments-per-clip x 16
    generate_corpus(3, tmp_path, seed=2, clip_seconds=1.0, sample_rate=8000)
    index = load_index(tmp_path / "manifest.json")
    seg_len = 2048
    segments_per_clip = 8000 // seg_len  # = 3
    cb = fit_codebook_from_corpus(index, 4, tmp_path, seg_len)
    assert cb.fit_metadata["samples"] == 3 * segments_per_clip * 16
    assert cb.k <= 4


def test_fit_codebook_silent_corpus(tmp_path):
    from pianodiff.audio import write_wav
    silent = AudioClip(samples=np.zeros(4096, dtype=np.float32), sample_rate=8000)
    write_wav(silent, tmp_path / "clip_0000.wav")
    (tmp_path / "manifest.json").write_text(
        '{"version": 1, "sample_rate": 8000, '
        '"entries": [{"file": "clip_0000.wav", "samples": 4096}]}'
    )
    index = load_index(tmp_path / "manifest.json")
    cb = fit_codebook_from_corpus(index, 1, tmp_path, 2048)
    np.testing.assert_allclose(cb.centroids, [-70.0])


def test_train_loop_writes_logs_and_checkpoint(tmp_path):
    corpus = tmp_path / "corpus"
    generate_corpus(2, corpus, seed=2, clip_seconds=0.5, sample_rate=8000)
    index = load_index(corpus / "manifest.json")
    cb = tiny_codebook()
    out = tmp_path / "run"
    result = train(TINY_CFG, index, cb, corpus, out)
    assert result.steps == 1  # 2 clips / batch 2, 1 epoch
    assert (out / "model.tpdm").exists()
    lines = (out / "loss_log.csv").read_text().strip().splitlines()
    assert lines[0] == "step,loss"
    assert len(lines) == 2


def test_train_resume_continues_step_counter(tmp_path):
    corpus = tmp_path / "corpus"
    generate_corpus(2, corpus, seed=2, clip_seconds=0.5, sample_rate=8000)
    index = load_index(corpus / "manifest.json")
    cb = tiny_codebook()
    first = train(TINY_CFG, index, cb, corpus, tmp_path / "run1")
    second = train(TINY_CFG, index, cb, corpus, tmp_path / "run2",
                   resume_from=first.checkpoint_path)
    assert second.steps == first.steps + 1
