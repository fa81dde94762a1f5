"""Corpus handling, conditioning, the training loop and checkpoints.

Training is self-reconstruction: each batch element's condition (pitch
and loudness tokens, then their learned embeddings) is computed from the
element itself, and the same encoders run on foreign audio at conversion
time. The embedding matrices live on the model so their gradients flow
through the condition.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffusion, loudness, pitch, quantizer
from .audio import AudioClip, read_wav, to_mono
from .dataset import DatasetIndex
from .errors import (
    BadMagic,
    ConfigError,
    IoFailure,
    NonFiniteLoss,
    TensorDimMismatch,
    VersionMismatch,
)
from .nn.layers import Module, _uniform
from .nn.optim import Adam
from .nn.tensor import Parameter, Tensor, no_grad
from .nn import tensor as T
from .quantizer import Codebook
from .unet import UNet1d, UNetConfig

CHECKPOINT_MAGIC = b"TPDM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    sample_rate: int = 16000
    segment_length: int = 16384     # paper scale would be 2**18 at 44100 Hz
    batch_size: int = 8
    epochs: int = 4
    learning_rate: float = 1e-4
    seed: int = 0
    hop_samples: int = 512
    pitch_embed_dim: int = 64
    loudness_embed_dim: int = 64
    codebook_k: int = 32
    checkpoint_every: int = 500
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 4, 4)
    downsample: int = 4
    attention_levels: tuple[int, ...] = (2, 3)
    heads: int = 4
    groups: int = 8
    time_dim: int = 128

    def __post_init__(self):
        object.__setattr__(self, "channel_mults", tuple(self.channel_mults))
        object.__setattr__(self, "attention_levels", tuple(self.attention_levels))
        if self.segment_length % self.hop_samples != 0:
            raise ConfigError("segment_length must be a multiple of hop_samples")
        self.unet_config()  # validates divisibility constraints

    @property
    def cond_frames(self) -> int:
        return self.segment_length // self.hop_samples

    @property
    def cond_width(self) -> int:
        return self.pitch_embed_dim + self.loudness_embed_dim

    def unet_config(self) -> UNetConfig:
        return UNetConfig(
            input_length=self.segment_length,
            base_channels=self.base_channels,
            channel_mults=self.channel_mults,
            downsample=self.downsample,
            attention_levels=self.attention_levels,
            heads=self.heads,
            groups=self.groups,
            cond_width=self.cond_width,
            cond_frames=self.cond_frames,
            time_dim=self.time_dim,
        )

    def to_dict(self) -> dict:
        doc = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            doc[name] = list(value) if isinstance(value, tuple) else value
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        for key in ("channel_mults", "attention_levels"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


class ConversionModel(Module):
    """U-Net plus the learned pitch/loudness embedding tables."""

    def __init__(self, config: TrainConfig, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x6D6F64]))
        self.train_config = config
        self.config = config.unet_config()
        self.pitch_embed = Parameter(
            _uniform(rng, (config.pitch_embed_dim, pitch.N_PITCH_CLASSES),
                     pitch.N_PITCH_CLASSES, dtype))
        self.loud_embed = Parameter(
            _uniform(rng, (config.loudness_embed_dim, config.codebook_k),
                     config.codebook_k, dtype))
        self.unet = UNet1d(self.config, rng, dtype=dtype)

    def __call__(self, x: Tensor, t: np.ndarray, cond: Tensor) -> Tensor:
        return self.unet(x, t, cond)


@dataclass
class ConditioningBundle:
    """Per-frame condition matrix [frames, pitch+loudness width]."""

    matrix: Tensor
    pitch_indices: np.ndarray
    loudness_indices: np.ndarray


def crop_segment(clip: AudioClip, n: int, rng: np.random.Generator) -> np.ndarray:
    """A uniformly random n-sample window, or the zero-padded whole clip."""
    if n < 1:
        raise ValueError(f"segment length must be >= 1, got {n}")
    x = clip.samples
    if x.shape[0] >= n:
        offset = int(rng.integers(0, x.shape[0] - n + 1))
        return np.asarray(x[offset : offset + n], dtype=np.float32)
    return np.pad(x, (0, n - x.shape[0])).astype(np.float32)


def build_conditioning(segment: np.ndarray, model: ConversionModel,
                       codebook: Codebook) -> ConditioningBundle:
    """Pitch and loudness pipelines on one segment, concatenated per frame."""
    cfg = model.train_config
    if segment.shape[0] != cfg.segment_length:
        raise ConfigError(
            f"segment length {segment.shape[0]} != configured {cfg.segment_length}"
        )
    clip = AudioClip(samples=np.asarray(segment, dtype=np.float32),
                     sample_rate=cfg.sample_rate)
    track = pitch.tokenize_track(pitch.estimate_f0(clip, hop_samples=cfg.hop_samples))
    vec = loudness.segment_loudness(clip)
    seg_idx = loudness.encode_loudness(vec, codebook)
    aligned = loudness.align_to_timeline(seg_idx, track.n_frames)
    pitch_rows = pitch.embed_pitch(track, model.pitch_embed)
    loud_rows = loudness.embed_loudness(aligned, model.loud_embed)
    matrix = T.concat([pitch_rows, loud_rows], axis=1)
    return ConditioningBundle(matrix=matrix,
                              pitch_indices=track.indices,
                              loudness_indices=aligned)


def _stack_conditions(bundles) -> Tensor:
    rows = [T.reshape(b.matrix, (1,) + tuple(b.matrix.shape)) for b in bundles]
    return rows[0] if len(rows) == 1 else T.concat(rows, axis=0)


def train_step(model: ConversionModel, segments: np.ndarray, optimizer: Adam,
               rng: np.random.Generator, codebook: Codebook) -> float:
    """One optimization step on a [B, L] batch of segments; returns the loss."""
    bundles = [build_conditioning(seg, model, codebook) for seg in segments]
    cond = _stack_conditions(bundles)
    x0 = segments[:, None, :].astype(np.float32)
    optimizer.zero_grad()
    loss = diffusion.loss_v(model, x0, cond, rng)
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteLoss(f"loss became {value}")
    loss.backward()
    optimizer.step()
    return value


def fit_codebook_from_corpus(index: DatasetIndex, k: int, base_dir,
                             segment_length: int) -> Codebook:
    """Pool the 16 per-segment readings from every clip (clips pre-split
    at segment_length granularity) and fit the scalar codebook."""
    base_dir = Path(base_dir)
    pool = []
    for name, _ in index.entries:
        clip = to_mono(read_wav(base_dir / name))
        n_segments = max(1, clip.n_samples // segment_length)
        for s in range(n_segments):
            chunk = clip.samples[s * segment_length : (s + 1) * segment_length]
            if chunk.shape[0] == 0:
                continue
            sub = AudioClip(samples=chunk, sample_rate=clip.sample_rate)
            pool.append(loudness.segment_loudness(sub).values)
    values = np.concatenate(pool)
    return quantizer.fit(values, k)


# --- checkpoints ---

def _write_record(fh, name: str, array: np.ndarray) -> None:
    encoded = name.encode()
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", array.ndim))
    fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
    fh.write(array.astype("<f4").tobytes())


def _read_record(fh):
    raw = fh.read(4)
    if not raw:
        return None
    (name_len,) = struct.unpack("<I", raw)
    name = fh.read(name_len).decode()
    (rank,) = struct.unpack("<I", fh.read(4))
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(dims)
    return name, data


def save_checkpoint(model: ConversionModel, path, step: int = 0,
                    include_optimizer: bool = True) -> None:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "step": int(step),
        "train_config": model.train_config.to_dict(),
    }
    header_bytes = json.dumps(header).encode()
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            fh.write(struct.pack("<I", len(header_bytes)))
            fh.write(header_bytes)
            for name, param in model.named_parameters():
                _write_record(fh, name, param.data)
                if include_optimizer and param.adam_m is not None:
                    _write_record(fh, f"adam_m:{name}", param.adam_m)
                    _write_record(fh, f"adam_v:{name}", param.adam_v)
    except OSError as e:
        raise IoFailure(str(e)) from e


def load_checkpoint(path) -> tuple[ConversionModel, int]:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != CHECKPOINT_MAGIC:
                raise BadMagic(f"expected {CHECKPOINT_MAGIC!r}, found {magic!r}")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != CHECKPOINT_VERSION:
                raise VersionMismatch(f"unsupported checkpoint version {version}")
            (header_len,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(header_len).decode())
            records = {}
            while True:
                rec = _read_record(fh)
                if rec is None:
                    break
                records[rec[0]] = rec[1]
    except OSError as e:
        raise IoFailure(str(e)) from e

    config = TrainConfig.from_dict(header["train_config"])
    model = ConversionModel(config)
    step = int(header.get("step", 0))
    for name, param in model.named_parameters():
        if name not in records:
            raise TensorDimMismatch(f"checkpoint is missing tensor {name}")
        data = records[name]
        if data.shape != param.data.shape:
            raise TensorDimMismatch(
                f"{name}: checkpoint {data.shape} vs model {param.data.shape}"
            )
        param.data = data.astype(np.float32)
        if f"adam_m:{name}" in records:
            param.adam_m = records[f"adam_m:{name}"].astype(np.float32)
            param.adam_v = records[f"adam_v:{name}"].astype(np.float32)
            param.step_count = step
    return model, step


# --- the loop ---

@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    steps: int = 0
    checkpoint_path: Path | None = None
    model: ConversionModel | None = None


def train(config: TrainConfig, index: DatasetIndex, codebook: Codebook,
          corpus_dir, out_dir, resume_from=None, log_every: int = 1,
          progress=None) -> TrainResult:
    """Epochs of one random crop per corpus clip, batched; loss log and
    periodic checkpoints land in out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_dir = Path(corpus_dir)

    if resume_from is not None:
        model, start_step = load_checkpoint(resume_from)
    else:
        model = ConversionModel(config)
        start_step = 0
    optimizer = Adam(model.parameters(), lr=config.learning_rate)

    clips = [to_mono(read_wav(corpus_dir / name)) for name, _ in index.entries]
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, start_step, 0x747261]))

    result = TrainResult()
    step = start_step
    log_path = out_dir / "loss_log.csv"
    fresh_log = not (resume_from is not None and log_path.exists())
    with open(log_path, "w" if fresh_log else "a", newline="") as log_fh:
        writer = csv.writer(log_fh)
        if fresh_log:
            writer.writerow(["step", "loss"])
        for _ in range(config.epochs):
            order = rng.permutation(len(clips))
            for begin in range(0, len(order), config.batch_size):
                chosen = order[begin : begin + config.batch_size]
                segments = np.stack([
                    crop_segment(clips[i], config.segment_length, rng) for i in chosen
                ])
                value = train_step(model, segments, optimizer, rng, codebook)
                step += 1
                result.losses.append(value)
                if step % log_every == 0:
                    writer.writerow([step, f"{value:.6f}"])
                if progress is not None:
                    progress(step, value)
                if config.checkpoint_every and step % config.checkpoint_every == 0:
                    save_checkpoint(model, out_dir / f"checkpoint_{step:07d}.tpdm", step=step)
    final_path = out_dir / "model.tpdm"
    save_checkpoint(model, final_path, step=step)
    result.steps = step
    result.checkpoint_path = final_path
    result.model = model
    return result
