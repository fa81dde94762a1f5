"""WAV reading/writing and basic sample-rate plumbing.

All internal processing works on mono float32 clips in [-1, 1]. Only
uncompressed RIFF/WAVE is handled: PCM 16-bit and IEEE float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyClip, IoFailure, MalformedHeader, MissingFile, UnsupportedEncoding

_FMT_PCM = 1
_FMT_FLOAT = 3

RESAMPLE_TAPS = 64  # windowed-sinc kernel half-support is TAPS // 2


@dataclass(frozen=True)
class AudioClip:
    """Audio samples plus their rate.

    ``samples`` is float32, shape (n,) for mono or (n, channels) before
    mixdown. Treated as immutable; operations return new clips.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


def read_wav(path) -> AudioClip:
    """Read a RIFF/WAVE file (PCM16 or float32) into an AudioClip.

    Multi-channel audio is preserved; call to_mono before analysis.
    Integer samples are scaled by 1/32768 so the result lies in [-1, 1].
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoFailure(str(e)) from e

    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedHeader(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise MalformedHeader(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise MalformedHeader(f"{path}: missing fmt or data chunk")

    audio_format, channels, sample_rate, _, _, bits = fmt
    if channels < 1 or sample_rate < 1:
        raise MalformedHeader(f"{path}: bad fmt fields")

    if audio_format == _FMT_PCM and bits == 16:
        flat = np.frombuffer(data, dtype="<i2").astype(np.float32) / 32768.0
    elif audio_format == _FMT_FLOAT and bits == 32:
        flat = np.frombuffer(data, dtype="<f4").astype(np.float32)
    else:
        raise UnsupportedEncoding(
            f"{path}: format tag {audio_format} / {bits}-bit not supported "
            "(PCM16 and IEEE float32 only)"
        )

    n_frames = flat.shape[0] // channels
    flat = flat[: n_frames * channels]
    samples = flat.reshape(n_frames, channels) if channels > 1 else flat
    return AudioClip(samples=samples, sample_rate=int(sample_rate))


def write_wav(clip: AudioClip, path, bit_depth: int = 16) -> int:
    """Write a clip as PCM16 (bit_depth=16) or IEEE float32 (bit_depth=32).

    Samples outside [-1, 1] are hard-clipped; returns how many were.
    """
    if clip.n_samples == 0:
        raise EmptyClip("refusing to write an empty clip")
    if bit_depth not in (16, 32):
        raise ValueError(f"bit_depth must be 16 or 32, got {bit_depth}")

    x = np.asarray(clip.samples, dtype=np.float32)
    clipped = int(np.count_nonzero((x > 1.0) | (x < -1.0)))
    x = np.clip(x, -1.0, 1.0)

    channels = clip.n_channels
    if bit_depth == 16:
        # scale by 32768 and clamp the lone overflow at +1.0 to keep the
        # round-trip error within one LSB
        ints = np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")
        payload = ints.tobytes()
        fmt_tag, bytes_per = _FMT_PCM, 2
    else:
        payload = x.astype("<f4").tobytes()
        fmt_tag, bytes_per = _FMT_FLOAT, 4

    block_align = channels * bytes_per
    byte_rate = clip.sample_rate * block_align
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        fmt_tag,
        channels,
        clip.sample_rate,
        byte_rate,
        block_align,
        bit_depth,
        b"data",
        len(payload),
    )
    try:
        Path(path).write_bytes(header + payload)
    except OSError as e:
        raise IoFailure(str(e)) from e
    return clipped


def to_mono(clip: AudioClip) -> AudioClip:
    """Mix down to mono by averaging channels. Idempotent on mono input."""
    if clip.n_samples == 0:
        raise EmptyClip("cannot mix down an empty clip")
    if clip.samples.ndim == 1:
        return clip
    mono = clip.samples.mean(axis=1).astype(np.float32)
    return AudioClip(samples=mono, sample_rate=clip.sample_rate)


def _sinc_kernel_rows(positions: np.ndarray, cutoff: float) -> tuple[np.ndarray, np.ndarray]:
    """Windowed-sinc weights for fractional source positions.

    Returns (first_tap_index, weights[n, RESAMPLE_TAPS]).
    """
    half = RESAMPLE_TAPS // 2
    first = np.floor(positions).astype(np.int64) - (half - 1)
    offsets = positions[:, None] - (first[:, None] + np.arange(RESAMPLE_TAPS)[None, :])
    # Hann window over the kernel support, zero at |offset| == half
    window = 0.5 * (1.0 + np.cos(np.pi * offsets / half))
    window[np.abs(offsets) >= half] = 0.0
    weights = cutoff * np.sinc(cutoff * offsets) * window
    return first, weights


def _phase_weights(fractions: np.ndarray, cutoff: float) -> np.ndarray:
    """Kernel rows for source-grid offsets p in [0,1): weight[i] covers
    tap first+i with first = floor(pos) - half + 1."""
    half = RESAMPLE_TAPS // 2
    offsets = (half - 1) + fractions[:, None] - np.arange(RESAMPLE_TAPS)[None, :]
    window = 0.5 * (1.0 + np.cos(np.pi * offsets / half))
    window[np.abs(offsets) >= half] = 0.0
    return cutoff * np.sinc(cutoff * offsets) * window


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited resampling with a 64-tap Hann-windowed sinc kernel.

    Output length is round(n * target_rate / sample_rate). Returns the
    clip unchanged (same object) when target_rate equals the source rate.
    Integer rate ratios take a polyphase path (one GEMV per phase).
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    if clip.samples.ndim != 1:
        raise ValueError("resample expects a mono clip; call to_mono first")

    n_in = clip.n_samples
    n_out = int(round(n_in * target_rate / clip.sample_rate))
    if n_in == 0 or n_out == 0:
        return AudioClip(samples=np.zeros(n_out, dtype=np.float32), sample_rate=target_rate)

    ratio = target_rate / clip.sample_rate
    cutoff = min(1.0, ratio)  # anti-alias when downsampling
    half = RESAMPLE_TAPS // 2
    x = np.pad(clip.samples.astype(np.float64), (half, half))

    if target_rate % clip.sample_rate == 0:
        factor = target_rate // clip.sample_rate
        weights = _phase_weights(np.arange(factor) / factor, cutoff)
        windows = np.lib.stride_tricks.sliding_window_view(x, RESAMPLE_TAPS)
        out = np.empty(n_out, dtype=np.float64)
        for p in range(factor):
            out[p::factor] = windows[1 : n_in + 1] @ weights[p]
    elif clip.sample_rate % target_rate == 0:
        step = clip.sample_rate // target_rate
        weights = _phase_weights(np.zeros(1), cutoff)[0]
        windows = np.lib.stride_tricks.sliding_window_view(x, RESAMPLE_TAPS)
        out = windows[1 + step * np.arange(n_out)] @ weights
    else:
        out = np.empty(n_out, dtype=np.float64)
        step = 1.0 / ratio
        chunk = 1 << 16
        for begin in range(0, n_out, chunk):
            end = min(begin + chunk, n_out)
            positions = np.arange(begin, end, dtype=np.float64) * step
            first, rows = _sinc_kernel_rows(positions, cutoff)
            taps = first[:, None] + np.arange(RESAMPLE_TAPS)[None, :] + half
            out[begin:end] = np.einsum("nk,nk->n", x[taps], rows)
    return AudioClip(samples=out.astype(np.float32), sample_rate=int(target_rate))
