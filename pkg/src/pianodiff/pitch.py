"""Pitch estimation, tokenization and embedding.

F0 comes from a cumulative-mean-normalized autocorrelation difference
(YIN-style) with parabolic lag interpolation. Voiced frequencies are then
snapped to a 37-entry reference table (index 0 = unvoiced, 1..36 = C4..B6
in twelve-tone equal temperament) by nearest distance in cents.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .audio import AudioClip
from .errors import ClipTooShort, DimMismatch, IndexOutOfRange, NegativeFrequency
from .nn.tensor import Tensor, take, transpose

# index, pitch name, fundamental (Hz); index 0 marks unvoiced frames
PITCH_TABLE: tuple[tuple[int, str, float], ...] = (
    (0, "None", 0.0),
    (1, "C4", 261.63),
    (2, "C#4/Db4", 277.18),
    (3, "D4", 293.66),
    (4, "D#4/Eb4", 311.13),
    (5, "E4", 329.63),
    (6, "F4", 349.23),
    (7, "F#4/Gb4", 369.99),
    (8, "G4", 392.00),
    (9, "G#4/Ab4", 415.30),
    (10, "A4", 440.00),
    (11, "A#4/Bb4", 466.16),
    (12, "B4", 493.88),
    (13, "C5", 523.25),
    (14, "C#5/Db5", 554.37),
    (15, "D5", 587.33),
    (16, "D#5/Eb5", 622.25),
    (17, "E5", 659.25),
    (18, "F5", 698.46),
    (19, "F#5/Gb5", 739.99),
    (20, "G5", 783.99),
    (21, "G#5/Ab5", 830.61),
    (22, "A5", 880.00),
    (23, "A#5/Bb5", 932.33),
    (24, "B5", 987.77),
    (25, "C6", 1046.50),
    (26, "C#6/Db6", 1108.73),
    (27, "D6", 1174.66),
    (28, "D#6/Eb6", 1244.51),
    (29, "E6", 1318.51),
    (30, "F6", 1396.91),
    (31, "F#6/Gb6", 1479.98),
    (32, "G6", 1567.98),
    (33, "G#6/Ab6", 1661.22),
    (34, "A6", 1760.00),
    (35, "A#6/Bb6", 1864.66),
    (36, "B6", 1975.53),
)

N_PITCH_CLASSES = len(PITCH_TABLE)  # 37

_TABLE_HZ = np.array([row[2] for row in PITCH_TABLE])
_VOICED_LOG2 = np.log2(_TABLE_HZ[1:])

F_MIN = 60.0
F_MAX = 2100.0
CMND_THRESHOLD = 0.2

DEFAULT_HOP = 512
DEFAULT_WINDOW = 2048


def pitch_table_json() -> str:
    """Serialized reference table for audit."""
    rows = [{"index": i, "pitch": name, "f0_hz": hz} for i, name, hz in PITCH_TABLE]
    return json.dumps(rows, indent=2)


@dataclass(frozen=True)
class F0Track:
    f0_hz: np.ndarray          # per frame, 0 where unvoiced
    confidence: np.ndarray     # per frame in [0, 1]
    hop_samples: int
    frame_window_samples: int

    @property
    def n_frames(self) -> int:
        return self.f0_hz.shape[0]


@dataclass(frozen=True)
class PitchTrack:
    indices: np.ndarray        # per frame, in [0, 36]
    hop_samples: int

    @property
    def n_frames(self) -> int:
        return self.indices.shape[0]


def estimate_f0(clip: AudioClip, hop_samples: int = DEFAULT_HOP,
                window: int = DEFAULT_WINDOW) -> F0Track:
    """Frame-wise F0 via CMND autocorrelation difference.

    Frames start every hop_samples; the clip is zero-padded so the count
    is ceil(n / hop). A frame is unvoiced when its CMND minimum in the
    60-2100 Hz lag band stays above the 0.2 threshold.
    """
    if clip.samples.ndim != 1:
        raise DimMismatch("estimate_f0 expects a mono clip")
    n = clip.n_samples
    if n < window:
        raise ClipTooShort(f"need at least {window} samples, got {n}")
    sr = clip.sample_rate

    n_frames = -(-n // hop_samples)  # ceil
    padded_len = (n_frames - 1) * hop_samples + window
    x = np.zeros(padded_len, dtype=np.float64)
    x[:n] = clip.samples

    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop_samples]
    frames = frames[:n_frames]

    w_int = window // 2  # integration window; lags up to window - w_int
    tau_min = max(2, int(sr / F_MAX))
    tau_max = min(int(np.ceil(sr / F_MIN)), w_int - 1)
    if tau_min >= tau_max:
        raise ClipTooShort(f"window {window} too short for the search band at {sr} Hz")

    # difference d(tau) = e0 + e(tau) - 2*c(tau), integration over w_int samples
    fft_size = 1 << int(np.ceil(np.log2(2 * window)))
    head = np.zeros_like(frames)
    head[:, :w_int] = frames[:, :w_int]
    spec_head = np.fft.rfft(head, fft_size, axis=1)
    spec_full = np.fft.rfft(frames, fft_size, axis=1)
    cross = np.fft.irfft(np.conj(spec_head) * spec_full, fft_size, axis=1)[:, : tau_max + 1]

    sq = frames * frames
    cum = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(sq, axis=1)], axis=1)
    e0 = cum[:, w_int : w_int + 1]
    taus = np.arange(tau_max + 1)
    e_tau = cum[:, taus + w_int] - cum[:, taus]
    diff = np.maximum(e0 + e_tau - 2.0 * cross, 0.0)

    # cumulative mean normalization
    running = np.cumsum(diff[:, 1:], axis=1)
    cmnd = np.ones_like(diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        cmnd[:, 1:] = diff[:, 1:] * taus[1:] / running
    cmnd[~np.isfinite(cmnd)] = 1.0  # silent frames: flat difference

    f0 = np.zeros(n_frames)
    conf = np.zeros(n_frames)
    band = cmnd[:, tau_min : tau_max + 1]
    below = band < CMND_THRESHOLD
    for t in range(n_frames):
        row = cmnd[t]
        hits = np.nonzero(below[t])[0]
        if hits.size == 0:
            continue
        # walk from the first threshold crossing to its local minimum so
        # sub-harmonic (octave-down) dips later in the row are ignored
        tau = tau_min + hits[0]
        while tau + 1 <= tau_max and row[tau + 1] < row[tau]:
            tau += 1
        offset = 0.0
        if tau_min < tau < tau_max:
            a, b, c = row[tau - 1], row[tau], row[tau + 1]
            denom = a - 2.0 * b + c
            if abs(denom) > 1e-12:
                offset = float(np.clip(0.5 * (a - c) / denom, -0.5, 0.5))
        f0[t] = sr / (tau + offset)
        conf[t] = float(np.clip(1.0 - row[tau], 0.0, 1.0))

    return F0Track(f0_hz=f0, confidence=conf, hop_samples=hop_samples,
                   frame_window_samples=window)


def tokenize_f0(f0_hz: float) -> int:
    """Map one frequency to its nearest table index (distance in cents).

    0 Hz maps to index 0; out-of-range voiced frequencies land on the
    nearest extreme index; exact ties resolve to the lower index.
    """
    if f0_hz < 0:
        raise NegativeFrequency(f"f0 must be >= 0, got {f0_hz}")
    if f0_hz == 0:
        return 0
    cents = np.abs(1200.0 * (np.log2(f0_hz) - _VOICED_LOG2))
    return int(np.argmin(cents)) + 1


def tokenize_track(track: F0Track) -> PitchTrack:
    """Vectorized tokenize_f0 over a whole F0 track."""
    f0 = track.f0_hz
    if np.any(f0 < 0):
        raise NegativeFrequency("track contains negative frequencies")
    indices = np.zeros(f0.shape[0], dtype=np.int64)
    voiced = f0 > 0
    if np.any(voiced):
        cents = np.abs(1200.0 * (np.log2(f0[voiced])[:, None] - _VOICED_LOG2[None, :]))
        indices[voiced] = np.argmin(cents, axis=1) + 1
    return PitchTrack(indices=indices, hop_samples=track.hop_samples)


def one_hot(index: int) -> np.ndarray:
    if not 0 <= index < N_PITCH_CLASSES:
        raise IndexOutOfRange(f"pitch index {index} outside [0, {N_PITCH_CLASSES - 1}]")
    vec = np.zeros(N_PITCH_CLASSES, dtype=np.float32)
    vec[index] = 1.0
    return vec


def embed_pitch(track: PitchTrack, weight: Tensor) -> Tensor:
    """Dense per-frame pitch vectors: row t is column indices[t] of weight.

    weight: [embed_dim, 37]. Equivalent to one_hot(index) @ weight.T, kept
    as a column lookup so gradients reach only the used columns.
    """
    if weight.shape[1] != N_PITCH_CLASSES:
        raise DimMismatch(f"pitch embedding needs {N_PITCH_CLASSES} columns, got {weight.shape}")
    if np.any(track.indices < 0) or np.any(track.indices >= N_PITCH_CLASSES):
        raise IndexOutOfRange("pitch track contains out-of-range indices")
    columns = take(weight, track.indices, axis=1)  # [D, frames]
    return transpose(columns, (1, 0))
