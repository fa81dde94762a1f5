"""LKFS loudness measurement and the loudness conditioning pipeline.

Measurement follows ITU-R BS.1770-4 for a mono channel: the two-stage
K-weighting filter (high shelf, then high-pass) applied at 48 kHz, then
-0.691 + 10*log10(mean square), floored at -70 LKFS. Clips at other rates
are resampled to 48 kHz first; the filter coefficients are only defined
at that rate and recomputing them per rate is deliberately avoided.

No gating is applied: the 16-way segment split of a ~6 s clip yields
segments shorter than the standard's 400 ms gating blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .audio import AudioClip, resample
from .errors import ClipTooShort, DimMismatch, EmptyInput, IndexOutOfRange, WrongSampleRate
from .nn.tensor import Tensor, take, transpose

K_WEIGHT_RATE = 48000

# BS.1770-4 stage 1: high-frequency shelf (b, a at 48 kHz)
SHELF_B = (1.53512485958697, -2.69169618940638, 1.19839281085285)
SHELF_A = (1.0, -1.69065929318241, 0.73248077421585)
# BS.1770-4 stage 2: high-pass (numerator (1, -2, 1) has a zero at DC)
HIGHPASS_B = (1.0, -2.0, 1.0)
HIGHPASS_A = (1.0, -1.99004745483398, 0.99007225036621)

LOUDNESS_FLOOR = -70.0
N_SEGMENTS = 16


@dataclass(frozen=True)
class LoudnessVector:
    """The 16 per-segment LKFS readings of one clip."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (N_SEGMENTS,):
            raise DimMismatch(f"expected {N_SEGMENTS} readings, got {self.values.shape}")
        if np.any(self.values < LOUDNESS_FLOOR):
            raise ValueError("readings below the -70 LKFS floor")


@dataclass(frozen=True)
class LoudnessTrack:
    segment_indices: np.ndarray   # 16 codebook indices
    aligned_indices: np.ndarray   # expanded to the pitch timeline


def k_weight(clip: AudioClip) -> np.ndarray:
    """Apply the two-stage K-weighting cascade. Requires 48 kHz input."""
    if clip.sample_rate != K_WEIGHT_RATE:
        raise WrongSampleRate(
            f"K-weighting is defined at {K_WEIGHT_RATE} Hz, got {clip.sample_rate}"
        )
    if clip.samples.ndim != 1:
        raise DimMismatch("k_weight expects a mono clip")
    x = clip.samples.astype(np.float64)
    x = lfilter(SHELF_B, SHELF_A, x)
    return lfilter(HIGHPASS_B, HIGHPASS_A, x)


def _mean_square_to_lkfs(mean_square: float) -> float:
    if mean_square <= 0.0:
        return LOUDNESS_FLOOR
    return max(LOUDNESS_FLOOR, -0.691 + 10.0 * np.log10(mean_square))


def integrated_loudness(clip: AudioClip) -> float:
    """LKFS of a whole clip (mono weight G=1), floored at -70."""
    if clip.n_samples == 0:
        raise EmptyInput("cannot measure an empty clip")
    weighted = k_weight(resample(clip, K_WEIGHT_RATE))
    return _mean_square_to_lkfs(float(np.mean(weighted * weighted)))


def segment_loudness(clip: AudioClip) -> LoudnessVector:
    """Sixteen equal-segment LKFS readings.

    Segments are floor(n/16) samples in the clip's native rate, remainder
    appended to the last; every sample is measured exactly once.
    """
    if clip.samples.ndim != 1:
        raise DimMismatch("segment_loudness expects a mono clip")
    n = clip.n_samples
    if n < N_SEGMENTS:
        raise ClipTooShort(f"need at least {N_SEGMENTS} samples, got {n}")
    seg_len = n // N_SEGMENTS
    values = np.empty(N_SEGMENTS)
    for i in range(N_SEGMENTS):
        start = i * seg_len
        stop = start + seg_len if i < N_SEGMENTS - 1 else n
        segment = AudioClip(samples=clip.samples[start:stop], sample_rate=clip.sample_rate)
        values[i] = integrated_loudness(segment)
    return LoudnessVector(values=values)


def encode_loudness(vec: LoudnessVector, codebook) -> np.ndarray:
    """Nearest-centroid index for each of the 16 readings."""
    return codebook.encode_many(vec.values)


def align_to_timeline(indices: np.ndarray, target_len: int) -> np.ndarray:
    """Stretch 16 segment indices onto a frame timeline.

    aligned[t] = indices[floor(t * 16 / target_len)]; monotone, and every
    segment appears at least once when target_len >= 16.
    """
    if target_len < 1:
        raise ValueError(f"target_len must be >= 1, got {target_len}")
    indices = np.asarray(indices)
    src = (np.arange(target_len, dtype=np.int64) * indices.shape[0]) // target_len
    return indices[src]


def embed_loudness(aligned_indices: np.ndarray, weight: Tensor) -> Tensor:
    """Per-frame loudness vectors: row t is column aligned_indices[t] of weight."""
    k = weight.shape[1]
    if np.any(aligned_indices < 0) or np.any(aligned_indices >= k):
        raise IndexOutOfRange(f"loudness index outside [0, {k - 1}]")
    columns = take(weight, np.asarray(aligned_indices), axis=1)
    return transpose(columns, (1, 0))
