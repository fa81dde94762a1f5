"""Source-vs-converted analysis: loudness curves, spectrograms, pitch accuracy.

Quantifies what the figures-style evaluation shows visually: a sliding
short-term loudness curve for each clip, their difference trace, STFT
magnitudes, and the fraction of frames whose pitch tokens agree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, resample
from .errors import ClipTooShort, DurationMismatch, GridMismatch, IoFailure
from .loudness import K_WEIGHT_RATE, LOUDNESS_FLOOR, k_weight
from .pitch import DEFAULT_HOP, DEFAULT_WINDOW, estimate_f0, tokenize_track

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class LoudnessCurve:
    times: np.ndarray    # window centers, seconds
    values: np.ndarray   # LKFS, floored
    window_s: float
    hop_s: float


def loudness_curve(clip: AudioClip, window_s: float = 0.4, hop_s: float = 0.1) -> LoudnessCurve:
    """Short-term loudness: K-weighted mean square per sliding window.

    The clip is resampled to 48 kHz and weighted once; windows then slice
    the weighted signal, which matches per-window measurement up to the
    filters' few-ms settling transient.
    """
    work = resample(clip, K_WEIGHT_RATE)
    win = int(round(window_s * K_WEIGHT_RATE))
    hop = int(round(hop_s * K_WEIGHT_RATE))
    if work.n_samples < win:
        raise ClipTooShort(f"clip shorter than the {window_s} s window")
    weighted = k_weight(work)
    sq = weighted * weighted
    cum = np.concatenate([[0.0], np.cumsum(sq)])
    n_windows = (work.n_samples - win) // hop + 1
    starts = np.arange(n_windows) * hop
    means = (cum[starts + win] - cum[starts]) / win
    values = np.full(n_windows, LOUDNESS_FLOOR)
    positive = means > 0
    values[positive] = np.maximum(
        LOUDNESS_FLOOR, -0.691 + 10.0 * np.log10(means[positive])
    )
    times = (starts + win / 2) / K_WEIGHT_RATE
    return LoudnessCurve(times=times, values=values, window_s=window_s, hop_s=hop_s)


def loudness_difference(a: LoudnessCurve, b: LoudnessCurve) -> np.ndarray:
    """Elementwise a - b on identical time grids."""
    if a.times.shape != b.times.shape or np.max(np.abs(a.times - b.times), initial=0) > 1e-9:
        raise GridMismatch("loudness curves use different time grids")
    return a.values - b.values


def spectrogram(clip: AudioClip, nfft: int = 2048, hop: int = 512) -> np.ndarray:
    """Hann-windowed STFT magnitudes, shape [frames, nfft//2 + 1]."""
    x = clip.samples
    if x.ndim != 1:
        raise ValueError("spectrogram expects a mono clip")
    if x.shape[0] < nfft:
        raise ClipTooShort(f"need at least {nfft} samples, got {x.shape[0]}")
    n_frames = (x.shape[0] - nfft) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(x, nfft)[:: hop][:n_frames]
    window = np.hanning(nfft)
    return np.abs(np.fft.rfft(frames * window, axis=1))


def _common_grid(a: AudioClip, b: AudioClip, hop: int) -> tuple[AudioClip, AudioClip]:
    """Resample to the lower rate and trim to a shared length.

    Durations must agree within one analysis hop; larger gaps are a
    caller error (the converter emits equal-duration output).
    """
    if a.sample_rate != b.sample_rate:
        rate = min(a.sample_rate, b.sample_rate)
        a = resample(a, rate)
        b = resample(b, rate)
    if abs(a.n_samples - b.n_samples) > hop:
        raise DurationMismatch(
            f"durations differ: {a.n_samples} vs {b.n_samples} samples at {a.sample_rate} Hz"
        )
    n = min(a.n_samples, b.n_samples)
    return (
        AudioClip(samples=a.samples[:n], sample_rate=a.sample_rate),
        AudioClip(samples=b.samples[:n], sample_rate=b.sample_rate),
    )


def pitch_accuracy(source: AudioClip, converted: AudioClip,
                   hop: int = DEFAULT_HOP, window: int = DEFAULT_WINDOW) -> float:
    """Fraction of frames whose pitch tokens match, on a shared grid."""
    a, b = _common_grid(source, converted, hop)
    tokens_a = tokenize_track(estimate_f0(a, hop_samples=hop, window=window)).indices
    tokens_b = tokenize_track(estimate_f0(b, hop_samples=hop, window=window)).indices
    return float(np.mean(tokens_a == tokens_b))


def _spectrogram_summary(clip: AudioClip, nfft: int = 2048, hop: int = 512) -> dict:
    mags = spectrogram(clip, nfft=nfft, hop=hop)
    freqs = np.fft.rfftfreq(nfft, 1.0 / clip.sample_rate)
    energy = mags.sum()
    if energy > 0:
        centroid = float((mags * freqs[None, :]).sum() / energy)
        peak_hz = float(np.median(freqs[np.argmax(mags, axis=1)]))
    else:
        centroid = 0.0
        peak_hz = 0.0
    return {
        "nfft": nfft,
        "hop": hop,
        "frames": int(mags.shape[0]),
        "bins": int(mags.shape[1]),
        "spectral_centroid_hz": centroid,
        "median_peak_hz": peak_hz,
    }


@dataclass
class EvalReport:
    pitch_accuracy: float
    mean_abs_loudness_diff: float
    max_abs_loudness_diff: float
    curve_times: np.ndarray
    source_curve: np.ndarray
    converted_curve: np.ndarray
    difference: np.ndarray
    source_spectrogram: dict
    converted_spectrogram: dict
    metadata: dict = field(default_factory=dict)


def evaluate_pair(source: AudioClip, converted: AudioClip,
                  metadata: dict | None = None) -> EvalReport:
    """Full comparison of a source clip against its converted version."""
    accuracy = pitch_accuracy(source, converted)
    a, b = _common_grid(source, converted, DEFAULT_HOP)
    curve_a = loudness_curve(a)
    curve_b = loudness_curve(b)
    diff = loudness_difference(curve_a, curve_b)
    return EvalReport(
        pitch_accuracy=accuracy,
        mean_abs_loudness_diff=float(np.mean(np.abs(diff))),
        max_abs_loudness_diff=float(np.max(np.abs(diff))),
        curve_times=curve_a.times,
        source_curve=curve_a.values,
        converted_curve=curve_b.values,
        difference=diff,
        source_spectrogram=_spectrogram_summary(a),
        converted_spectrogram=_spectrogram_summary(b),
        metadata=metadata or {},
    )


_SVG_WIDTH, _SVG_HEIGHT = 800, 400
_SVG_MARGIN = 40
_LKFS_TOP, _LKFS_BOTTOM = 10.0, -75.0


def _polyline(times, values, color: str) -> str:
    t0, t1 = times[0], times[-1]
    span = (t1 - t0) or 1.0
    inner_w = _SVG_WIDTH - 2 * _SVG_MARGIN
    inner_h = _SVG_HEIGHT - 2 * _SVG_MARGIN
    points = []
    for t, v in zip(times, values):
        x = _SVG_MARGIN + (t - t0) / span * inner_w
        frac = (_LKFS_TOP - v) / (_LKFS_TOP - _LKFS_BOTTOM)
        y = _SVG_MARGIN + np.clip(frac, 0.0, 1.0) * inner_h
        points.append(f"{x:.1f},{y:.1f}")
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
        f'points="{" ".join(points)}"/>'
    )


def _curves_svg(report: EvalReport) -> str:
    # red = source, green = converted, blue = difference
    body = "\n".join([
        _polyline(report.curve_times, report.source_curve, "red"),
        _polyline(report.curve_times, report.converted_curve, "green"),
        _polyline(report.curve_times, report.difference, "blue"),
    ])
    axis = (
        f'<line x1="{_SVG_MARGIN}" y1="{_SVG_HEIGHT - _SVG_MARGIN}" '
        f'x2="{_SVG_WIDTH - _SVG_MARGIN}" y2="{_SVG_HEIGHT - _SVG_MARGIN}" stroke="black"/>\n'
        f'<line x1="{_SVG_MARGIN}" y1="{_SVG_MARGIN}" '
        f'x2="{_SVG_MARGIN}" y2="{_SVG_HEIGHT - _SVG_MARGIN}" stroke="black"/>'
    )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="0 0 {_SVG_WIDTH} {_SVG_HEIGHT}">\n{axis}\n{body}\n</svg>\n'
    )


def write_report(report: EvalReport, out_dir) -> dict[str, Path]:
    """Emit report.json, curves.csv and curves.svg into out_dir."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        doc = {
            "version": REPORT_SCHEMA_VERSION,
            "pitch_accuracy": report.pitch_accuracy,
            "loudness": {
                "mean_abs_diff_lu": report.mean_abs_loudness_diff,
                "max_abs_diff_lu": report.max_abs_loudness_diff,
            },
            "curve": {
                "times_s": report.curve_times.tolist(),
                "source_lkfs": [round(v, 2) for v in report.source_curve],
                "converted_lkfs": [round(v, 2) for v in report.converted_curve],
                "difference_lu": [round(v, 2) for v in report.difference],
            },
            "spectrograms": {
                "source": report.source_spectrogram,
                "converted": report.converted_spectrogram,
            },
            "metadata": report.metadata,
        }
        json_path = out_dir / "report.json"
        json_path.write_text(json.dumps(doc, indent=2))

        csv_path = out_dir / "curves.csv"
        lines = ["time_s,source_lkfs,converted_lkfs,difference_lu"]
        for t, s, c, d in zip(report.curve_times, report.source_curve,
                              report.converted_curve, report.difference):
            lines.append(f"{t:.4f},{s:.2f},{c:.2f},{d:.2f}")
        csv_path.write_text("\n".join(lines) + "\n")

        svg_path = out_dir / "curves.svg"
        svg_path.write_text(_curves_svg(report))
    except OSError as e:
        raise IoFailure(str(e)) from e
    return {"json": json_path, "csv": csv_path, "svg": svg_path}
