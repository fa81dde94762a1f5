"""Synthetic monophonic corpus matched to the training-set statistics.

Scores are drawn from the published pitch and note-length count tables of
the 159-piece Jiangnan-style corpus (pentatonic: almost no Fa/Si), then
rendered with additive-synthesis timbre presets. Timing is symbolic:
480 ticks per quarter note, 960 ticks per second, 1920 per measure.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, write_wav
from .errors import IoFailure, PitchIndexZeroInScore, SchemaVersionMismatch
from .pitch import PITCH_TABLE

log = logging.getLogger(__name__)

TICKS_PER_QUARTER = 480
TICKS_PER_SECOND = 960
TICKS_PER_MEASURE = 1920

# pitch-name occurrence counts in the corpus (C7/D7 exceed the tokenizer's
# B6 ceiling and are clamped at score time)
PITCH_COUNTS: tuple[tuple[str, int], ...] = (
    ("E4", 2), ("G4", 178), ("A4", 429), ("B4", 20),
    ("C5", 987), ("D5", 1337), ("E5", 1763), ("F5", 24),
    ("G5", 2465), ("A5", 1887), ("B5", 54),
    ("C6", 1591), ("D6", 1027), ("E6", 758), ("F6", 10),
    ("G6", 485), ("A6", 141), ("B6", 4),
    ("C7", 49), ("D7", 5),
)

# note length in ticks -> occurrence count
DURATION_COUNTS: tuple[tuple[int, int], ...] = (
    (180, 75), (240, 4813), (360, 531), (480, 1017), (720, 209),
    (960, 572), (1440, 20), (1920, 16), (3840, 70), (160, 8),
)

MAX_PITCH_INDEX = 36

_NAME_TO_INDEX = {name: idx for idx, name, _ in PITCH_TABLE}
_INDEX_TO_HZ = {idx: hz for idx, _, hz in PITCH_TABLE}

_PITCH_NAMES = tuple(name for name, _ in PITCH_COUNTS)
_PITCH_P = np.array([c for _, c in PITCH_COUNTS], dtype=np.float64)
_PITCH_P /= _PITCH_P.sum()
_DURATION_TICKS = tuple(t for t, _ in DURATION_COUNTS)
_DURATION_P = np.array([c for _, c in DURATION_COUNTS], dtype=np.float64)
_DURATION_P /= _DURATION_P.sum()

_SEMITONE_STEPS = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}


def _name_to_index(name: str) -> int:
    """Table index for a plain pitch name, counting up from C4 = 1."""
    if name in _NAME_TO_INDEX:
        return _NAME_TO_INDEX[name]
    step = _SEMITONE_STEPS[name[0]]
    octave = int(name[1:])
    return 12 * (octave - 4) + step + 1


@dataclass(frozen=True)
class Note:
    pitch_index: int
    start_tick: int
    duration_tick: int


@dataclass(frozen=True)
class Score:
    notes: tuple[Note, ...]
    total_ticks: int


@dataclass(frozen=True)
class TimbrePreset:
    name: str
    harmonic_amps: tuple[float, ...]   # relative strengths, harmonic 1..n
    attack_s: float
    decay_tau_s: float | None          # None = sustained
    noise_level: float = 0.0
    peak_scale: float = 0.8            # overall amplitude budget


PRESETS: dict[str, TimbrePreset] = {
    "piano": TimbrePreset(
        name="piano",
        harmonic_amps=tuple(1.0 / k for k in range(1, 11)),
        attack_s=0.005,
        decay_tau_s=0.4,
    ),
    "violin": TimbrePreset(
        name="violin",
        harmonic_amps=tuple(1.0 / k for k in range(1, 13)),
        attack_s=0.06,
        decay_tau_s=None,
        peak_scale=0.7,
    ),
    "flute": TimbrePreset(
        name="flute",
        harmonic_amps=(1.0, 0.25, 0.1, 0.05),
        attack_s=0.03,
        decay_tau_s=None,
        noise_level=0.01,
        peak_scale=0.7,
    ),
}


def ticks_to_seconds(ticks: int) -> float:
    if ticks < 0:
        raise ValueError(f"ticks must be >= 0, got {ticks}")
    return ticks / TICKS_PER_SECOND


def sample_pitch_names(rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n pitch names i.i.d. from the corpus count distribution."""
    return rng.choice(np.array(_PITCH_NAMES), size=n, p=_PITCH_P)


def sample_durations(rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n note lengths (ticks) i.i.d. from the corpus distribution."""
    return rng.choice(np.array(_DURATION_TICKS), size=n, p=_DURATION_P)


def sample_score(rng: np.random.Generator, total_ticks: int) -> Score:
    """Fill total_ticks with i.i.d. notes; the final note is truncated.

    Sampled pitches above B6 (the corpus contains a few C7/D7) are clamped
    to index 36 so every note stays tokenizable.
    """
    if total_ticks < 240:
        raise ValueError(f"total_ticks must be >= 240, got {total_ticks}")
    notes: list[Note] = []
    clamped = 0
    position = 0
    while position < total_ticks:
        # draw in blocks; expected note length is ~370 ticks
        block = max(8, (total_ticks - position) // 240)
        names = sample_pitch_names(rng, block)
        ticks = sample_durations(rng, block)
        for name, dur in zip(names, ticks):
            if position >= total_ticks:
                break
            idx = _name_to_index(str(name))
            if idx > MAX_PITCH_INDEX:
                idx = MAX_PITCH_INDEX
                clamped += 1
            dur = int(min(dur, total_ticks - position))
            notes.append(Note(pitch_index=idx, start_tick=position, duration_tick=dur))
            position += dur
    if clamped:
        log.info("clamped %d notes above B6 to index 36", clamped)
    return Score(notes=tuple(notes), total_ticks=total_ticks)


FADE_S = 0.005  # cosine fade at note boundaries


def render_score(score: Score, preset: TimbrePreset, sample_rate: int,
                 transpose_semitones: int = 0) -> AudioClip:
    """Additive synthesis of a score: harmonics at the table fundamental,
    shaped by the preset envelope, 5 ms cosine fades inside each note.

    transpose_semitones shifts every fundamental (e.g. -12 for the
    octave-down stress case), even below the table range.
    """
    n_total = int(round(ticks_to_seconds(score.total_ticks) * sample_rate))
    out = np.zeros(n_total, dtype=np.float64)
    amp_total = sum(preset.harmonic_amps)
    scale = preset.peak_scale / (amp_total + preset.noise_level)
    ratio = 2.0 ** (transpose_semitones / 12.0)

    for note_ordinal, note in enumerate(score.notes):
        if note.pitch_index == 0:
            raise PitchIndexZeroInScore("index 0 marks silence; scores hold real notes only")
        f0 = _INDEX_TO_HZ[note.pitch_index] * ratio
        start = int(round(ticks_to_seconds(note.start_tick) * sample_rate))
        stop = int(round(ticks_to_seconds(note.start_tick + note.duration_tick) * sample_rate))
        stop = min(stop, n_total)
        n = stop - start
        if n <= 0:
            continue
        t = np.arange(n) / sample_rate
        wave = np.zeros(n)
        for h, amp in enumerate(preset.harmonic_amps, start=1):
            freq = f0 * h
            if freq >= 0.45 * sample_rate:
                break
            wave += amp * np.sin(2.0 * np.pi * freq * t)
        if preset.noise_level > 0.0:
            noise_rng = np.random.default_rng(
                np.random.SeedSequence([note_ordinal, note.pitch_index, 0x6E6F6973])
            )
            wave += preset.noise_level * amp_total * noise_rng.standard_normal(n)

        env = np.ones(n)
        attack_n = min(n, int(round(preset.attack_s * sample_rate)))
        if attack_n > 0:
            env[:attack_n] = np.linspace(0.0, 1.0, attack_n, endpoint=False)
        if preset.decay_tau_s is not None:
            env *= np.exp(-t / preset.decay_tau_s)
        fade_n = min(n // 2, int(round(FADE_S * sample_rate)))
        if fade_n > 0:
            ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(fade_n) / fade_n))
            env[:fade_n] *= ramp
            env[-fade_n:] *= ramp[::-1]
        out[start:stop] += scale * wave * env

    return AudioClip(samples=out.astype(np.float32), sample_rate=sample_rate)


@dataclass(frozen=True)
class DatasetIndex:
    entries: tuple[tuple[str, int], ...]   # (wav path, sample count)
    manifest_checksum: str
    sample_rate: int
    metadata: dict = field(default_factory=dict)

    @property
    def n_clips(self) -> int:
        return len(self.entries)


def _entries_checksum(entries) -> str:
    canonical = json.dumps([[str(f), int(n)] for f, n in entries])
    return hashlib.sha256(canonical.encode()).hexdigest()


MANIFEST_NAME = "manifest.json"


def generate_corpus(n_clips: int, out_dir, preset: TimbrePreset | str = "piano",
                    seed: int = 0, clip_seconds: float = 6.0,
                    sample_rate: int = 16000,
                    transpose_semitones: int = 0) -> DatasetIndex:
    """Render n_clips WAVs plus a manifest. Deterministic per seed; each
    clip draws from its own seed stream (seed, ordinal)."""
    if n_clips < 1:
        raise ValueError("n_clips must be >= 1")
    if isinstance(preset, str):
        preset = PRESETS[preset]
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(str(e)) from e

    n_samples = int(round(clip_seconds * sample_rate))
    total_ticks = int(np.ceil(clip_seconds * TICKS_PER_SECOND))
    entries = []
    for i in range(n_clips):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        score = sample_score(rng, total_ticks)
        clip = render_score(score, preset, sample_rate,
                            transpose_semitones=transpose_semitones)
        samples = clip.samples[:n_samples]
        if samples.shape[0] < n_samples:
            samples = np.pad(samples, (0, n_samples - samples.shape[0]))
        name = f"clip_{i:04d}.wav"
        write_wav(AudioClip(samples=samples, sample_rate=sample_rate), out_dir / name)
        entries.append((name, n_samples))

    manifest = {
        "version": 1,
        "sample_rate": sample_rate,
        "preset": preset.name,
        "seed": seed,
        "clip_seconds": clip_seconds,
        "entries": [{"file": f, "samples": n} for f, n in entries],
    }
    try:
        (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    except OSError as e:
        raise IoFailure(str(e)) from e
    return DatasetIndex(
        entries=tuple(entries),
        manifest_checksum=_entries_checksum(entries),
        sample_rate=sample_rate,
        metadata={"preset": preset.name, "seed": seed, "clip_seconds": clip_seconds},
    )


def load_index(manifest_path) -> DatasetIndex:
    """Read a manifest and verify every listed file is readable."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except OSError as e:
        raise IoFailure(str(e)) from e
    if doc.get("version") != 1:
        raise SchemaVersionMismatch(f"unknown manifest version {doc.get('version')!r}")
    base = manifest_path.parent
    entries = []
    for entry in doc["entries"]:
        path = base / entry["file"]
        if not path.is_file():
            raise IoFailure(f"manifest entry not readable: {path}")
        entries.append((entry["file"], int(entry["samples"])))
    return DatasetIndex(
        entries=tuple(entries),
        manifest_checksum=_entries_checksum(entries),
        sample_rate=int(doc["sample_rate"]),
        metadata={k: doc[k] for k in ("preset", "seed", "clip_seconds") if k in doc},
    )
