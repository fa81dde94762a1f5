"""pianodiff: diffusion-based piano timbre conversion for monophonic audio.

Pipeline: pitch and loudness conditions are extracted from any WAV, a
v-objective diffusion decoder (conditional 1-D U-Net) is trained on
piano-timbre audio, and arbitrary recordings are converted into
piano-timbre WAVs. Includes a synthetic corpus generator and an
evaluation suite (loudness-difference curves, spectrograms, pitch-token
accuracy).
"""

from .audio import AudioClip, read_wav, resample, to_mono, write_wav

__version__ = "0.1.0"

__all__ = ["AudioClip", "read_wav", "resample", "to_mono", "write_wav", "__version__"]
