"""Waveform type and 16-bit PCM WAV I/O.

Everything downstream assumes mono float64 samples in [-1, 1] at 16 kHz.
Writing clips out-of-range samples and counts how many were touched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.io.wavfile

SAMPLE_RATE = 16000


@dataclass
class Waveform:
    """Mono sample sequence with its sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be mono 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2))) if len(self) else 0.0


@dataclass
class ClipStats:
    """Counter of samples clipped on write, kept per writer call site."""

    clipped: int = 0
    written: int = 0


def write_wav(path, w: Waveform, clip_stats: ClipStats | None = None) -> int:
    """Write 16-bit PCM mono WAV. Returns the number of clipped samples."""
    x = w.samples
    n_clipped = int(np.count_nonzero((x > 1.0) | (x < -1.0)))
    if n_clipped:
        warnings.warn(f"{path}: clipped {n_clipped} samples to [-1, 1]", stacklevel=2)
        x = np.clip(x, -1.0, 1.0)
    if clip_stats is not None:
        clip_stats.clipped += n_clipped
        clip_stats.written += len(x)
    pcm = np.round(x * 32767.0).astype(np.int16)
    scipy.io.wavfile.write(path, w.sample_rate, pcm)
    return n_clipped


def read_wav(path) -> Waveform:
    rate, data = scipy.io.wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono WAV, got shape {data.shape}")
    if data.dtype != np.int16:
        raise ValueError(f"{path}: expected 16-bit PCM, got dtype {data.dtype}")
    return Waveform(data.astype(np.float64) / 32767.0, int(rate))
