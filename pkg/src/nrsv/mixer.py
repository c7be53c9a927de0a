"""Noisy-speech creation at exact target SNRs.

Speech level is an activity-gated RMS (a simplified speech voltmeter:
energy-VAD frames only); noise level is plain RMS. The same meter that
sets the mix gain re-measures it, so produced mixtures hit their target
SNR to float precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .audio import Waveform
from .dsp import FRAME_LEN, VadConfig, energy_vad, frame_signal


class MixerError(Exception):
    pass


def rms_level_db(x: np.ndarray) -> float:
    """Plain RMS in dB relative to full scale."""
    rms = np.sqrt(np.mean(np.asarray(x, dtype=np.float64) ** 2))
    if rms <= 0.0:
        raise MixerError("cannot measure the level of an all-zero signal")
    return float(20.0 * np.log10(rms))


def active_speech_level(w: Waveform, vad_cfg: VadConfig = VadConfig()) -> float:
    """Speech level in dBFS over energy-VAD active frames only."""
    mask = energy_vad(w, vad_cfg)
    if not mask.any():
        raise MixerError("no active speech frames; cannot measure speech level")
    frames = frame_signal(w.samples)
    mean_sq = np.sum(frames[mask] ** 2) / (np.count_nonzero(mask) * FRAME_LEN)
    return float(10.0 * np.log10(mean_sq))


@dataclass(frozen=True)
class MixSpec:
    speech_id: str
    noise_name: str
    snr_db: float
    seed: int
    partition: str

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise MixerError(f"snr_db must be finite, got {self.snr_db}")


MIX_JOB_HEADER = ["speech_id", "noise_name", "snr_db", "seed", "partition"]


def write_mix_jobs(path, jobs: list[MixSpec]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MIX_JOB_HEADER)
        for j in jobs:
            writer.writerow([j.speech_id, j.noise_name, repr(j.snr_db), j.seed, j.partition])


def read_mix_jobs(path) -> list[MixSpec]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != MIX_JOB_HEADER:
            raise MixerError(f"bad mix job header {header}")
        return [MixSpec(r[0], r[1], float(r[2]), int(r[3]), r[4]) for r in reader]


@dataclass
class MixResult:
    noisy: Waveform
    noise: Waveform  # the exact scaled noise segment inside `noisy`
    clean: Waveform  # the exact speech component inside `noisy`
    noise_offset: int
    noise_gain: float
    post_gain: float  # 1.0 unless the mixture had to be scaled to avoid clipping


def mix_at_snr(speech: Waveform, noise: Waveform, snr_db: float, seed: int) -> MixResult:
    """Add a random noise segment scaled to the target SNR.

    SNR convention: active speech level minus plain-RMS noise level.
    If the sum would clip, the whole mixture is scaled down, which
    leaves the SNR untouched; the applied gain is reported.
    """
    if not np.isfinite(snr_db):
        raise MixerError(f"snr_db must be finite, got {snr_db}; the clean condition is no mixing")
    if len(noise) < len(speech):
        raise MixerError(f"noise ({len(noise)}) shorter than speech ({len(speech)})")
    speech_level = active_speech_level(speech)  # raises on silent speech
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, len(noise) - len(speech) + 1))
    segment = noise.samples[offset : offset + len(speech)]
    noise_level = rms_level_db(segment)
    gain = 10.0 ** ((speech_level - noise_level - snr_db) / 20.0)
    scaled_noise = gain * segment
    noisy = speech.samples + scaled_noise
    post_gain = 1.0
    peak = np.abs(noisy).max()
    if peak > 1.0:
        post_gain = 1.0 / peak
        noisy = noisy * post_gain
        scaled_noise = scaled_noise * post_gain
    return MixResult(
        noisy=Waveform(noisy, speech.sample_rate),
        noise=Waveform(scaled_noise, speech.sample_rate),
        clean=Waveform(speech.samples * post_gain, speech.sample_rate),
        noise_offset=offset,
        noise_gain=gain,
        post_gain=post_gain,
    )


def measure_snr(clean: Waveform, noise: Waveform) -> float:
    """Re-measure a mixture's SNR with the module's own meter."""
    return active_speech_level(clean) - rms_level_db(noise.samples)


def segmental_snr(
    reference: Waveform, test: Waveform, floor_db: float = -10.0, ceil_db: float = 35.0
) -> float:
    """Frame-averaged SNR of `test` against `reference`, clamped per frame.

    Frames with negligible reference energy are excluded.
    """
    if len(reference) != len(test):
        raise MixerError(f"length mismatch: {len(reference)} vs {len(test)}")
    ref = frame_signal(reference.samples)
    err = frame_signal(reference.samples - test.samples)
    ref_e = np.sum(ref**2, axis=1)
    err_e = np.sum(err**2, axis=1)
    keep = ref_e > 1e-8 * ref_e.max()
    if not keep.any():
        raise MixerError("reference has no energetic frames")
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(ref_e[keep] / np.maximum(err_e[keep], 1e-300))
    return float(np.mean(np.clip(snr, floor_db, ceil_db)))
