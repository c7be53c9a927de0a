"""Short-time spectral amplitude MMSE enhancement.

Noise-independent single-channel enhancement: a speech-presence-
probability noise PSD tracker, decision-directed a priori SNR, and the
classical Ephraim-Malah STSA gain per DFT bin. Needs no knowledge of
noise type or SNR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.special

from .audio import Waveform
from .dsp import ComplexSpectrogram, StftConfig, istft, stft


class MmseError(Exception):
    pass


@dataclass(frozen=True)
class MmseConfig:
    stft: StftConfig = StftConfig()
    dd_alpha: float = 0.98
    xi_min: float = 10.0 ** (-25.0 / 10.0)
    gain_floor: float = 10.0 ** (-20.0 / 20.0)
    # speech-presence-probability tracker
    spp_snr: float = 10.0 ** (15.0 / 10.0)  # fixed a priori SNR under the speech hypothesis
    spp_cap: float = 0.85
    spp_stuck: float = 0.96  # smoothed-probability level that triggers the cap
    noise_alpha: float = 0.95
    noise_bias: float = 1.25  # compensates the soft-decision's noise-only underestimate
    gamma_max: float = 1000.0
    psd_floor: float = 1e-12
    init_samples: int = 1000

    def __post_init__(self):
        if not (0.0 < self.dd_alpha < 1.0):
            raise MmseError(f"dd_alpha must be in (0, 1), got {self.dd_alpha}")


@dataclass
class MmseState:
    noise_psd: np.ndarray
    prev_clean_over_noise: np.ndarray  # gain^2 * gamma of the previous frame
    smoothed_spp: np.ndarray
    cfg: MmseConfig

    def __post_init__(self):
        if np.any(self.noise_psd < 0.0):
            raise MmseError("noise PSD must be nonnegative")


def init_noise_psd(w: Waveform, cfg: MmseConfig = MmseConfig()) -> np.ndarray:
    """Average periodogram of the frames inside the first init_samples samples."""
    if len(w) < cfg.init_samples:
        raise MmseError(f"need at least {cfg.init_samples} samples, got {len(w)}")
    s = stft(w, cfg.stft)
    n_init = 1 + (cfg.init_samples - cfg.stft.frame_len) // cfg.stft.frame_shift
    return np.mean(np.abs(s.data[:n_init]) ** 2, axis=0)


def make_state(noise_psd: np.ndarray, cfg: MmseConfig = MmseConfig()) -> MmseState:
    n_bins = len(noise_psd)
    return MmseState(
        noise_psd=np.maximum(noise_psd, 0.0) * cfg.noise_bias,
        prev_clean_over_noise=np.ones(n_bins),
        smoothed_spp=np.full(n_bins, 0.5),
        cfg=cfg,
    )


def update_noise_psd(state: MmseState, frame_psd: np.ndarray) -> np.ndarray:
    """Soft-update the noise PSD with the current frame's periodogram.

    Per bin, a speech presence probability decides how much of the
    periodogram is treated as noise; the result is smoothed recursively
    and bias-compensated (the soft decision systematically underweights
    loud noise frames). The smoothed-probability cap prevents the
    tracker from locking up when the noise floor rises.
    """
    cfg = state.cfg
    raw = np.maximum(state.noise_psd / cfg.noise_bias, 0.0)
    gamma = np.minimum(frame_psd / np.maximum(state.noise_psd, cfg.psd_floor), cfg.gamma_max)
    # posterior P(speech | gamma) under fixed speech-hypothesis SNR
    log_ratio = np.log1p(cfg.spp_snr) - gamma * cfg.spp_snr / (1.0 + cfg.spp_snr)
    p = 1.0 / (1.0 + np.exp(np.clip(log_ratio, -500.0, 500.0)))
    state.smoothed_spp = 0.9 * state.smoothed_spp + 0.1 * p
    p = np.where(state.smoothed_spp > cfg.spp_stuck, np.minimum(p, cfg.spp_cap), p)
    noise_in_frame = (1.0 - p) * frame_psd + p * raw
    raw = cfg.noise_alpha * raw + (1.0 - cfg.noise_alpha) * noise_in_frame
    state.noise_psd = cfg.noise_bias * raw
    return state.noise_psd


def decision_directed_xi(state: MmseState, gamma: np.ndarray) -> np.ndarray:
    """A priori SNR: a blend of the previous clean estimate and the instantaneous SNR."""
    cfg = state.cfg
    xi = cfg.dd_alpha * state.prev_clean_over_noise + (1.0 - cfg.dd_alpha) * np.maximum(
        gamma - 1.0, 0.0
    )
    return np.maximum(xi, cfg.xi_min)


def stsa_gain(xi: np.ndarray, gamma: np.ndarray, gain_floor: float = MmseConfig().gain_floor) -> np.ndarray:
    """Ephraim-Malah STSA-MMSE spectral gain, clamped to [gain_floor, 1].

    G = (sqrt(pi)/2) (sqrt(v)/gamma) e^{-v/2} [(1+v) I0(v/2) + v I1(v/2)],
    v = xi*gamma/(1+xi), evaluated with exponentially scaled Bessels.
    """
    xi = np.asarray(xi, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(xi < 0.0) or np.any(gamma < 0.0):
        raise MmseError("xi and gamma must be nonnegative")
    v = xi * gamma / (1.0 + xi)
    with np.errstate(divide="ignore", invalid="ignore"):
        half = 0.5 * v
        bessel = (1.0 + v) * scipy.special.i0e(half) + v * scipy.special.i1e(half)
        gain = (np.sqrt(np.pi) / 2.0) * (np.sqrt(v) / gamma) * bessel
    gain = np.nan_to_num(gain, nan=0.0, posinf=1.0)
    return np.clip(gain, gain_floor, 1.0)


def enhance_mmse(w: Waveform, cfg: MmseConfig = MmseConfig()) -> Waveform:
    """Full STSA-MMSE chain: STFT, track noise, gain per bin, resynthesize."""
    if len(w) < cfg.init_samples:
        raise MmseError(f"need at least {cfg.init_samples} samples, got {len(w)}")
    if not np.any(w.samples):
        return Waveform(np.zeros(len(w)), w.sample_rate)
    spec = stft(w, cfg.stft)
    state = make_state(init_noise_psd(w, cfg), cfg)
    out = np.empty_like(spec.data)
    for t in range(spec.n_frames):
        frame = spec.data[t]
        frame_psd = np.abs(frame) ** 2
        noise = np.maximum(state.noise_psd, cfg.psd_floor)
        gamma = np.minimum(frame_psd / noise, cfg.gamma_max)
        xi = decision_directed_xi(state, gamma)
        gain = stsa_gain(xi, gamma, cfg.gain_floor)
        out[t] = gain * frame
        state.prev_clean_over_noise = gain * gain * gamma
        update_noise_psd(state, frame_psd)
    return istft(ComplexSpectrogram(out, spec.config, spec.n_samples, spec.sample_rate))
