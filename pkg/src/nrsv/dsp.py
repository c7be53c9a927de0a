"""Deterministic signal analysis.

All framing in the pipeline uses 20 ms windows with a 10 ms shift at
16 kHz (320/160 samples), so MFCC, VAD, gammatone energies and mask
targets share frame counts by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft
import scipy.signal

from . import containers
from .audio import SAMPLE_RATE, Waveform

FRAME_LEN = 320
FRAME_SHIFT = 160

LOG_FLOOR = 1e-10


class DspError(Exception):
    pass


# ---------------------------------------------------------------------------
# feature matrices


@dataclass
class FeatureMatrix:
    """frames x dims real matrix tagged with its feature kind."""

    data: np.ndarray
    kind: str
    frame_shift_s: float = FRAME_SHIFT / SAMPLE_RATE

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DspError(f"feature matrix must be 2-D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise DspError(f"feature matrix ({self.kind}) contains NaN/Inf")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def save_features(path, f: FeatureMatrix) -> None:
    containers.write_container(
        path,
        containers.FEATURE_MAGIC,
        containers.FEATURE_VERSION,
        {"kind": f.kind, "dim": f.dim, "frame_shift_s": f.frame_shift_s},
        {"data": f.data},
    )


def load_features(path) -> FeatureMatrix:
    meta, arrays = containers.read_container(
        path, containers.FEATURE_MAGIC, containers.FEATURE_VERSION
    )
    return FeatureMatrix(arrays["data"], meta["kind"], meta["frame_shift_s"])


def features_to_csv(path, f: FeatureMatrix) -> None:
    """Debug export; one frame per row."""
    header = ",".join(f"{f.kind}_{d}" for d in range(f.dim))
    np.savetxt(path, f.data, delimiter=",", header=header, comments="")


# ---------------------------------------------------------------------------
# framing


def frame_count(n_samples: int, frame_len: int = FRAME_LEN, frame_shift: int = FRAME_SHIFT) -> int:
    if n_samples < frame_len:
        raise DspError(f"signal of {n_samples} samples is shorter than one {frame_len}-sample frame")
    return 1 + (n_samples - frame_len) // frame_shift


def frame_signal(x: np.ndarray, frame_len: int = FRAME_LEN, frame_shift: int = FRAME_SHIFT) -> np.ndarray:
    """Frames x frame_len view of x (copy), trailing partial frame dropped."""
    n = frame_count(len(x), frame_len, frame_shift)
    idx = np.arange(frame_len)[None, :] + frame_shift * np.arange(n)[:, None]
    return x[idx]


# ---------------------------------------------------------------------------
# MFCC


@dataclass(frozen=True)
class MfccConfig:
    n_ceps: int = 19          # kept cepstra, not counting c0 unless include_c0
    include_c0: bool = False
    n_mels: int = 26
    fft_size: int = 512
    preemphasis: float = 0.97
    f_lo: float = 0.0
    f_hi: float = float(SAMPLE_RATE) / 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """n_mels x (fft/2+1) triangular filters, mel-spaced edge points."""
    n_bins = cfg.fft_size // 2 + 1
    mel_pts = np.linspace(hz_to_mel(cfg.f_lo), hz_to_mel(cfg.f_hi), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(n_bins) * sample_rate / cfg.fft_size
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mfcc(w: Waveform, cfg: MfccConfig = MfccConfig()) -> FeatureMatrix:
    """Static MFCCs: pre-emphasis, Hamming, power spectrum, mel log energies, DCT-II."""
    if w.sample_rate != SAMPLE_RATE:
        raise DspError(f"expected {SAMPLE_RATE} Hz input, got {w.sample_rate}")
    last = cfg.n_ceps if cfg.include_c0 else cfg.n_ceps + 1
    if last > cfg.n_mels:
        raise DspError(f"{cfg.n_ceps} cepstra need more than {cfg.n_mels} mel filters")
    x = w.samples
    emphasized = np.concatenate(([x[0]], x[1:] - cfg.preemphasis * x[:-1]))
    frames = frame_signal(emphasized) * np.hamming(FRAME_LEN)
    power = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)) ** 2
    mel_energy = power @ mel_filterbank(cfg).T
    log_mel = np.log(np.maximum(mel_energy, LOG_FLOOR))
    ceps = scipy.fft.dct(log_mel, type=2, norm="ortho", axis=1)
    first = 0 if cfg.include_c0 else 1
    return FeatureMatrix(ceps[:, first:last], kind="mfcc_static")


def add_deltas(f: FeatureMatrix) -> FeatureMatrix:
    """Append delta and delta-delta from a +-2 frame regression window."""
    window = 2
    if f.n_frames < 2 * window + 1:
        raise DspError(f"need at least {2 * window + 1} frames for deltas, got {f.n_frames}")

    def delta(mat):
        padded = np.pad(mat, ((window, window), (0, 0)), mode="edge")
        num = sum(
            n * (padded[window + n : padded.shape[0] - window + n] - padded[window - n : -window - n])
            for n in range(1, window + 1)
        )
        return num / (2 * sum(n * n for n in range(1, window + 1)))

    d = delta(f.data)
    dd = delta(d)
    kind = "mfcc_full" if f.kind == "mfcc_static" else f.kind + "_deltas"
    return FeatureMatrix(np.hstack([f.data, d, dd]), kind=kind, frame_shift_s=f.frame_shift_s)


# ---------------------------------------------------------------------------
# voice activity detection


@dataclass(frozen=True)
class VadConfig:
    threshold_db: float = 30.0


def energy_vad(w: Waveform, cfg: VadConfig = VadConfig()) -> np.ndarray:
    """Boolean speech mask per frame.

    A frame is speech iff its energy is within threshold_db of the
    utterance maximum; the threshold is purely relative, so the mask is
    invariant to global gain. An all-zero utterance has no maximum to
    be relative to and is rejected outright.
    """
    frames = frame_signal(w.samples)
    energy = np.sum(frames**2, axis=1)
    e_max = energy.max()
    if e_max <= 0.0:
        return np.zeros(len(energy), dtype=bool)
    with np.errstate(divide="ignore"):
        rel_db = 10.0 * np.log10(energy / e_max)
    return rel_db > -cfg.threshold_db


def apply_vad(f: FeatureMatrix, mask: np.ndarray) -> FeatureMatrix:
    if len(mask) != f.n_frames:
        raise DspError(f"VAD mask has {len(mask)} frames, features have {f.n_frames}")
    return FeatureMatrix(f.data[np.asarray(mask, dtype=bool)], f.kind, f.frame_shift_s)


# ---------------------------------------------------------------------------
# normalization


@dataclass
class FeatureStats:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.var))):
            raise DspError("non-finite normalization stats")


def compute_stats(data: np.ndarray | FeatureMatrix) -> FeatureStats:
    mat = data.data if isinstance(data, FeatureMatrix) else np.asarray(data, dtype=np.float64)
    return FeatureStats(mat.mean(axis=0), mat.var(axis=0))


def pooled_stats(features: list[FeatureMatrix]) -> FeatureStats:
    return compute_stats(np.vstack([f.data for f in features]))


def normalize(f: FeatureMatrix, stats: FeatureStats) -> FeatureMatrix:
    if stats.mean.shape != (f.dim,):
        raise DspError(f"stats dim {stats.mean.shape} does not match features dim {f.dim}")
    bad = np.nonzero(stats.var <= 0.0)[0]
    if bad.size:
        raise DspError(f"zero-variance dimension(s) {bad.tolist()} in normalization stats")
    return FeatureMatrix((f.data - stats.mean) / np.sqrt(stats.var), f.kind, f.frame_shift_s)


# ---------------------------------------------------------------------------
# context stacking


def stack_context(f: FeatureMatrix, left: int = 5, right: int = 5) -> FeatureMatrix:
    """Concatenate frames t-left..t+right per output frame, edges replicated."""
    if f.n_frames < 1:
        raise DspError("cannot stack an empty feature matrix")
    t = np.arange(f.n_frames)
    blocks = [f.data[np.clip(t + offset, 0, f.n_frames - 1)] for offset in range(-left, right + 1)]
    return FeatureMatrix(np.hstack(blocks), kind="stacked", frame_shift_s=f.frame_shift_s)


# ---------------------------------------------------------------------------
# STFT / ISTFT


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = FRAME_LEN
    frame_shift: int = FRAME_SHIFT
    fft_size: int = 512
    window: str = "hann"


@dataclass
class ComplexSpectrogram:
    data: np.ndarray  # frames x bins, complex
    config: StftConfig
    n_samples: int
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        expected = self.config.fft_size // 2 + 1
        if self.data.shape[1] != expected:
            raise DspError(f"spectrogram has {self.data.shape[1]} bins, config implies {expected}")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]


def stft(w: Waveform, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    win = scipy.signal.get_window(cfg.window, cfg.frame_len, fftbins=True)
    frames = frame_signal(w.samples, cfg.frame_len, cfg.frame_shift) * win
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    return ComplexSpectrogram(spec, cfg, len(w.samples), w.sample_rate)


def istft(s: ComplexSpectrogram) -> Waveform:
    """Weighted overlap-add synthesis; identity with stft() up to edge taper."""
    cfg = s.config
    win = scipy.signal.get_window(cfg.window, cfg.frame_len, fftbins=True)
    frames = np.fft.irfft(s.data, n=cfg.fft_size, axis=1)[:, : cfg.frame_len] * win
    out_len = (s.n_frames - 1) * cfg.frame_shift + cfg.frame_len
    acc = np.zeros(out_len)
    den = np.zeros(out_len)
    wsq = win**2
    for t in range(s.n_frames):
        start = t * cfg.frame_shift
        acc[start : start + cfg.frame_len] += frames[t]
        den[start : start + cfg.frame_len] += wsq
    out = np.where(den > 1e-10, acc / np.maximum(den, 1e-10), 0.0)
    return Waveform(out[: s.n_samples] if s.n_samples <= out_len else out, s.sample_rate)


# ---------------------------------------------------------------------------
# gammatone analysis / resynthesis


@dataclass(frozen=True)
class GammatoneConfig:
    n_channels: int = 64
    f_lo: float = 50.0
    f_hi: float = 8000.0
    order: int = 4
    kernel_len: int = 2048
    bandwidth_scale: float = 1.019  # kernel bandwidth in ERBs


def erb_hz(f):
    return 24.7 * (4.37 * np.asarray(f, dtype=np.float64) / 1000.0 + 1.0)


def erb_rate(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def erb_rate_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


def gammatone_center_freqs(cfg: GammatoneConfig = GammatoneConfig()) -> np.ndarray:
    """Channel centers: midpoints of an ERB-rate tiling of [f_lo, f_hi]."""
    edges = np.linspace(erb_rate(cfg.f_lo), erb_rate(cfg.f_hi), cfg.n_channels + 1)
    return erb_rate_to_hz(0.5 * (edges[:-1] + edges[1:]))


def gammatone_kernels(cfg: GammatoneConfig = GammatoneConfig(), sample_rate: int = SAMPLE_RATE):
    """FIR kernels (n_channels x kernel_len), peak gain normalized to 1."""
    cfs = gammatone_center_freqs(cfg)
    t = np.arange(cfg.kernel_len) / sample_rate
    kernels = np.zeros((cfg.n_channels, cfg.kernel_len))
    for c, cf in enumerate(cfs):
        b = cfg.bandwidth_scale * erb_hz(cf)
        env = t ** (cfg.order - 1) * np.exp(-2.0 * np.pi * b * t)
        g = env * np.cos(2.0 * np.pi * cf * t)
        peak = np.abs(np.fft.rfft(g, 8 * cfg.kernel_len)).max()
        kernels[c] = g / peak
    return kernels, cfs


@dataclass
class GammatoneTF:
    """Per-channel filtered signals plus framed channel energies."""

    signals: np.ndarray  # n_channels x n_samples
    energies: np.ndarray  # frames x n_channels
    center_freqs: np.ndarray
    config: GammatoneConfig
    sample_rate: int = SAMPLE_RATE

    @property
    def n_frames(self) -> int:
        return self.energies.shape[0]

    @property
    def n_channels(self) -> int:
        return self.signals.shape[0]


_KERNEL_CACHE: dict = {}


def _cached_kernels(cfg: GammatoneConfig, sample_rate: int):
    key = (cfg, sample_rate)
    if key not in _KERNEL_CACHE:
        _KERNEL_CACHE[key] = gammatone_kernels(cfg, sample_rate)
    return _KERNEL_CACHE[key]


def gammatone_analyze(w: Waveform, cfg: GammatoneConfig = GammatoneConfig()) -> GammatoneTF:
    if w.sample_rate != SAMPLE_RATE:
        raise DspError(f"expected {SAMPLE_RATE} Hz input, got {w.sample_rate}")
    kernels, cfs = _cached_kernels(cfg, w.sample_rate)
    n = len(w.samples)
    nfft = scipy.fft.next_fast_len(n + cfg.kernel_len - 1)
    spec = np.fft.rfft(w.samples, nfft)
    kspec = np.fft.rfft(kernels, nfft, axis=1)
    signals = np.fft.irfft(spec[None, :] * kspec, nfft, axis=1)[:, :n]
    n_frames = frame_count(n)
    idx = np.arange(FRAME_LEN)[None, :] + FRAME_SHIFT * np.arange(n_frames)[:, None]
    energies = np.einsum("ctk,ctk->tc", signals[:, idx], signals[:, idx])
    return GammatoneTF(signals, energies, cfs, cfg, w.sample_rate)


def gfe(tf: GammatoneTF) -> FeatureMatrix:
    """Log gammatone filterbank energies with floor."""
    return FeatureMatrix(np.log(np.maximum(tf.energies, LOG_FLOOR)), kind="gfe")


def _reverse_filter(x: np.ndarray, kspec: np.ndarray, nfft: int, n: int) -> np.ndarray:
    """Apply the kernels time-reversed (zero-phase when paired with analysis)."""
    rev = x[:, ::-1]
    out = np.fft.irfft(np.fft.rfft(rev, nfft, axis=1) * kspec, nfft, axis=1)[:, :n]
    return out[:, ::-1]


def gammatone_synthesize(tf: GammatoneTF, mask: np.ndarray) -> Waveform:
    """Resynthesize from masked channels.

    The frame mask is cross-faded sample-by-sample between frame centers,
    each masked channel is filtered a second time with the time-reversed
    kernel (cancelling the analysis group delay), channels are summed and
    the summed squared filterbank response is equalized out in band.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != tf.energies.shape:
        raise DspError(f"mask shape {mask.shape} does not match framing {tf.energies.shape}")
    if np.any(mask < 0.0) or np.any(mask > 1.0) or not np.all(np.isfinite(mask)):
        raise DspError("mask entries must lie in [0, 1]")
    cfg = tf.config
    kernels, _ = _cached_kernels(cfg, tf.sample_rate)
    n = tf.signals.shape[1]
    centers = FRAME_SHIFT * np.arange(tf.n_frames) + FRAME_LEN // 2
    sample_pos = np.arange(n)
    masked = np.empty_like(tf.signals)
    for c in range(tf.n_channels):
        gain = np.interp(sample_pos, centers, mask[:, c])
        masked[c] = tf.signals[c] * gain
    nfft = scipy.fft.next_fast_len(n + cfg.kernel_len - 1)
    kspec = np.fft.rfft(kernels, nfft, axis=1)
    aligned = _reverse_filter(masked, kspec, nfft, n)
    summed = aligned.sum(axis=0)
    # net zero-phase response of analysis+synthesis is sum_c |G_c|^2
    net = (np.abs(kspec) ** 2).sum(axis=0)
    floor = 1e-3 * net.max()
    out_spec = np.fft.rfft(summed, nfft) / np.maximum(net, floor)
    out = np.fft.irfft(out_spec, nfft)[:n]
    return Waveform(np.clip(out, -1.0, 1.0), tf.sample_rate)
