"""Mask-based speech enhancement in the gammatone domain.

Targets are ideal ratio masks per time-frequency unit; the estimator is
a dense network over a stacked multi-feature input; enhancement applies
the predicted mask to the noisy gammatone decomposition and
resynthesizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import Waveform
from .dsp import (
    FeatureMatrix,
    FeatureStats,
    GammatoneConfig,
    MfccConfig,
    add_deltas,
    gammatone_analyze,
    gfe,
    mfcc,
    normalize,
    stack_context,
)
from .nnet import MlpModel, TrainConfig, forward, init_model, loss_mse, mse_grads, sgd_step

DNNSE_HIDDEN = (1024, 1024, 1024)
MASK_DIM = 64
DNNSE_CONTEXT = 2  # two past and two future frames


class DnnseError(Exception):
    pass


def compute_irm(
    clean: Waveform, noise: Waveform, cfg: GammatoneConfig = GammatoneConfig()
) -> FeatureMatrix:
    """Ideal ratio mask: sqrt(clean energy / (clean + noise energy)) per unit.

    `noise` must be the exact scaled segment that was added to form the
    mixture. Units where both energies vanish get mask 0.
    """
    if len(clean) != len(noise):
        raise DnnseError(f"length mismatch: clean {len(clean)}, noise {len(noise)}")
    e_clean = gammatone_analyze(clean, cfg).energies
    e_noise = gammatone_analyze(noise, cfg).energies
    denom = e_clean + e_noise
    safe = np.where(denom > 0.0, denom, 1.0)
    irm = np.sqrt(np.where(denom > 0.0, e_clean / safe, 0.0))
    return FeatureMatrix(np.clip(irm, 0.0, 1.0), kind="irm")


def build_dnnse(input_dim: int, seed: int) -> MlpModel:
    """input -> 1024 relu x3 -> 64 sigmoid."""
    return init_model(
        [input_dim, *DNNSE_HIDDEN, MASK_DIM], ["relu", "relu", "relu", "sigmoid"], seed
    )


@dataclass(frozen=True)
class DnnseFeatureConfig:
    """Feature stack for the mask estimator: MFCC(31, with c0) + GFE(64)."""

    mfcc: MfccConfig = MfccConfig(n_ceps=31, include_c0=True, n_mels=40)
    gammatone: GammatoneConfig = GammatoneConfig()
    context: int = DNNSE_CONTEXT

    @property
    def base_dim(self) -> int:
        return self.mfcc.n_ceps + self.gammatone.n_channels

    @property
    def stacked_dim(self) -> int:
        return self.base_dim * 3 * (2 * self.context + 1)


def dnnse_base_features(w: Waveform, cfg: DnnseFeatureConfig = DnnseFeatureConfig()):
    """Per-frame base features and the gammatone decomposition they came from."""
    tf = gammatone_analyze(w, cfg.gammatone)
    feats = [mfcc(w, cfg.mfcc), gfe(tf)]
    return feats, tf


def stack_dnnse_features(
    extractor_outputs: list[FeatureMatrix],
    stats: FeatureStats | None = None,
    context: int = DNNSE_CONTEXT,
) -> FeatureMatrix:
    """Concatenate extractors, add deltas, stack context, normalize.

    All extractor outputs must share framing. With stats=None the
    un-normalized stack is returned (used to compute training stats).
    """
    frames = {f.n_frames for f in extractor_outputs}
    if len(frames) != 1:
        raise DnnseError(f"extractor outputs disagree on frame count: {sorted(frames)}")
    base = FeatureMatrix(
        np.hstack([f.data for f in extractor_outputs]),
        kind="stacked",
        frame_shift_s=extractor_outputs[0].frame_shift_s,
    )
    full = add_deltas(base)
    stacked = stack_context(full, context, context)
    if stats is None:
        return stacked
    return normalize(stacked, stats)


def train_dnnse(
    model: MlpModel,
    features: list[np.ndarray],
    targets: list[np.ndarray],
    cfg: TrainConfig,
) -> list[float]:
    """Minimize MSE between predicted and ideal masks; one list entry
    per utterance, rows aligned. Returns per-epoch training MSE."""
    if len(features) != len(targets):
        raise DnnseError(f"{len(features)} feature sets vs {len(targets)} target sets")
    for i, (f, t) in enumerate(zip(features, targets)):
        if len(f) != len(t):
            raise DnnseError(f"utterance {i}: {len(f)} feature rows vs {len(t)} target rows")
        if t.shape[1] != model.output_dim:
            raise DnnseError(f"utterance {i}: target dim {t.shape[1]} vs model {model.output_dim}")
    rng = np.random.default_rng(cfg.rng_seed)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(features))
        sq_sum = 0.0
        n_entries = 0
        for b_start in range(0, len(order), cfg.batch_utterances):
            ids = order[b_start : b_start + cfg.batch_utterances]
            X = np.vstack([features[i] for i in ids])
            Y = np.vstack([targets[i] for i in ids])
            cache = forward(model, X)
            batch_loss = loss_mse(cache.output, Y)
            if not np.isfinite(batch_loss):
                raise DnnseError(f"training diverged at epoch {epoch}")
            grads = mse_grads(model, cache, Y)
            sgd_step(model, grads, cfg.learning_rate)
            sq_sum += batch_loss * cache.output.size
            n_entries += cache.output.size
        history.append(sq_sum / n_entries)
    return history


def predict_mask(model: MlpModel, stacked: FeatureMatrix) -> np.ndarray:
    if stacked.dim != model.input_dim:
        raise DnnseError(f"feature dim {stacked.dim} vs model input {model.input_dim}")
    return forward(model, stacked.data).output


def enhance_dnnse(
    model: MlpModel, noisy: Waveform, cfg: DnnseFeatureConfig = DnnseFeatureConfig()
) -> Waveform:
    """Estimate the mask from the noisy signal and resynthesize with it."""
    from .dsp import gammatone_synthesize

    if model.output_dim != cfg.gammatone.n_channels:
        raise DnnseError(
            f"model predicts {model.output_dim} channels, analysis uses {cfg.gammatone.n_channels}"
        )
    if model.input_stats is None:
        raise DnnseError("model carries no input normalization stats")
    feats, tf = dnnse_base_features(noisy, cfg)
    stacked = stack_dnnse_features(feats, model.input_stats, cfg.context)
    mask = predict_mask(model, stacked)
    return gammatone_synthesize(tf, mask)
