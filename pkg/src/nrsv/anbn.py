"""Adversarial bottleneck feature extraction.

An encoding network (627 -> 1024 softplus -> 1024 softplus -> 128 tanh)
cascades into a discriminating network (128 -> 1024 sigmoid -> 1024
sigmoid -> N+1 softmax over noise conditions). The two are trained in
turn with opposing labels: encoder updates relabel every frame "clean"
with the discriminator frozen, discriminator updates use the true
condition labels with the encoder frozen. The bottleneck activations
are the noise-robust feature.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import containers
from .dsp import FeatureMatrix, FeatureStats, normalize, stack_context
from .nnet import (
    MlpModel,
    _model_from_payload,
    _model_payload,
    ce_softmax_grads,
    forward,
    init_model,
    loss_ce,
    sgd_step,
)

EN_LAYOUT = (1024, 1024, 128)
EN_ACTIVATIONS = ("softplus", "softplus", "tanh")
DN_HIDDEN = (1024, 1024)
DN_ACTIVATIONS = ("sigmoid", "sigmoid", "softmax")
BOTTLENECK_DIM = 128
CONTEXT_FRAMES = 5  # five past and five future frames
AN_INPUT_DIM = 57 * (2 * CONTEXT_FRAMES + 1)
CLEAN_LABEL = "clean"


class AnbnError(Exception):
    pass


class TrainingDivergedError(AnbnError):
    def __init__(self, epoch: int, batch: int, which: str):
        super().__init__(f"{which} loss became NaN at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class AnSchedule:
    en_updates_per_batch: int = 3
    dn_update_probability: float = 0.5
    epochs: int = 30
    batch_utterances: int = 32
    learning_rate: float = 0.01
    train_snrs: tuple = (10.0, 20.0)

    def __post_init__(self):
        if not (0.0 <= self.dn_update_probability <= 1.0):
            raise AnbnError("dn_update_probability must be in [0, 1]")
        if min(self.en_updates_per_batch, self.epochs, self.batch_utterances) < 1:
            raise AnbnError("schedule counts must be >= 1")


@dataclass
class AnModel:
    en: MlpModel
    dn: MlpModel
    noise_labels: list[str]  # N noise names then "clean"
    input_stats: FeatureStats | None = None

    def __post_init__(self):
        if self.en.output_dim != self.dn.input_dim:
            raise AnbnError("encoder output dim must equal discriminator input dim")
        if self.dn.output_dim != len(self.noise_labels):
            raise AnbnError(
                f"discriminator has {self.dn.output_dim} outputs for {len(self.noise_labels)} labels"
            )
        if self.noise_labels[-1] != CLEAN_LABEL:
            raise AnbnError(f"last label must be {CLEAN_LABEL!r}")


def build_dn(input_dim: int, n_classes: int, seed: int) -> MlpModel:
    return init_model([input_dim, *DN_HIDDEN, n_classes], list(DN_ACTIVATIONS), seed)


def build_an(noise_names: list[str], seed: int, input_dim: int = AN_INPUT_DIM) -> AnModel:
    """Architecture per the fixed layout; deterministic init per seed."""
    if not noise_names:
        raise AnbnError("noise_names must not be empty")
    if not (1 <= len(noise_names) <= 16):
        raise AnbnError(f"expected 1..16 noise types, got {len(noise_names)}")
    if len(set(noise_names)) != len(noise_names) or CLEAN_LABEL in noise_names:
        raise AnbnError(f"noise names must be unique and must not include {CLEAN_LABEL!r}")
    en = init_model([input_dim, *EN_LAYOUT], list(EN_ACTIVATIONS), seed)
    dn = build_dn(EN_LAYOUT[-1], len(noise_names) + 1, seed + 1)
    return AnModel(en, dn, list(noise_names) + [CLEAN_LABEL])


@dataclass
class LabeledUtterance:
    """Stacked, normalized features of one utterance plus its condition label."""

    features: np.ndarray
    label: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)


@dataclass
class EpochStats:
    epoch: int
    loss_e: float
    loss_d: float  # NaN if no discriminator update happened this epoch
    dn_accuracy: float


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)
    coin_flips: list[bool] = field(default_factory=list)


def write_training_log(path, log: TrainLog) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss_E", "loss_D", "dn_accuracy"])
        for row in log.epochs:
            writer.writerow([row.epoch, repr(row.loss_e), repr(row.loss_d), repr(row.dn_accuracy)])


def _cascade(model: AnModel) -> MlpModel:
    # shares the layer objects, so sgd_step updates the AnModel in place
    return MlpModel(model.en.layers + model.dn.layers, model.en.input_dim)


def _one_hot(indices: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(indices), n_classes))
    out[np.arange(len(indices)), indices] = 1.0
    return out


def _snapshot(layers):
    return [(l.W.copy(), l.b.copy()) for l in layers]


def _unchanged(layers, snap) -> bool:
    return all(
        np.array_equal(l.W, W) and np.array_equal(l.b, b) for l, (W, b) in zip(layers, snap)
    )


def train_an(
    model: AnModel,
    utterances: list[LabeledUtterance],
    schedule: AnSchedule,
    seed: int,
    validate_freeze: bool = False,
) -> TrainLog:
    """Alternating adversarial training over utterance mini-batches.

    Per batch: en_updates_per_batch encoder updates against the all-clean
    label matrix (discriminator frozen, fresh forward each time), then
    with dn_update_probability one discriminator update against the true
    labels (encoder frozen). Utterance order is reshuffled every epoch;
    the discriminator-update coin is drawn from its own seeded stream,
    one flip per batch. Logged loss_E/loss_D are the batch losses at the
    update's own forward pass, averaged over the epoch.
    """
    label_index = {name: i for i, name in enumerate(model.noise_labels)}
    n_classes = len(model.noise_labels)
    for i, utt in enumerate(utterances):
        if utt.label not in label_index:
            raise AnbnError(f"utterance {i}: label {utt.label!r} not in {model.noise_labels}")
        if utt.features.ndim != 2 or utt.features.shape[1] != model.en.input_dim:
            raise AnbnError(
                f"utterance {i}: features shape {utt.features.shape}, expected (*, {model.en.input_dim})"
            )
    cascade = _cascade(model)
    en_idx = frozenset(range(len(model.en.layers)))
    dn_idx = frozenset(range(len(model.en.layers), len(cascade.layers)))
    shuffle_rng = np.random.default_rng([seed, 1])
    coin_rng = np.random.default_rng([seed, 2])
    labels_arr = np.array([label_index[u.label] for u in utterances])
    clean_idx = label_index[CLEAN_LABEL]

    log = TrainLog()
    for epoch in range(schedule.epochs):
        order = shuffle_rng.permutation(len(utterances))
        e_losses = []
        d_losses = []
        for b_start in range(0, len(order), schedule.batch_utterances):
            batch_ids = order[b_start : b_start + schedule.batch_utterances]
            batch_no = b_start // schedule.batch_utterances
            X = np.vstack([utterances[i].features for i in batch_ids])
            true_labels = _one_hot(
                np.repeat(labels_arr[batch_ids], [len(utterances[i].features) for i in batch_ids]),
                n_classes,
            )
            clean_labels = _one_hot(np.full(len(X), clean_idx), n_classes)

            if validate_freeze:
                dn_snap = _snapshot(model.dn.layers)
            for _ in range(schedule.en_updates_per_batch):
                cache = forward(cascade, X)
                batch_loss_e = loss_ce(cache.output, clean_labels)
                if math.isnan(batch_loss_e):
                    raise TrainingDivergedError(epoch, batch_no, "encoder")
                grads = ce_softmax_grads(cascade, cache, clean_labels, frozen=dn_idx)
                sgd_step(cascade, grads, schedule.learning_rate, frozen=dn_idx)
            e_losses.append(batch_loss_e)
            if validate_freeze and not _unchanged(model.dn.layers, dn_snap):
                raise AnbnError(f"encoder update changed discriminator parameters (epoch {epoch})")

            flip = bool(coin_rng.random() < schedule.dn_update_probability)
            log.coin_flips.append(flip)
            if flip:
                if validate_freeze:
                    en_snap = _snapshot(model.en.layers)
                cache = forward(cascade, X)
                batch_loss_d = loss_ce(cache.output, true_labels)
                if math.isnan(batch_loss_d):
                    raise TrainingDivergedError(epoch, batch_no, "discriminator")
                grads = ce_softmax_grads(cascade, cache, true_labels, frozen=en_idx)
                sgd_step(cascade, grads, schedule.learning_rate, frozen=en_idx)
                d_losses.append(batch_loss_d)
                if validate_freeze and not _unchanged(model.en.layers, en_snap):
                    raise AnbnError(
                        f"discriminator update changed encoder parameters (epoch {epoch})"
                    )

        acc = dn_accuracy(model, utterances)
        log.epochs.append(
            EpochStats(
                epoch=epoch,
                loss_e=float(np.mean(e_losses)),
                loss_d=float(np.mean(d_losses)) if d_losses else float("nan"),
                dn_accuracy=acc,
            )
        )
    return log


def dn_accuracy(model: AnModel, utterances: list[LabeledUtterance]) -> float:
    """Frame fraction where the discriminator picks the true condition."""
    label_index = {name: i for i, name in enumerate(model.noise_labels)}
    cascade = _cascade(model)
    hits = 0
    total = 0
    for utt in utterances:
        probs = forward(cascade, utt.features).output
        hits += int(np.count_nonzero(np.argmax(probs, axis=1) == label_index[utt.label]))
        total += len(utt.features)
    return hits / total if total else float("nan")


def prepare_an_input(mfcc_full: FeatureMatrix, stats: FeatureStats) -> FeatureMatrix:
    """Normalize 57-dim MFCCs with persisted stats and stack +-5 frames."""
    return stack_context(normalize(mfcc_full, stats), CONTEXT_FRAMES, CONTEXT_FRAMES)


def extract_anbn(model: AnModel, features) -> FeatureMatrix:
    """Bottleneck tanh activations per frame; pure function of the input."""
    data = features.data if isinstance(features, FeatureMatrix) else np.asarray(features)
    if data.ndim != 2 or data.shape[1] != model.en.input_dim:
        raise AnbnError(f"expected (*, {model.en.input_dim}) input, got {data.shape}")
    return FeatureMatrix(forward(model.en, data).output, kind="anbn")


# ---------------------------------------------------------------------------
# serialization


def save_an(path, model: AnModel) -> None:
    en_meta, en_arrays = _model_payload(model.en)
    dn_meta, dn_arrays = _model_payload(model.dn)
    meta = {
        "model_kind": "an",
        "noise_labels": model.noise_labels,
        "en": en_meta,
        "dn": dn_meta,
        "has_stats": model.input_stats is not None,
    }
    arrays = {f"en_{k}": v for k, v in en_arrays.items()}
    arrays.update({f"dn_{k}": v for k, v in dn_arrays.items()})
    if model.input_stats is not None:
        arrays["stats_mean"] = model.input_stats.mean
        arrays["stats_var"] = model.input_stats.var
    containers.write_container(path, containers.MLP_MAGIC, containers.MLP_VERSION, meta, arrays)


def load_an(path) -> AnModel:
    meta, arrays = containers.read_container(path, containers.MLP_MAGIC, containers.MLP_VERSION)
    if meta.get("model_kind") != "an":
        raise AnbnError(f"{path}: expected an adversarial-extractor container")
    en = _model_from_payload(
        meta["en"], {k[len("en_") :]: v for k, v in arrays.items() if k.startswith("en_")}
    )
    dn = _model_from_payload(
        meta["dn"], {k[len("dn_") :]: v for k, v in arrays.items() if k.startswith("dn_")}
    )
    stats = None
    if meta.get("has_stats"):
        stats = FeatureStats(arrays["stats_mean"], arrays["stats_var"])
    return AnModel(en, dn, meta["noise_labels"], stats)
