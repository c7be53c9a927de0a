"""Diagonal-covariance GMM-UBM backend.

The UBM grows by binary splitting (1 -> 2 -> ... -> K) with EM between
splits, speaker models are mean-only MAP adaptations of the UBM, and
verification scores are per-frame-averaged log-likelihood ratios.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import containers
from .dsp import FeatureMatrix


class GmmError(Exception):
    pass


class EmMonotonicityError(GmmError):
    pass


@dataclass
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D)
    feature_kind: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise GmmError(f"weights sum to {self.weights.sum()}, expected 1")
        if np.any(self.variances <= 0.0):
            raise GmmError("variances must be positive")
        if self.means.shape != self.variances.shape or len(self.weights) != len(self.means):
            raise GmmError("inconsistent GMM shapes")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass
class SpeakerModel:
    gmm: GmmModel
    speaker_id: int
    enrollment_condition: str  # "clean" | "multi"


def _check_features(g: GmmModel, f: FeatureMatrix) -> np.ndarray:
    if f.dim != g.dim:
        raise GmmError(f"feature dim {f.dim} does not match model dim {g.dim}")
    if f.kind != g.feature_kind:
        raise GmmError(
            f"feature kind {f.kind!r} does not match model feature kind {g.feature_kind!r}"
        )
    return f.data


def _component_log_likelihoods(g: GmmModel, X: np.ndarray) -> np.ndarray:
    """(N, K) log of weight_k * N(x_n | mu_k, diag var_k)."""
    inv_var = 1.0 / g.variances
    const = -0.5 * (g.dim * np.log(2.0 * np.pi) + np.sum(np.log(g.variances), axis=1))
    quad = (
        (X * X) @ inv_var.T
        - 2.0 * (X @ (g.means * inv_var).T)
        + np.sum(g.means * g.means * inv_var, axis=1)
    )
    with np.errstate(divide="ignore"):
        log_w = np.log(g.weights)
    return log_w + const - 0.5 * quad


def log_likelihood(g: GmmModel, f: FeatureMatrix):
    """Per-frame log-likelihoods and their mean."""
    X = _check_features(g, f)
    per_frame = logsumexp(_component_log_likelihoods(g, X), axis=1)
    return per_frame, float(np.mean(per_frame))


def _responsibilities(g: GmmModel, X: np.ndarray):
    comp_ll = _component_log_likelihoods(g, X)
    frame_ll = logsumexp(comp_ll, axis=1)
    return np.exp(comp_ll - frame_ll[:, None]), frame_ll


def _m_step(X: np.ndarray, resp: np.ndarray, var_floor: np.ndarray, kind: str) -> GmmModel:
    counts = resp.sum(axis=0)
    weights = counts / counts.sum()
    safe = np.maximum(counts, 1e-300)
    means = (resp.T @ X) / safe[:, None]
    second = (resp.T @ (X * X)) / safe[:, None]
    variances = np.maximum(second - means**2, var_floor)
    return GmmModel(weights, means, variances, kind)


def _split(g: GmmModel, rng: np.random.Generator) -> GmmModel:
    offset = 0.1 * np.sqrt(g.variances)
    sign = np.where(rng.random(g.means.shape) < 0.5, 1.0, -1.0)
    means = np.vstack([g.means + sign * offset, g.means - sign * offset])
    weights = np.concatenate([g.weights, g.weights]) / 2.0
    variances = np.vstack([g.variances, g.variances])
    return GmmModel(weights, means, variances, g.feature_kind)


def em_train(
    features: FeatureMatrix,
    n_components: int,
    iters: int = 10,
    seed: int = 0,
    var_floor_factor: float = 1e-3,
    split_iters: int = 5,
) -> GmmModel:
    """EM with binary-split growth to n_components (a power of two).

    The total log-likelihood is asserted non-decreasing (within -1e-8
    relative) at every EM iteration of every stage.
    """
    if n_components < 1 or (n_components & (n_components - 1)) != 0:
        raise GmmError(f"n_components must be a power of two, got {n_components}")
    X = features.data
    if len(X) < 10 * n_components:
        raise GmmError(f"{len(X)} frames is too few for K={n_components} (need >= {10 * n_components})")
    rng = np.random.default_rng(seed)
    var_floor = var_floor_factor * np.maximum(X.var(axis=0), 1e-12)

    g = GmmModel(
        np.ones(1),
        X.mean(axis=0, keepdims=True),
        np.maximum(X.var(axis=0, keepdims=True), var_floor),
        features.kind,
    )
    while g.n_components < n_components:
        g = _split(g, rng)
        g = _run_em(g, X, split_iters, var_floor)
    return _run_em(g, X, iters, var_floor)


def _run_em(g: GmmModel, X: np.ndarray, iters: int, var_floor: np.ndarray) -> GmmModel:
    prev_ll = -np.inf
    for it in range(iters):
        resp, frame_ll = _responsibilities(g, X)
        total_ll = float(frame_ll.sum())
        if not np.isfinite(total_ll):
            raise GmmError(f"EM log-likelihood became non-finite at iteration {it}")
        if np.isfinite(prev_ll) and total_ll < prev_ll - 1e-8 * abs(prev_ll):
            raise EmMonotonicityError(
                f"log-likelihood decreased at iteration {it}: {prev_ll} -> {total_ll}"
            )
        prev_ll = total_ll
        g = _m_step(X, resp, var_floor, g.feature_kind)
    return g


def map_adapt(ubm: GmmModel, features: FeatureMatrix, relevance_r: float = 16.0) -> GmmModel:
    """Mean-only MAP: m_k <- (n_k E_k[x] + r m_k) / (n_k + r)."""
    if relevance_r <= 0:
        raise GmmError(f"relevance factor must be positive, got {relevance_r}")
    X = _check_features(ubm, features)
    if len(X) == 0:
        raise GmmError("cannot adapt to an empty feature matrix")
    resp, _ = _responsibilities(ubm, X)
    counts = resp.sum(axis=0)  # n_k
    post_mean = np.where(
        counts[:, None] > 0, (resp.T @ X) / np.maximum(counts, 1e-300)[:, None], ubm.means
    )
    means = (counts[:, None] * post_mean + relevance_r * ubm.means) / (counts[:, None] + relevance_r)
    return GmmModel(ubm.weights.copy(), means, ubm.variances.copy(), ubm.feature_kind)


def llr_score(spk: SpeakerModel, ubm: GmmModel, test: FeatureMatrix) -> float:
    """Mean over frames of [log p(x|speaker) - log p(x|UBM)]."""
    if spk.gmm.dim != ubm.dim or spk.gmm.feature_kind != ubm.feature_kind:
        raise GmmError("speaker model and UBM disagree on dim or feature kind")
    _, spk_ll = log_likelihood(spk.gmm, test)
    _, ubm_ll = log_likelihood(ubm, test)
    return spk_ll - ubm_ll


def enroll(
    ubm: GmmModel,
    manifest,
    speaker_id: int,
    condition: str,
    front_end,
    enroll_snrs: tuple = (10.0, 20.0),
    noise_names: tuple | None = None,
    relevance_r: float = 16.0,
) -> SpeakerModel:
    """MAP-adapt a speaker model from the manifest's enrollment utterances.

    condition "clean" pools the speaker's clean entries; "multi" pools
    clean plus noisy entries at enroll_snrs (all noises present in the
    manifest, or just noise_names). front_end maps a manifest entry to
    a FeatureMatrix.
    """
    if condition not in ("clean", "multi"):
        raise GmmError(f"unknown enrollment condition {condition!r}")
    entries = [e for e in manifest.entries if e.speaker_id == speaker_id]
    pool = [e for e in entries if e.condition_tag == "clean"]
    missing = [] if pool else ["clean"]
    if condition == "multi":
        noisy: dict = {}
        for e in entries:
            if "@" not in e.condition_tag:
                continue
            noise, _, snr = e.condition_tag.partition("@")
            noisy.setdefault((noise, float(snr)), []).append(e)
        names = noise_names if noise_names is not None else sorted({n for n, _ in noisy})
        if not names:
            missing.append("noisy@" + "/".join(f"{s:g}" for s in enroll_snrs))
        for noise in names:
            for snr in enroll_snrs:
                hits = noisy.get((noise, float(snr)), [])
                if hits:
                    pool.extend(hits)
                else:
                    missing.append(f"{noise}@{snr:g}")
    if missing:
        raise GmmError(
            f"speaker {speaker_id}: missing enrollment conditions: {', '.join(missing)}"
        )
    feats = [front_end(e) for e in pool]
    pooled = FeatureMatrix(
        np.vstack([f.data for f in feats]), feats[0].kind, feats[0].frame_shift_s
    )
    adapted = map_adapt(ubm, pooled, relevance_r)
    return SpeakerModel(adapted, speaker_id, condition)


# ---------------------------------------------------------------------------
# serialization


def save_gmm(path, g: GmmModel, speaker: SpeakerModel | None = None) -> None:
    meta = {"K": g.n_components, "D": g.dim, "feature_kind": g.feature_kind}
    if speaker is not None:
        meta["speaker_id"] = speaker.speaker_id
        meta["enrollment_condition"] = speaker.enrollment_condition
    containers.write_container(
        path,
        containers.GMM_MAGIC,
        containers.GMM_VERSION,
        meta,
        {"weights": g.weights, "means": g.means, "variances": g.variances},
    )


def load_gmm(path):
    """Returns GmmModel, or SpeakerModel if the container carries speaker info."""
    meta, arrays = containers.read_container(path, containers.GMM_MAGIC, containers.GMM_VERSION)
    g = GmmModel(arrays["weights"], arrays["means"], arrays["variances"], meta["feature_kind"])
    if "speaker_id" in meta:
        return SpeakerModel(g, meta["speaker_id"], meta["enrollment_condition"])
    return g
