"""Trial construction, equal error rate, and report tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class EvalError(Exception):
    pass


@dataclass(frozen=True)
class TrialRecord:
    claimed_speaker_id: int
    test_utterance_id: str
    is_target: bool


@dataclass(frozen=True)
class ScoreRecord:
    claimed_speaker_id: int
    test_utterance_id: str
    is_target: bool
    score: float
    condition_tag: str = ""

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise EvalError(f"non-finite score for trial {self.claimed_speaker_id}/{self.test_utterance_id}")


def make_trials(manifest, enrolled_speakers) -> list[TrialRecord]:
    """Full cross of enrolled speakers x test utterances."""
    return [
        TrialRecord(spk, e.utterance_id, e.speaker_id == spk)
        for spk in enrolled_speakers
        for e in manifest.entries
    ]


def eer(scores: list[ScoreRecord] | tuple) -> float:
    """Equal error rate, in percent.

    Thresholds sweep the observed score values (accept iff score >=
    threshold); FAR and FRR are linearly interpolated between the two
    adjacent operating points that bracket the crossing.
    """
    if isinstance(scores, tuple):
        values, targets = scores
        values = np.asarray(values, dtype=np.float64)
        targets = np.asarray(targets, dtype=bool)
    else:
        values = np.array([s.score for s in scores], dtype=np.float64)
        targets = np.array([s.is_target for s in scores], dtype=bool)
    n_target = int(targets.sum())
    n_impostor = int(len(targets) - n_target)
    if n_target == 0 or n_impostor == 0:
        raise EvalError(
            f"EER needs both classes, got {n_target} target / {n_impostor} impostor trials"
        )
    order = np.argsort(values, kind="stable")
    values = values[order]
    targets = targets[order]

    # operating points at each distinct score value, plus theta = +inf
    distinct, first_idx = np.unique(values, return_index=True)
    tgt_below = np.concatenate(([0], np.cumsum(targets)))  # targets with score < theta
    imp_below = np.concatenate(([0], np.cumsum(~targets)))
    far = []  # impostors accepted: score >= theta
    frr = []  # targets rejected: score < theta
    for idx in first_idx:
        far.append((n_impostor - imp_below[idx]) / n_impostor)
        frr.append(tgt_below[idx] / n_target)
    far.append(0.0)
    frr.append(1.0)
    far = np.asarray(far)
    frr = np.asarray(frr)

    diff = far - frr  # non-increasing in theta; +1 at the lowest threshold, -1 at +inf
    cross = int(np.searchsorted(-diff, 0.0, side="left"))
    if diff[cross - 1] == 0.0:
        return float(100.0 * far[cross - 1])
    d0, d1 = diff[cross - 1], diff[cross]
    t = d0 / (d0 - d1)
    return float(100.0 * ((1.0 - t) * far[cross - 1] + t * far[cross]))


SCORES_HEADER = ["claimed_speaker", "test_utterance", "is_target", "score", "condition"]


def write_scores(path, scores: list[ScoreRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORES_HEADER)
        for s in scores:
            writer.writerow(
                [s.claimed_speaker_id, s.test_utterance_id, int(s.is_target), repr(s.score), s.condition_tag]
            )


def read_scores(path) -> list[ScoreRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SCORES_HEADER:
            raise EvalError(f"bad scores header {header}")
        return [ScoreRecord(int(r[0]), r[1], bool(int(r[2])), float(r[3]), r[4]) for r in reader]


# ---------------------------------------------------------------------------
# report grid


def _condition_key(tag: str):
    if tag == "clean":
        return ("clean", None)
    noise, _, snr = tag.partition("@")
    return (noise, float(snr))


def report_grid(results: dict, front_ends: list[str] | None = None):
    """EER grid: rows = noise x SNR plus clean and per-noise mean rows.

    results maps (front_end, condition_tag) -> EER percent. Returns
    (header, rows) where missing cells render as an em dash.
    """
    if front_ends is None:
        front_ends = sorted({fe for fe, _ in results})
    noises = sorted({_condition_key(tag)[0] for _, tag in results if tag != "clean"})
    snrs = sorted({_condition_key(tag)[1] for _, tag in results if tag != "clean"})
    header = ["noise", "snr"] + list(front_ends)
    rows = []
    for noise in noises:
        block_tags = [f"{noise}@{snr:g}" for snr in snrs] + ["clean"]
        for tag in block_tags:
            label = "clean" if tag == "clean" else f"{_condition_key(tag)[1]:g}"
            row = [noise, label]
            for fe in front_ends:
                val = results.get((fe, tag))
                row.append("—" if val is None else f"{val:.2f}")
            rows.append(row)
        mean_row = [noise, "mean"]
        for fe in front_ends:
            vals = [results.get((fe, tag)) for tag in block_tags]
            present = [v for v in vals if v is not None]
            mean_row.append(f"{np.mean(present):.2f}" if len(present) == len(block_tags) else "—")
        rows.append(mean_row)
    return header, rows


def write_report_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def format_report(header, rows) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(str(v).rjust(w) for v, w in zip(header, widths))]
    for row in rows:
        lines.append("  ".join(str(v).rjust(w) for v, w in zip(row, widths)))
    return "\n".join(lines)
