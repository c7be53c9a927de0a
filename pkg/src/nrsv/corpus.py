"""Synthetic desk-scale corpus: speakers, noises, manifests.

Speakers are vocal-tract-like filters (a per-speaker formant warp and
pitch range) driven by pulse-train/noise excitation; texts are fixed
phone-like segment sequences, so one text traces similar spectral
trajectories across speakers. Everything is a pure function of its
seeds.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .audio import SAMPLE_RATE, Waveform, write_wav

NOISE_RMS = 0.1
SPEECH_RMS = 0.06

# fixed salts keep the seed streams of unrelated generators apart
_SALT_SPEAKER = 101
_SALT_TEXT = 202
_SALT_UTTERANCE = 303
_SALT_BABBLE = 404
_SALT_NOISE_STREAM = 505


class CorpusError(Exception):
    pass


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from a tuple of integers."""
    return int(np.random.default_rng(list(parts)).integers(0, 2**63))


# ---------------------------------------------------------------------------
# synthetic speakers


@dataclass(frozen=True)
class _SpeakerProfile:
    f0: float
    warp: float
    formant_shift: np.ndarray
    bandwidths: np.ndarray
    tilt: float


@dataclass(frozen=True)
class _Phone:
    formants: np.ndarray
    voiced: bool
    rel_dur: float
    level: float


def _speaker_profile(speaker_seed: int) -> _SpeakerProfile:
    rng = np.random.default_rng([_SALT_SPEAKER, speaker_seed])
    return _SpeakerProfile(
        f0=rng.uniform(85.0, 230.0),
        warp=rng.uniform(0.85, 1.18),
        formant_shift=rng.uniform(0.93, 1.07, size=4),
        bandwidths=rng.uniform(60.0, 110.0, size=4),
        tilt=rng.uniform(0.95, 0.99),
    )


def _text_phones(text_id: int) -> list[_Phone]:
    rng = np.random.default_rng([_SALT_TEXT, text_id])
    n_phones = int(rng.integers(5, 9))
    phones = []
    for _ in range(n_phones):
        f1 = rng.uniform(300.0, 850.0)
        f2 = rng.uniform(f1 + 250.0, 2400.0)
        f3 = rng.uniform(2300.0, 3100.0)
        f4 = rng.uniform(3300.0, 4200.0)
        voiced = rng.random() < 0.8
        phones.append(
            _Phone(
                formants=np.array([f1, f2, f3, f4]),
                voiced=voiced,
                rel_dur=rng.uniform(0.6, 1.4),
                level=1.0 if voiced else 0.3,
            )
        )
    return phones


def _formant_filter(x: np.ndarray, formants: np.ndarray, bandwidths: np.ndarray) -> np.ndarray:
    """Cascade of second-order resonators."""
    y = x
    for f, bw in zip(formants, bandwidths):
        f = min(f, 0.45 * SAMPLE_RATE)
        r = np.exp(-np.pi * bw / SAMPLE_RATE)
        theta = 2.0 * np.pi * f / SAMPLE_RATE
        b = [1.0 - r]
        a = [1.0, -2.0 * r * np.cos(theta), r * r]
        y = scipy.signal.lfilter(b, a, y)
    return y


def gen_speaker_utterance(
    speaker_seed: int, utterance_seed: int, text_id: int, duration_s: float
) -> Waveform:
    """Deterministic synthetic utterance for one (speaker, text) realization."""
    if not (1.0 <= duration_s <= 10.0):
        raise CorpusError(f"duration_s must be in [1, 10], got {duration_s}")
    spk = _speaker_profile(speaker_seed)
    phones = _text_phones(text_id)
    rng = np.random.default_rng([_SALT_UTTERANCE, speaker_seed, utterance_seed, text_id])

    n = int(round(duration_s * SAMPLE_RATE))
    # leading/trailing quiet regions, like real recordings have
    pad = int(0.1 * SAMPLE_RATE)
    active = n - 2 * pad
    rel = np.array([p.rel_dur for p in phones])
    bounds = pad + np.concatenate(([0], np.round(np.cumsum(rel) / rel.sum() * active))).astype(int)
    bounds[-1] = n - pad

    # slow pitch drift plus jitter, one contour for the whole utterance
    t = np.arange(n) / SAMPLE_RATE
    mod_f = rng.uniform(0.8, 2.5)
    mod_phase = rng.uniform(0.0, 2.0 * np.pi)
    f0 = spk.f0 * (1.0 + 0.08 * np.sin(2.0 * np.pi * mod_f * t + mod_phase))

    out = np.zeros(n)
    xfade = 160  # 10 ms crossfade between phone segments
    for k, phone in enumerate(phones):
        lo, hi = bounds[k], bounds[k + 1]
        if hi - lo < 32:
            continue
        seg_n = hi - lo
        if phone.voiced:
            phase = np.cumsum(f0[lo:hi]) / SAMPLE_RATE
            exc = np.zeros(seg_n)
            exc[np.nonzero(np.diff(np.floor(phase), prepend=phase[0]))[0]] = 1.0
            exc = scipy.signal.lfilter([1.0], [1.0, -spk.tilt], exc)  # glottal tilt
            exc += 0.02 * rng.standard_normal(seg_n)
        else:
            exc = rng.standard_normal(seg_n)
        formants = phone.formants * spk.warp * spk.formant_shift
        seg = _formant_filter(exc, formants, spk.bandwidths)
        seg_rms = np.sqrt(np.mean(seg**2))
        if seg_rms > 0:
            seg = seg / seg_rms * phone.level
        env = np.ones(seg_n)
        ramp = min(xfade, seg_n // 2)
        env[:ramp] = np.linspace(0.0, 1.0, ramp)
        env[-ramp:] = np.linspace(1.0, 0.0, ramp)
        out[lo:hi] += seg * env

    out += 0.003 * rng.standard_normal(n)  # breath floor
    out = out / np.sqrt(np.mean(out**2)) * SPEECH_RMS
    peak = np.abs(out).max()
    if peak > 0.98:
        out *= 0.98 / peak
    return Waveform(out)


# ---------------------------------------------------------------------------
# noise generators


def gen_white_noise(seed: int, n_samples: int) -> Waveform:
    if n_samples <= 0:
        raise CorpusError(f"n_samples must be positive, got {n_samples}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n_samples)
    x = x - x.mean()
    return Waveform(x / np.sqrt(np.mean(x**2)) * NOISE_RMS)


def babble_component(talker_seed: int, n_samples: int) -> np.ndarray:
    """One looped talker stream for babble synthesis."""
    rng = np.random.default_rng([_SALT_BABBLE, talker_seed])
    speaker = int(rng.integers(0, 2**31))
    text = int(rng.integers(0, 2**31))
    utt = int(rng.integers(0, 2**31))
    stream = gen_speaker_utterance(speaker, utt, text, 3.0).samples
    reps = int(np.ceil(n_samples / len(stream)))
    return np.tile(stream, reps)[:n_samples]


def gen_babble_noise(
    seed: int, n_samples: int, n_talkers: int = 6, talker_seeds: list[int] | None = None
) -> Waveform:
    """Sum of independent looped talker streams, renormalized to NOISE_RMS."""
    if n_samples <= 0:
        raise CorpusError(f"n_samples must be positive, got {n_samples}")
    if talker_seeds is None:
        rng = np.random.default_rng(seed)
        talker_seeds = [int(s) for s in rng.integers(0, 2**31, size=n_talkers)]
    if len(talker_seeds) < 2:
        raise CorpusError(f"babble needs at least 2 talkers, got {len(talker_seeds)}")
    mix = np.zeros(n_samples)
    for ts in talker_seeds:
        mix += babble_component(ts, n_samples)
    return Waveform(mix / np.sqrt(np.mean(mix**2)) * NOISE_RMS)


@dataclass(frozen=True)
class ColoredProfile:
    """Spectral tilt plus amplitude modulation, the stand-in for a recorded noise."""

    name: str
    tilt_db_per_octave: float
    am_freq_hz: float
    am_depth: float


COLORED_PROFILES = {
    "rumble": ColoredProfile("rumble", -6.0, 1.5, 0.45),
    "crowd": ColoredProfile("crowd", -3.0, 3.0, 0.30),
    "hiss": ColoredProfile("hiss", +3.0, 0.5, 0.15),
}


def gen_colored_noise(seed: int, n_samples: int, profile: ColoredProfile) -> Waveform:
    if n_samples <= 0:
        raise CorpusError(f"n_samples must be positive, got {n_samples}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n_samples)
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / SAMPLE_RATE)
    freqs[0] = freqs[1] if len(freqs) > 1 else 1.0
    shape = (freqs / 1000.0) ** (profile.tilt_db_per_octave / (20.0 * np.log10(2.0)))
    y = np.fft.irfft(spec * shape, n_samples)
    t = np.arange(n_samples) / SAMPLE_RATE
    phase = rng.uniform(0.0, 2.0 * np.pi)
    y *= 1.0 + profile.am_depth * np.sin(2.0 * np.pi * profile.am_freq_hz * t + phase)
    return Waveform(y / np.sqrt(np.mean(y**2)) * NOISE_RMS)


NOISE_NAMES = ("white", "babble", "rumble", "crowd", "hiss")
PARTITIONS = ("train", "enroll", "test")


@dataclass(frozen=True)
class NoiseSpec:
    noise_name: str
    generator_kind: str
    seed: int
    partition: str


def make_noise_spec(noise_name: str, partition: str, base_seed: int) -> NoiseSpec:
    if noise_name not in NOISE_NAMES:
        raise CorpusError(f"unknown noise {noise_name!r}; known: {NOISE_NAMES}")
    if partition not in PARTITIONS:
        raise CorpusError(f"unknown partition {partition!r}; known: {PARTITIONS}")
    kind = "white" if noise_name == "white" else "babble" if noise_name == "babble" else "colored"
    seed = derive_seed(
        _SALT_NOISE_STREAM, base_seed, NOISE_NAMES.index(noise_name), PARTITIONS.index(partition)
    )
    return NoiseSpec(noise_name, kind, seed, partition)


def gen_noise(spec: NoiseSpec, n_samples: int) -> Waveform:
    if spec.generator_kind == "white":
        return gen_white_noise(spec.seed, n_samples)
    if spec.generator_kind == "babble":
        return gen_babble_noise(spec.seed, n_samples)
    if spec.generator_kind == "colored":
        return gen_colored_noise(spec.seed, n_samples, COLORED_PROFILES[spec.noise_name])
    raise CorpusError(f"unknown generator kind {spec.generator_kind!r}")


# ---------------------------------------------------------------------------
# manifests


MANIFEST_HEADER = ["utterance_id", "speaker_id", "session_id", "text_id", "file_path", "condition_tag"]


def _check_condition_tag(tag: str) -> None:
    if tag == "clean":
        return
    if "@" in tag:
        noise, _, snr = tag.partition("@")
        try:
            float(snr)
        except ValueError:
            raise CorpusError(f"bad condition tag {tag!r}") from None
        if noise:
            return
    raise CorpusError(f"bad condition tag {tag!r}; expected 'clean' or 'noise@snr_db'")


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    speaker_id: int
    session_id: int
    text_id: int
    file_path: str
    condition_tag: str


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.utterance_id in seen:
                raise CorpusError(f"duplicate utterance_id {e.utterance_id!r}")
            seen.add(e.utterance_id)
            _check_condition_tag(e.condition_tag)

    def check_files(self) -> None:
        missing = [e.file_path for e in self.entries if not os.path.exists(e.file_path)]
        if missing:
            raise CorpusError(f"{len(missing)} manifest files missing, first: {missing[0]}")

    def speakers(self) -> list[int]:
        return sorted({e.speaker_id for e in self.entries})

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.utterance_id: e for e in self.entries}

    def subset(self, predicate) -> "CorpusManifest":
        return CorpusManifest([e for e in self.entries if predicate(e)])


def write_manifest(path, manifest: CorpusManifest) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            writer.writerow(
                [e.utterance_id, e.speaker_id, e.session_id, e.text_id, e.file_path, e.condition_tag]
            )


def read_manifest(path) -> CorpusManifest:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != MANIFEST_HEADER:
            raise CorpusError(f"bad manifest header {header}")
        entries = [
            ManifestEntry(row[0], int(row[1]), int(row[2]), int(row[3]), row[4], row[5])
            for row in reader
        ]
    return CorpusManifest(entries)


# ---------------------------------------------------------------------------
# corpus layout and generation


@dataclass(frozen=True)
class CorpusLayout:
    """Who records what: disjoint extractor-training and SV speaker sets."""

    extractor_speakers: tuple = tuple(range(51, 61))
    sv_speakers: tuple = tuple(range(2, 12))
    extractor_texts: tuple = (2, 3)
    extractor_sessions: tuple = (1, 4, 7)
    sv_text: int = 1
    enroll_sessions: tuple = (1, 4, 7)
    test_sessions: tuple = (2, 3, 5, 6, 8, 9)
    extractor_duration_s: float = 1.2
    sv_duration_s: float = 2.0

    def validate(self) -> None:
        overlap = set(self.extractor_speakers) & set(self.sv_speakers)
        if overlap:
            raise CorpusError(f"extractor and SV speaker sets overlap: {sorted(overlap)}")
        if not self.extractor_speakers or not self.sv_speakers:
            raise CorpusError("speaker sets must be non-empty")
        if set(self.enroll_sessions) & set(self.test_sessions):
            raise CorpusError("enroll and test sessions overlap")


def utterance_id(speaker: int, text: int, session: int, condition: str = "clean") -> str:
    base = f"s{speaker:03d}_t{text:02d}_e{session:02d}"
    return base if condition == "clean" else f"{base}_{condition.replace('@', '_at_')}"


def _clean_entries(root, layout: CorpusLayout) -> list[tuple[ManifestEntry, float]]:
    rows = []
    for spk in layout.extractor_speakers:
        for text in layout.extractor_texts:
            for sess in layout.extractor_sessions:
                uid = utterance_id(spk, text, sess)
                path = os.path.join(root, "clean", uid + ".wav")
                rows.append(
                    (ManifestEntry(uid, spk, sess, text, path, "clean"), layout.extractor_duration_s)
                )
    for spk in layout.sv_speakers:
        for sess in layout.enroll_sessions + layout.test_sessions:
            uid = utterance_id(spk, layout.sv_text, sess)
            path = os.path.join(root, "clean", uid + ".wav")
            rows.append(
                (ManifestEntry(uid, spk, sess, layout.sv_text, path, "clean"), layout.sv_duration_s)
            )
    return rows


def generate_corpus(root, layout: CorpusLayout, seed: int) -> CorpusManifest:
    """Write the clean WAV tree for a layout and return its manifest."""
    layout.validate()
    os.makedirs(os.path.join(root, "clean"), exist_ok=True)
    entries = []
    for entry, base_dur in _clean_entries(root, layout):
        spk_seed = derive_seed(seed, entry.speaker_id)
        utt_seed = derive_seed(seed, entry.speaker_id, entry.text_id, entry.session_id)
        jitter = np.random.default_rng(utt_seed).uniform(-0.05, 0.05)
        w = gen_speaker_utterance(spk_seed, utt_seed, entry.text_id, base_dur * (1.0 + jitter))
        write_wav(entry.file_path, w)
        entries.append(entry)
    manifest = CorpusManifest(entries)
    write_manifest(os.path.join(root, "manifest.csv"), manifest)
    return manifest


def build_manifest(root, layout: CorpusLayout) -> CorpusManifest:
    """Manifest for an existing WAV tree; every referenced file must exist."""
    layout.validate()
    if not os.path.isdir(os.path.join(root, "clean")):
        raise CorpusError(f"{root}: no clean/ WAV tree")
    manifest = CorpusManifest([entry for entry, _ in _clean_entries(root, layout)])
    manifest.check_files()
    return manifest


def extractor_entries(m: CorpusManifest, layout: CorpusLayout) -> CorpusManifest:
    spk = set(layout.extractor_speakers)
    return m.subset(lambda e: e.speaker_id in spk)


def enroll_entries(m: CorpusManifest, layout: CorpusLayout) -> CorpusManifest:
    spk = set(layout.sv_speakers)
    sess = set(layout.enroll_sessions)
    return m.subset(lambda e: e.speaker_id in spk and e.session_id in sess)


def test_entries(m: CorpusManifest, layout: CorpusLayout) -> CorpusManifest:
    spk = set(layout.sv_speakers)
    sess = set(layout.test_sessions)
    return m.subset(lambda e: e.speaker_id in spk and e.session_id in sess)
