"""Deterministic synthetic word corpus.

Stands in for aligned real speech at desk scale: each word class is a
smoothed random-walk prototype in feature space, and each instance is a
time-warped, speaker-shifted, noisy rendering of its prototype. Word
labels double as phoneme transcriptions (each label character past the
prefix is one phoneme id), so text queries need no external lexicon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from awelab.frontend import FeatureSequence, ManifestRecord, write_features, write_manifest

FRAME_SECONDS = 0.010

_DIGITS = "0123456789abcdefghijklmnopqrstuvwxyz"

TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs. The corpus is a pure function of this config."""

    n_classes: int = 50
    n_oov_classes: int = 10
    instances_per_class: int = 20
    n_speakers: int = 8
    feat_dim: int = 20
    proto_len_range: tuple[int, int] = (70, 150)
    warp_range: tuple[float, float] = (0.8, 1.25)
    noise_sigma: float = 2.0
    speaker_sigma: float = 5.0
    phoneme_vocab_size: int = 36
    n_utterances: int = 120
    words_per_utterance: tuple[int, int] = (2, 4)
    seed: int = 12345

    def __post_init__(self):
        if not 0 <= self.n_oov_classes < self.n_classes:
            raise ValueError("n_oov_classes must be < n_classes")
        if self.proto_len_range[0] < 2:
            raise ValueError("prototype length must be >= 2 frames")
        if self.warp_range[0] <= 0:
            raise ValueError("warp factors must be positive")
        if min(self.noise_sigma, self.speaker_sigma) < 0:
            raise ValueError("sigmas must be >= 0")
        if self.phoneme_vocab_size < 2 or self.phoneme_vocab_size > len(_DIGITS):
            raise ValueError("phoneme_vocab_size out of range")

    @property
    def phoneme_length(self) -> int:
        return max(3, math.ceil(math.log(self.n_classes, self.phoneme_vocab_size)))


@dataclass
class WordClassSpec:
    class_id: int
    prototype: np.ndarray
    phonemes: list[int]


def class_phonemes(class_id: int, vocab_size: int, length: int) -> list[int]:
    """Phoneme ids of a class: its index written in base ``vocab_size``."""
    digits = []
    c = class_id
    for _ in range(length):
        digits.append(c % vocab_size)
        c //= vocab_size
    return digits[::-1]


def word_label(class_id: int, vocab_size: int, length: int) -> str:
    phones = class_phonemes(class_id, vocab_size, length)
    return "w" + "".join(_DIGITS[p] for p in phones)


def phonemes_for_word(word: str) -> list[int]:
    """Recover the phoneme-id sequence encoded in a synthetic word label."""
    if not word.startswith("w") or len(word) < 2:
        raise ValueError(f"not a synthetic word label: {word!r}")
    try:
        return [_DIGITS.index(ch) for ch in word[1:]]
    except ValueError as exc:
        raise ValueError(f"not a synthetic word label: {word!r}") from exc


def _smooth(steps: np.ndarray, width: int = 5) -> np.ndarray:
    """Moving average along the time axis, same length."""
    kernel = np.ones(width) / width
    out = np.empty_like(steps)
    for col in range(steps.shape[1]):
        out[:, col] = np.convolve(steps[:, col], kernel, mode="same")
    return out


def make_prototype(rng: np.random.Generator, length: int, feat_dim: int) -> np.ndarray:
    """Smoothed random-walk trajectory, length x feat_dim."""
    steps = rng.standard_normal((length, feat_dim))
    return np.cumsum(_smooth(steps), axis=0)


def time_warp(proto: np.ndarray, factor: float) -> np.ndarray:
    """Linearly resample a trajectory to round(len * factor) frames."""
    length = proto.shape[0]
    new_len = max(2, int(round(length * factor)))
    pos = np.linspace(0.0, length - 1, new_len)
    out = np.empty((new_len, proto.shape[1]))
    base = np.arange(length, dtype=np.float64)
    for col in range(proto.shape[1]):
        out[:, col] = np.interp(pos, base, proto[:, col])
    return out


def gen_class_specs(cfg: SynthConfig, rng: np.random.Generator) -> list[WordClassSpec]:
    specs = []
    for c in range(cfg.n_classes):
        length = int(rng.integers(cfg.proto_len_range[0], cfg.proto_len_range[1] + 1))
        proto = make_prototype(rng, length, cfg.feat_dim)
        specs.append(
            WordClassSpec(
                class_id=c,
                prototype=proto,
                phonemes=class_phonemes(c, cfg.phoneme_vocab_size, cfg.phoneme_length),
            )
        )
    return specs


def gen_corpus(cfg: SynthConfig, out_dir) -> tuple[list[ManifestRecord], list[ManifestRecord]]:
    """Generate the corpus under ``out_dir``.

    Writes features/<id>.awe for every instance plus train.jsonl and
    test.jsonl. The last ``n_oov_classes`` classes go entirely to the test
    split; the rest split 80/20 by instance index. The RNG draw order
    (prototypes, speaker offsets, then per-instance warp/speaker/noise) is
    fixed, so a config maps to exactly one corpus, byte for byte.
    """
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)

    specs = gen_class_specs(cfg, rng)
    speaker_offsets = rng.standard_normal((cfg.n_speakers, cfg.feat_dim)) * cfg.speaker_sigma

    n_train_inst = int(round(TRAIN_FRACTION * cfg.instances_per_class))
    first_oov = cfg.n_classes - cfg.n_oov_classes

    train_records, test_records = [], []
    for spec in specs:
        word = word_label(spec.class_id, cfg.phoneme_vocab_size, cfg.phoneme_length)
        for i in range(cfg.instances_per_class):
            factor = rng.uniform(cfg.warp_range[0], cfg.warp_range[1])
            speaker = int(rng.integers(cfg.n_speakers))
            warped = time_warp(spec.prototype, factor)
            noise = rng.standard_normal(warped.shape) * cfg.noise_sigma
            frames = warped + speaker_offsets[speaker] + noise

            seg_id = f"{word}_i{i:03d}"
            rel_path = f"features/{seg_id}.awe"
            write_features(FeatureSequence(frames=frames.astype(np.float32)),
                           out_dir / rel_path)

            if spec.class_id >= first_oov:
                split = "test"
            else:
                split = "train" if i < n_train_inst else "test"
            rec = ManifestRecord(
                id=seg_id, word=word, split=split, feature_path=rel_path,
                start_s=0.0, end_s=round(frames.shape[0] * FRAME_SECONDS, 6),
                speaker=f"s{speaker:02d}",
            )
            (train_records if split == "train" else test_records).append(rec)

    write_manifest(train_records, out_dir / "train.jsonl")
    write_manifest(test_records, out_dir / "test.jsonl")
    if cfg.n_utterances > 0:
        gen_search_utterances(cfg, test_records, out_dir)
    return train_records, test_records


def gen_search_utterances(cfg: SynthConfig, test_records: list[ManifestRecord],
                          out_dir) -> list[ManifestRecord]:
    """Concatenate test segments into multi-word search utterances.

    Each utterance strings together a few word segments; the manifest gets
    one record per contained word, all pointing at the shared utterance
    file with frame-accurate start/end times. This is the search
    collection for windowed spoken-term evaluation, where windows can cut
    through words or span two of them. Uses an RNG stream independent of
    the corpus generator, so corpus bytes are unaffected.
    """
    out_dir = Path(out_dir)
    (out_dir / "utterances").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([cfg.seed, 101])
    from awelab.frontend import read_features

    records = []
    for u in range(cfg.n_utterances):
        k = int(rng.integers(cfg.words_per_utterance[0],
                             cfg.words_per_utterance[1] + 1))
        picks = rng.choice(len(test_records), size=k, replace=False)
        parts = []
        rel_path = f"utterances/u{u:04d}.awe"
        cursor = 0
        for j, idx in enumerate(picks):
            src = test_records[idx]
            frames = read_features(out_dir / src.feature_path).frames
            records.append(ManifestRecord(
                id=f"u{u:04d}_w{j}_{src.id}", word=src.word, split="test",
                feature_path=rel_path,
                start_s=round(cursor * FRAME_SECONDS, 6),
                end_s=round((cursor + frames.shape[0]) * FRAME_SECONDS, 6),
                speaker=src.speaker,
            ))
            parts.append(frames)
            cursor += frames.shape[0]
        write_features(FeatureSequence(frames=np.concatenate(parts, axis=0)),
                       out_dir / rel_path)
    write_manifest(records, out_dir / "search.jsonl")
    return records


def class_separability(cfg: SynthConfig, out_dir) -> float:
    """Mean within-class over mean between-class distance of the corpus.

    Distance between two instances is the Euclidean distance between their
    frame-averaged feature vectors. Generates the corpus under ``out_dir``
    if not already present. Values well below 1 mean the classes are
    separable by a pooling encoder.
    """
    out_dir = Path(out_dir)
    if not (out_dir / "train.jsonl").exists():
        gen_corpus(cfg, out_dir)

    from awelab.frontend import read_manifest, read_features

    records = read_manifest(out_dir / "train.jsonl") + read_manifest(out_dir / "test.jsonl")
    means = np.stack(
        [read_features(out_dir / r.feature_path).frames.mean(axis=0) for r in records]
    ).astype(np.float64)
    words = np.array([r.word for r in records])

    sq = np.sum(means**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (means @ means.T), 0.0)
    dist = np.sqrt(d2)
    same = words[:, None] == words[None, :]
    off_diag = ~np.eye(len(records), dtype=bool)
    within = dist[same & off_diag].mean()
    between = dist[~same].mean()
    return float(within / between)
