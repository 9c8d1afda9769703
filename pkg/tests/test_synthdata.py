import hashlib
import math
from pathlib import Path

import numpy as np
import pytest

from awelab.frontend import FeatureSequence, read_features, read_manifest, write_features, write_manifest, ManifestRecord
from awelab.synthdata import (
    SynthConfig,
    class_phonemes,
    class_separability,
    gen_corpus,
    phonemes_for_word,
    time_warp,
    word_label,
)

SMALL = SynthConfig(
    n_classes=8, n_oov_classes=2, instances_per_class=6, n_speakers=3,
    feat_dim=5, proto_len_range=(20, 30), seed=99,
)


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestPhonemes:
    def test_base_k_digits(self):
        assert class_phonemes(0, 12, 3) == [0, 0, 0]
        assert class_phonemes(17, 12, 3) == [0, 1, 5]
        assert class_phonemes(49, 12, 3) == [0, 4, 1]

    def test_distinct_classes_distinct_sequences(self):
        seqs = {tuple(class_phonemes(c, 12, 3)) for c in range(50)}
        assert len(seqs) == 50

    def test_label_roundtrip(self):
        for c in (0, 7, 23, 49):
            label = word_label(c, 12, 3)
            assert phonemes_for_word(label) == class_phonemes(c, 12, 3)

    def test_bad_label_rejected(self):
        with pytest.raises(ValueError, match="not a synthetic word label"):
            phonemes_for_word("cat")

    def test_default_phoneme_length(self):
        assert SynthConfig().phoneme_length == 3


class TestTimeWarp:
    def test_identity_factor(self):
        x = np.random.default_rng(0).normal(size=(24, 4))
        np.testing.assert_allclose(time_warp(x, 1.0), x, atol=1e-12)

    def test_length_scaling(self):
        x = np.zeros((40, 2))
        assert time_warp(x, 0.8).shape[0] == 32
        assert time_warp(x, 1.25).shape[0] == 50


class TestGenCorpus:
    def test_clean_instances_equal_prototype(self, tmp_path):
        cfg = SynthConfig(
            n_classes=3, n_oov_classes=1, instances_per_class=4, n_speakers=2,
            feat_dim=4, proto_len_range=(15, 15), warp_range=(1.0, 1.0),
            noise_sigma=0.0, speaker_sigma=0.0, seed=5,
        )
        train, test = gen_corpus(cfg, tmp_path)
        by_word = {}
        for rec in train + test:
            feats = read_features(tmp_path / rec.feature_path).frames
            by_word.setdefault(rec.word, []).append(feats)
        for word, instances in by_word.items():
            for inst in instances[1:]:
                assert np.array_equal(inst, instances[0])

    def test_determinism_byte_identical(self, tmp_path):
        gen_corpus(SMALL, tmp_path / "a")
        gen_corpus(SMALL, tmp_path / "b")
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_oov_words_absent_from_train(self, tmp_path):
        cfg = SynthConfig(
            n_classes=12, n_oov_classes=4, instances_per_class=5,
            feat_dim=4, proto_len_range=(15, 20), seed=3,
        )
        train, test = gen_corpus(cfg, tmp_path)
        train_words = {r.word for r in train}
        test_words = {r.word for r in test}
        oov = test_words - train_words
        assert len(oov) == 4
        assert len(train_words) == 8

    def test_split_counts(self, tmp_path):
        train, test = gen_corpus(SMALL, tmp_path)
        # 6 in-vocab classes split 80/20 on 6 instances -> 5 train + 1 test;
        # 2 o-o-v classes contribute all 6 instances to test
        assert len(train) == 6 * 5
        assert len(test) == 6 * 1 + 2 * 6

    def test_instance_lengths_within_warp_bounds(self, tmp_path):
        train, test = gen_corpus(SMALL, tmp_path)
        lo = math.floor(0.8 * 20)
        hi = math.ceil(1.25 * 30)
        for rec in train + test:
            t = read_features(tmp_path / rec.feature_path).n_frames
            assert lo <= t <= hi

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SynthConfig(n_classes=5, n_oov_classes=5)
        with pytest.raises(ValueError):
            SynthConfig(noise_sigma=-1.0)


class TestClassSeparability:
    def test_clean_corpus_near_zero(self, tmp_path):
        cfg = SynthConfig(
            n_classes=4, n_oov_classes=1, instances_per_class=4,
            feat_dim=4, proto_len_range=(20, 20), warp_range=(1.0, 1.0),
            noise_sigma=0.0, speaker_sigma=0.0, seed=11,
        )
        assert class_separability(cfg, tmp_path) < 1e-9

    def test_identical_prototypes_near_one(self, tmp_path):
        # degenerate fixture: every "class" is the same noisy blob
        rng = np.random.default_rng(8)
        proto = rng.normal(size=(20, 4))
        train_recs, test_recs = [], []
        (tmp_path / "features").mkdir()
        for c in range(4):
            for i in range(8):
                frames = proto + rng.normal(size=proto.shape)
                seg_id = f"w{c}_i{i}"
                rel = f"features/{seg_id}.awe"
                write_features(FeatureSequence(frames=frames.astype(np.float32)),
                               tmp_path / rel)
                rec = ManifestRecord(
                    id=seg_id, word=f"w{c}", split="train" if i < 6 else "test",
                    feature_path=rel, start_s=0.0, end_s=0.2, speaker="s0",
                )
                (train_recs if rec.split == "train" else test_recs).append(rec)
        write_manifest(train_recs, tmp_path / "train.jsonl")
        write_manifest(test_recs, tmp_path / "test.jsonl")
        ratio = class_separability(SynthConfig(), tmp_path)
        assert 0.85 < ratio < 1.15

    def test_default_config_separable(self, tmp_path):
        ratio = class_separability(SynthConfig(), tmp_path)
        assert ratio < 0.8
        # regression anchor computed once from the default generator
        assert ratio == pytest.approx(0.5820808692096712, abs=1e-9)
