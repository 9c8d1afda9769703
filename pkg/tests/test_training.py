import csv
import math

import numpy as np
import pytest

from awelab.encoders import EncoderConfig, init_params, load_params
from awelab.losses import LossWeights
from awelab.training import (
    BatchSample,
    OptState,
    TrainConfig,
    TrainingError,
    adamw_step,
    clip_global_norm,
    global_grad_norm,
    init_opt_state,
    onecycle_lr,
    sample_batch,
    train,
)

TINY_ENC = EncoderConfig(kind="pooled", hidden=8, layers=1, bidirectional=False,
                         embed_dim=6, feat_dim=6, text_vocab=36, text_embed_dim=4)


def tiny_train_cfg(**kw):
    base = dict(batch_classes=3, positives_per_class=2, epochs=4, seed=5,
                weights=LossWeights(alpha1=0.1, alpha2=1.0))
    base.update(kw)
    return TrainConfig(**base)


class TestSampleBatch:
    def test_exact_fit_membership(self, tiny_corpus):
        _, train_records, _ = tiny_corpus
        rng = np.random.default_rng(0)
        words = sorted({r.word for r in train_records})
        batch = sample_batch(train_records, len(words), 2, rng)
        assert sorted(batch.classes) == words
        assert not batch.flagged
        for word, ids in zip(batch.classes, batch.instance_ids):
            assert len(set(ids)) == 2
            assert all(i.startswith(word) for i in ids)

    def test_underfilled_class_flagged(self, tiny_corpus):
        _, train_records, _ = tiny_corpus
        one_each = {}
        for r in train_records:
            one_each.setdefault(r.word, r)
        rng = np.random.default_rng(1)
        batch = sample_batch(list(one_each.values()), 3, 2, rng)
        assert batch.flagged
        for ids in batch.instance_ids:
            assert ids[0] == ids[1]

    def test_deterministic_given_rng_seed(self, tiny_corpus):
        _, train_records, _ = tiny_corpus
        b1 = sample_batch(train_records, 4, 2, np.random.default_rng(9))
        b2 = sample_batch(train_records, 4, 2, np.random.default_rng(9))
        assert b1.classes == b2.classes
        assert b1.instance_ids == b2.instance_ids

    def test_too_few_classes(self, tiny_corpus):
        _, train_records, _ = tiny_corpus
        with pytest.raises(TrainingError, match="eligible classes"):
            sample_batch(train_records, 100, 2, np.random.default_rng(0))

    def test_texts_match_labels(self, tiny_corpus):
        _, train_records, _ = tiny_corpus
        batch = sample_batch(train_records, 3, 2, np.random.default_rng(3))
        from awelab.synthdata import phonemes_for_word
        for word, text in zip(batch.classes, batch.texts):
            assert list(text) == phonemes_for_word(word)


class TestOneCycle:
    CFG = tiny_train_cfg(lr_max=1e-3)

    def test_start_is_lr_max_over_25(self):
        assert onecycle_lr(0, 100, self.CFG) == pytest.approx(4e-5, abs=1e-12)

    def test_peak_at_warmup_boundary(self):
        peak = math.ceil(0.2 * 100)
        assert onecycle_lr(peak, 100, self.CFG) == pytest.approx(1e-3, abs=1e-12)

    def test_final_is_lr_max_over_10000(self):
        assert onecycle_lr(99, 100, self.CFG) == pytest.approx(1e-7, abs=1e-12)

    def test_monotone_warmup_then_decay(self):
        lrs = [onecycle_lr(s, 50, self.CFG) for s in range(50)]
        peak = math.ceil(0.2 * 50)
        assert all(lrs[i] < lrs[i + 1] for i in range(peak))
        assert all(lrs[i] > lrs[i + 1] for i in range(peak, 49))

    def test_out_of_range_rejected(self):
        with pytest.raises(TrainingError, match="outside"):
            onecycle_lr(100, 100, self.CFG)
        with pytest.raises(TrainingError, match="outside"):
            onecycle_lr(-1, 100, self.CFG)


class TestClip:
    def test_below_threshold_unchanged(self):
        grads = {"w": np.array([0.3, 0.4])}
        out = clip_global_norm(grads, 1.0)
        assert np.array_equal(out["w"], grads["w"])

    def test_three_four_five(self):
        grads = {"w": np.array([3.0, 4.0])}
        out = clip_global_norm(grads, 1.0)
        np.testing.assert_allclose(out["w"], [0.6, 0.8], atol=1e-12)

    def test_post_clip_norm_bounded(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            grads = {"a": rng.normal(size=(3, 4)) * 10, "b": rng.normal(size=5)}
            out = clip_global_norm(grads, 1.0)
            assert global_grad_norm(out) <= 1.0 + 1e-12

    def test_nan_rejected(self):
        with pytest.raises(TrainingError, match="non-finite"):
            clip_global_norm({"w": np.array([np.nan])}, 1.0)

    def test_norm_spans_all_entries(self):
        grads = {"a": np.array([1.0]), "b": np.array([1.0])}
        assert global_grad_norm(grads) == pytest.approx(math.sqrt(2.0), abs=1e-12)


class TestAdamW:
    def test_zero_grad_no_decay_is_identity(self):
        cfg = tiny_train_cfg(weight_decay=0.0)
        params = {"w": np.ones((2, 2)) * 0.5}
        state = init_opt_state(params)
        new, _ = adamw_step(params, {"w": np.zeros((2, 2))}, state, 1e-3, cfg)
        assert np.array_equal(new["w"], params["w"])

    def test_zero_grad_decay_scales(self):
        cfg = tiny_train_cfg(weight_decay=1e-4)
        params = {"w": np.full((2, 2), 2.0)}
        state = init_opt_state(params)
        new, _ = adamw_step(params, {"w": np.zeros((2, 2))}, state, 1e-3, cfg)
        np.testing.assert_allclose(new["w"], 2.0 * (1 - 1e-7), rtol=1e-14)

    def test_single_step_unit_gradient(self):
        cfg = tiny_train_cfg(weight_decay=0.0)
        params = {"w": np.array(0.0)}
        state = init_opt_state(params)
        new, state = adamw_step(params, {"w": np.array(1.0)}, state, 1e-3, cfg)
        # bias-corrected m/sqrt(v) is exactly 1 at t=1, up to eps
        assert float(new["w"]) == pytest.approx(-1e-3, rel=1e-6)
        assert state.t == 1

    def test_biases_and_tau_not_decayed(self):
        cfg = tiny_train_cfg(weight_decay=0.5)
        params = {"net.b": np.ones(3), "tau": np.array(2.0)}
        state = init_opt_state(params)
        zeros = {"net.b": np.zeros(3), "tau": np.array(0.0)}
        new, _ = adamw_step(params, zeros, state, 1e-3, cfg)
        assert np.array_equal(new["net.b"], params["net.b"])
        assert float(new["tau"]) == 2.0

    def test_shape_mismatch(self):
        cfg = tiny_train_cfg()
        params = {"w": np.zeros((2, 2))}
        with pytest.raises(TrainingError, match="shape mismatch"):
            adamw_step(params, {"w": np.zeros(3)}, init_opt_state(params), 1e-3, cfg)


class TestTrainLoop:
    def test_loss_improves_and_logs_match_schedule(self, tiny_corpus, tmp_path):
        root, train_records, _ = tiny_corpus
        cfg = tiny_train_cfg(epochs=6)
        params, rows = train(train_records, cfg, TINY_ENC, root, tmp_path / "run")
        steps_per_epoch = 8 // 3  # 8 train classes, 3 per batch
        assert len(rows) == steps_per_epoch * 6
        first_epoch = np.mean([r["loss"] for r in rows[:steps_per_epoch]])
        last_epoch = np.mean([r["loss"] for r in rows[-steps_per_epoch:]])
        assert last_epoch < first_epoch
        total = len(rows)
        for row in rows:
            assert row["lr"] == onecycle_lr(row["step"], total, cfg)
            assert 0.0 < row["exp_tau"] <= 100.0

    def test_same_seed_byte_identical_checkpoints(self, tiny_corpus, tmp_path):
        root, train_records, _ = tiny_corpus
        cfg = tiny_train_cfg(epochs=3)
        train(train_records, cfg, TINY_ENC, root, tmp_path / "a")
        train(train_records, cfg, TINY_ENC, root, tmp_path / "b")
        a = (tmp_path / "a" / "checkpoint.awep").read_bytes()
        b = (tmp_path / "b" / "checkpoint.awep").read_bytes()
        assert a == b
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == \
            (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_resume_reproduces_uninterrupted_run(self, tiny_corpus, tmp_path):
        root, train_records, _ = tiny_corpus
        cfg = tiny_train_cfg(epochs=5)
        _, full_rows = train(train_records, cfg, TINY_ENC, root, tmp_path / "full")
        # simulate an interruption after epoch 1: only its saved state survives
        part = tmp_path / "part"
        part.mkdir()
        for name in ("checkpoint_epoch001.awep", "optstate_epoch001.awep"):
            (part / name).write_bytes((tmp_path / "full" / name).read_bytes())
        _, tail_rows = train(train_records, cfg, TINY_ENC, root,
                             part, resume_epoch=1)
        steps_per_epoch = 8 // 3
        assert len(tail_rows) == steps_per_epoch * 3
        for got, want in zip(tail_rows, full_rows[steps_per_epoch * 2:]):
            assert got["loss"] == want["loss"]
            assert got["lr"] == want["lr"]
        full_ckpt = (tmp_path / "full" / "checkpoint.awep").read_bytes()
        part_ckpt = (tmp_path / "part" / "checkpoint.awep").read_bytes()
        assert full_ckpt == part_ckpt

    def test_metrics_csv_format(self, tiny_corpus, tmp_path):
        root, train_records, _ = tiny_corpus
        cfg = tiny_train_cfg(epochs=2)
        train(train_records, cfg, TINY_ENC, root, tmp_path / "run")
        with open(tmp_path / "run" / "metrics.csv") as fh:
            reader = csv.DictReader(fh)
            assert reader.fieldnames == ["step", "epoch", "lr", "loss", "clap",
                                         "dwd", "exp_tau"]
            rows = list(reader)
        assert len(rows) == 2 * (8 // 3)

    def test_batch_too_large_rejected(self, tiny_corpus, tmp_path):
        root, train_records, _ = tiny_corpus
        cfg = tiny_train_cfg(batch_classes=50)
        with pytest.raises(TrainingError, match="cannot fill a batch"):
            train(train_records, cfg, TINY_ENC, root, tmp_path / "run")

    def test_config_validation(self):
        with pytest.raises(TrainingError):
            tiny_train_cfg(warmup_frac=0.0)
        with pytest.raises(TrainingError):
            tiny_train_cfg(positives_per_class=1)
