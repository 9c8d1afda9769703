import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from awelab.cli import main

TINY_CONFIG = {
    "synth.n_classes": 10, "synth.n_oov_classes": 2,
    "synth.instances_per_class": 8, "synth.n_speakers": 3,
    "synth.feat_dim": 6, "synth.proto_len_range": [20, 30],
    "synth.noise_sigma": 0.8, "synth.speaker_sigma": 1.5,
    "synth.phoneme_vocab_size": 36, "synth.n_utterances": 10,
    "synth.seed": 7,
    "encoder.kind": "pooled", "encoder.hidden": 8, "encoder.layers": 1,
    "encoder.bidirectional": False, "encoder.embed_dim": 6,
    "encoder.text_vocab": 36, "encoder.text_embed_dim": 4,
    "train.batch_classes": 4, "train.positives_per_class": 2,
    "train.epochs": 4, "train.seed": 3,
}


def write_config(tmp_path, **overrides):
    cfg = dict(TINY_CONFIG)
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Corpus + trained run + embeddings, built once through the CLI."""
    root = tmp_path_factory.mktemp("cli_ws")
    cfg = write_config(root)
    assert main(["gen-synth", "--config", str(cfg),
                 "--out-dir", str(root / "corpus")]) == 0
    assert main(["train", "--config", str(cfg),
                 "--manifest", str(root / "corpus" / "train.jsonl"),
                 "--out", str(root / "run")]) == 0
    assert main(["embed", "--model", str(root / "run"),
                 "--manifest", str(root / "corpus" / "test.jsonl"),
                 "--out", str(root / "test.emb")]) == 0
    return root, cfg


class TestGenSynth:
    def test_outputs_exist(self, workspace):
        root, _ = workspace
        corpus = root / "corpus"
        assert (corpus / "train.jsonl").exists()
        assert (corpus / "test.jsonl").exists()
        assert (corpus / "search.jsonl").exists()
        assert any((corpus / "features").glob("*.awe"))
        assert any((corpus / "utterances").glob("*.awe"))

    def test_rerun_identical_tree(self, workspace, tmp_path):
        root, cfg = workspace
        assert main(["gen-synth", "--config", str(cfg),
                     "--out-dir", str(tmp_path / "again")]) == 0
        assert tree_digest(tmp_path / "again") == tree_digest(root / "corpus")

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"synth.n_clases": 5}))
        assert main(["gen-synth", "--config", str(bad),
                     "--out-dir", str(tmp_path / "x")]) == 2
        assert "synth.n_clases" in capsys.readouterr().err


class TestTrain:
    def test_thirty_epochs_complete(self, workspace, tmp_path, capsys):
        root, _ = workspace
        cfg = write_config(tmp_path)
        assert main(["train", "--config", str(cfg), "--epochs", "30",
                     "--manifest", str(root / "corpus" / "train.jsonl"),
                     "--out", str(tmp_path / "run30")]) == 0
        assert "trained 30 epochs" in capsys.readouterr().out
        assert (tmp_path / "run30" / "checkpoint.awep").exists()
        assert (tmp_path / "run30" / "metrics.csv").exists()

    def test_alpha_overrides(self, workspace, tmp_path):
        root, cfg = workspace
        assert main(["train", "--config", str(cfg),
                     "--alpha1", "0.1", "--alpha2", "1.0",
                     "--manifest", str(root / "corpus" / "train.jsonl"),
                     "--out", str(tmp_path / "runA")]) == 0
        assert main(["train", "--config", str(cfg),
                     "--alpha1", "1.0", "--alpha2", "0.0",
                     "--manifest", str(root / "corpus" / "train.jsonl"),
                     "--out", str(tmp_path / "runB")]) == 0
        a = (tmp_path / "runA" / "metrics.csv").read_bytes()
        b = (tmp_path / "runB" / "metrics.csv").read_bytes()
        assert a != b

    def test_same_seed_identical_checkpoint(self, workspace, tmp_path):
        root, cfg = workspace
        for name in ("r1", "r2"):
            assert main(["train", "--config", str(cfg),
                         "--manifest", str(root / "corpus" / "train.jsonl"),
                         "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "r1" / "checkpoint.awep").read_bytes() == \
            (tmp_path / "r2" / "checkpoint.awep").read_bytes()

    def test_resume_flag(self, workspace, tmp_path):
        root, cfg = workspace
        out = tmp_path / "resumable"
        assert main(["train", "--config", str(cfg),
                     "--manifest", str(root / "corpus" / "train.jsonl"),
                     "--out", str(out)]) == 0
        full_ckpt = (out / "checkpoint.awep").read_bytes()
        assert main(["train", "--config", str(cfg), "--resume", "1",
                     "--manifest", str(root / "corpus" / "train.jsonl"),
                     "--out", str(out)]) == 0
        assert (out / "checkpoint.awep").read_bytes() == full_ckpt


class TestEmbedAndEvalWd:
    def test_report_contents(self, workspace, tmp_path):
        root, _ = workspace
        report_path = tmp_path / "report.json"
        assert main(["eval-wd", "--embeddings", str(root / "test.emb"),
                     "--manifests", str(root / "corpus" / "train.jsonl"),
                     str(root / "corpus" / "test.jsonl"),
                     "--out", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert "iv" in report["ap"] and "oov" in report["ap"]
        assert 0.0 <= report["ap"]["iv"] <= 1.0
        assert "iv" in report["ap_cross"]

    def test_idempotent_report_bytes(self, workspace, tmp_path):
        root, _ = workspace
        outs = []
        for name in ("rep1.json", "rep2.json"):
            path = tmp_path / name
            assert main(["eval-wd", "--embeddings", str(root / "test.emb"),
                         "--manifests", str(root / "corpus" / "train.jsonl"),
                         str(root / "corpus" / "test.jsonl"),
                         "--out", str(path)]) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_embedding_dump_loadable(self, workspace):
        root, _ = workspace
        from awelab.evaluation import load_embeddings
        table = load_embeddings(root / "test.emb")
        text_ids = [k for k in table if k.startswith("text:")]
        assert len(text_ids) == 10  # every word gets a keyword embedding
        dims = {v.shape for v in table.values()}
        assert dims == {(6,)}

    def test_missing_checkpoint_exit_2(self, workspace, tmp_path):
        assert main(["embed", "--model", str(tmp_path / "nope"),
                     "--manifest", "whatever.jsonl",
                     "--out", str(tmp_path / "x.emb")]) == 2


class TestWindowedCommands:
    @pytest.mark.parametrize("cmd,task", [("eval-std", "std"), ("eval-kws", "kws")])
    def test_single_window_report(self, workspace, tmp_path, cmd, task):
        root, _ = workspace
        out = tmp_path / f"{task}.json"
        assert main([cmd, "--model", str(root / "run"),
                     "--corpus", str(root / "corpus"),
                     "--windows", "0.3", "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert set(report["eer"][task]["iv"]) == {"aligned", "0.3"}
        assert set(report["eer"][task]["oov"]) == {"aligned", "0.3"}
        for window, value in report["eer"][task]["iv"].items():
            assert 0.0 <= value <= 1.0

    def test_vocab_filter(self, workspace, tmp_path):
        root, _ = workspace
        out = tmp_path / "std_iv.json"
        assert main(["eval-std", "--model", str(root / "run"),
                     "--corpus", str(root / "corpus"),
                     "--windows", "0.3", "--vocab", "iv",
                     "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert "iv" in report["eer"]["std"]
        assert "oov" not in report["eer"]["std"]


class TestGradCheckCommand:
    def test_passes_and_prints_error(self, capsys):
        assert main(["grad-check", "--seed", "0", "--n-seeds", "1"]) == 0
        out = capsys.readouterr().out
        assert "max relative error" in out


class TestSweepAlpha:
    def test_two_point_grid(self, workspace, tmp_path):
        root, cfg = workspace
        out = tmp_path / "sweep.csv"
        assert main(["sweep-alpha", "--config", str(cfg),
                     "--corpus", str(root / "corpus"),
                     "--grid", "1.0:0.0,0.1:1.0",
                     "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "alpha1,alpha2,ap_iv,ap_oov"
        assert len(lines) == 3

    def test_bad_grid_exit_2(self, workspace, tmp_path):
        root, cfg = workspace
        assert main(["sweep-alpha", "--config", str(cfg),
                     "--corpus", str(root / "corpus"),
                     "--grid", "nonsense",
                     "--out", str(tmp_path / "s.csv")]) == 2


class TestHelp:
    @pytest.mark.parametrize("cmd", ["gen-synth", "train", "embed", "eval-wd",
                                     "eval-std", "eval-kws", "grad-check",
                                     "sweep-alpha"])
    def test_subcommand_help(self, cmd, capsys):
        with pytest.raises(SystemExit) as exc:
            main([cmd, "--help"])
        assert exc.value.code == 0
        assert "--" in capsys.readouterr().out

    def test_windows_defaults_shown(self, capsys):
        with pytest.raises(SystemExit):
            main(["eval-std", "--help"])
        out = capsys.readouterr().out
        assert "0.2" in out and "0.6" in out
