"""Command-line drivers.

One executable with subcommands covering the whole workflow:

  gen-synth    write a synthetic word corpus
  train        train the dual encoders on a manifest
  embed        dump segment and keyword embeddings for a manifest
  eval-wd      word-discrimination APs from an embedding dump
  eval-std     query-by-example search over windowed utterances
  eval-kws     keyword search over windowed utterances
  grad-check   finite-difference verification of all gradients
  sweep-alpha  train and evaluate a grid of loss-weight settings

Settings come from a JSON config file with flat dotted keys (for example
``train.lr_max``); command-line flags override the file, which overrides
the built-in defaults. Unknown config keys are rejected. Exit codes:
0 success, 1 failed check or metric, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from awelab.encoders import EncoderConfig, encode_audio, encode_text, load_params
from awelab.evaluation import (
    DEFAULT_WINDOWS,
    eval_kws,
    eval_std,
    eval_wd,
    iv_oov_split,
    load_embeddings,
    save_embeddings,
)
from awelab.frontend import read_features, read_manifest
from awelab.gradcheck import run_gradient_suite
from awelab.losses import LossWeights
from awelab.synthdata import SynthConfig, gen_corpus, phonemes_for_word
from awelab.training import TrainConfig, train


class ConfigError(ValueError):
    pass


class CheckFailure(RuntimeError):
    pass


def _pair(cast):
    def convert(value):
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ConfigError(f"expected a [lo, hi] pair, got {value!r}")
        return (cast(value[0]), cast(value[1]))

    return convert


def _float_list(value):
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"expected a list of numbers, got {value!r}")
    return [float(v) for v in value]


CONFIG_SCHEMA = {
    "synth.n_classes": int,
    "synth.n_oov_classes": int,
    "synth.instances_per_class": int,
    "synth.n_speakers": int,
    "synth.feat_dim": int,
    "synth.proto_len_range": _pair(int),
    "synth.warp_range": _pair(float),
    "synth.noise_sigma": float,
    "synth.speaker_sigma": float,
    "synth.phoneme_vocab_size": int,
    "synth.n_utterances": int,
    "synth.words_per_utterance": _pair(int),
    "synth.seed": int,
    "encoder.kind": str,
    "encoder.hidden": int,
    "encoder.layers": int,
    "encoder.bidirectional": bool,
    "encoder.embed_dim": int,
    "encoder.feat_dim": int,
    "encoder.text_vocab": int,
    "encoder.text_embed_dim": int,
    "train.batch_classes": int,
    "train.positives_per_class": int,
    "train.lr_max": float,
    "train.weight_decay": float,
    "train.clip_norm": float,
    "train.epochs": int,
    "train.warmup_frac": float,
    "train.beta1": float,
    "train.beta2": float,
    "train.eps": float,
    "train.seed": int,
    "train.alpha1": float,
    "train.alpha2": float,
    "train.dwd_mode": str,
    "eval.windows": _float_list,
    "eval.hop_frac": float,
}


def load_config(path) -> dict:
    """Read a flat dotted-key JSON config, rejecting unknown keys."""
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    flat = {}
    for key, value in raw.items():
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            flat[key] = CONFIG_SCHEMA[key](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    return flat


def _section(flat: dict, prefix: str) -> dict:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in flat.items() if k.startswith(prefix + ".")}


def synth_config_from(flat: dict) -> SynthConfig:
    try:
        return SynthConfig(**_section(flat, "synth"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad synth config: {exc}") from exc


def encoder_config_from(flat: dict, feat_dim: int | None = None) -> EncoderConfig:
    kwargs = _section(flat, "encoder")
    if feat_dim is not None and "feat_dim" not in kwargs:
        kwargs["feat_dim"] = feat_dim
    try:
        return EncoderConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad encoder config: {exc}") from exc


def train_config_from(flat: dict) -> TrainConfig:
    kwargs = _section(flat, "train")
    alpha1 = kwargs.pop("alpha1", None)
    alpha2 = kwargs.pop("alpha2", None)
    if alpha1 is not None or alpha2 is not None:
        kwargs["weights"] = LossWeights(
            alpha1=0.1 if alpha1 is None else alpha1,
            alpha2=1.0 if alpha2 is None else alpha2,
        )
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError, RuntimeError) as exc:
        raise ConfigError(f"bad train config: {exc}") from exc


def _detect_feat_dim(records, root) -> int:
    return read_features(Path(root) / records[0].feature_path).n_bins


def _write_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_model(model_path):
    """A model is a run directory or a checkpoint file with a sidecar config."""
    model_path = Path(model_path)
    if model_path.is_dir():
        ckpt = model_path / "checkpoint.awep"
        sidecar = model_path / "encoder.json"
    else:
        ckpt = model_path
        sidecar = model_path.parent / "encoder.json"
    if not ckpt.exists():
        raise ConfigError(f"checkpoint {ckpt} does not exist")
    if not sidecar.exists():
        raise ConfigError(f"missing encoder sidecar {sidecar}")
    with open(sidecar, "r", encoding="utf-8") as fh:
        enc_cfg = EncoderConfig(**json.load(fh))
    return load_params(ckpt), enc_cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_synth(args) -> int:
    cfg = synth_config_from(load_config(args.config))
    train_recs, test_recs = gen_corpus(cfg, args.out_dir)
    words = {r.word for r in train_recs} | {r.word for r in test_recs}
    print(f"wrote corpus to {args.out_dir}: {len(words)} classes, "
          f"{len(train_recs)} train / {len(test_recs)} test instances")
    return 0


def cmd_train(args) -> int:
    flat = load_config(args.config)
    for key, value in (("train.alpha1", args.alpha1), ("train.alpha2", args.alpha2),
                       ("train.seed", args.seed), ("train.epochs", args.epochs)):
        if value is not None:
            flat[key] = CONFIG_SCHEMA[key](value)
    records = read_manifest(args.manifest)
    root = Path(args.manifest).parent
    enc_cfg = encoder_config_from(flat, feat_dim=_detect_feat_dim(records, root))
    train_cfg = train_config_from(flat)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(asdict(enc_cfg), out_dir / "encoder.json")
    params, rows = train(records, train_cfg, enc_cfg, root, out_dir,
                         resume_epoch=args.resume)
    print(f"trained {train_cfg.epochs} epochs, {len(rows)} steps logged; "
          f"final loss {rows[-1]['loss']:.6f}; checkpoint in {out_dir}")
    return 0


def cmd_embed(args) -> int:
    params, enc_cfg = _load_model(args.model)
    records = read_manifest(args.manifest)
    root = Path(args.manifest).parent
    table = {}
    feats = [read_features(root / r.feature_path) for r in records]
    audio = encode_audio(params, enc_cfg, feats, ids=[r.id for r in records])
    for seg_id, vec in zip(audio.row_ids, audio.vectors):
        table[seg_id] = vec
    words = sorted({r.word for r in records})
    texts = [np.asarray(phonemes_for_word(w), dtype=np.int64) for w in words]
    text_embs = encode_text(params, enc_cfg, texts)
    for word, vec in zip(words, text_embs.vectors):
        table["text:" + word] = vec
    save_embeddings(table, args.out)
    print(f"wrote {len(table)} embeddings ({len(records)} segments, "
          f"{len(words)} keywords) to {args.out}")
    return 0


def cmd_eval_wd(args) -> int:
    dump = load_embeddings(args.embeddings)
    audio = {k: v for k, v in dump.items() if not k.startswith("text:")}
    text = {k[len("text:"):]: v for k, v in dump.items() if k.startswith("text:")}
    train_records = read_manifest(args.manifests[0])
    test_records = read_manifest(args.manifests[1])
    report = eval_wd(audio, test_records, train_records,
                     text_embeddings=text or None, workers=args.threads)
    _write_json(report.to_dict(), args.out)
    for key in ("iv", "oov"):
        acoustic = report.ap.get(key)
        cross = report.ap_cross.get(key)
        print(f"{key}: acoustic AP = {_fmt(acoustic)}, cross AP = {_fmt(cross)}")
    return 0


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def _windowed_eval(args, task: str) -> int:
    params, enc_cfg = _load_model(args.model)
    corpus = Path(args.corpus)
    train_records = read_manifest(corpus / "train.jsonl")
    test_records = read_manifest(corpus / "test.jsonl")
    search_path = corpus / "search.jsonl"
    search_records = (
        read_manifest(search_path) if search_path.exists() else test_records
    )
    paths = {r.feature_path for r in search_records} | {
        r.feature_path for r in test_records
    }
    file_features = {p: read_features(corpus / p) for p in sorted(paths)}
    vocab = iv_oov_split(train_records, test_records)
    windows = [float(w) for w in args.windows]
    report = {"eer": {task: {}}, "counts": {}, "score_stats": {}}
    wanted = ("iv", "oov") if args.vocab == "both" else (args.vocab,)
    for cls in wanted:
        words = {w for w, c in vocab.items() if c == cls.upper()}
        if not words:
            continue
        if task == "std":
            queries = [r for r in test_records if r.word in words]
            result = eval_std(params, enc_cfg, queries, search_records,
                              file_features, windows=windows,
                              hop_frac=args.hop_frac)
        else:
            result = eval_kws(params, enc_cfg, words, phonemes_for_word,
                              search_records, file_features, windows=windows,
                              hop_frac=args.hop_frac)
        report["eer"][task][cls] = result["eer"]
        report["counts"][cls] = result["counts"]
        report["score_stats"][cls] = result["score_stats"]
        shown = ", ".join(f"{k}={v:.4f}" for k, v in result["eer"].items())
        print(f"{task} {cls}: EER {shown}")
    _write_json(report, args.out)
    return 0


def cmd_eval_std(args) -> int:
    return _windowed_eval(args, "std")


def cmd_eval_kws(args) -> int:
    return _windowed_eval(args, "kws")


def cmd_grad_check(args) -> int:
    result = run_gradient_suite(seeds=range(args.seed, args.seed + args.n_seeds))
    print(f"{len(result.checks)} gradient checks, max relative error "
          f"{result.max_err:.3e}")
    if not result.ok:
        for check in result.checks:
            if not check.ok:
                print(f"FAILED {check.name}: {check.max_err:.3e} >= {check.tol:.0e}",
                      file=sys.stderr)
        raise CheckFailure("gradient checks failed")
    return 0


DEFAULT_ALPHA_GRID = ((1.0, 0.1), (1.0, 0.5), (1.0, 1.0), (0.1, 1.0), (0.5, 0.1))


def _parse_grid(text: str):
    grid = []
    for part in text.split(","):
        a1, _, a2 = part.partition(":")
        try:
            grid.append((float(a1), float(a2)))
        except ValueError as exc:
            raise ConfigError(f"bad grid entry {part!r} (want a1:a2)") from exc
    return grid


def cmd_sweep_alpha(args) -> int:
    flat = load_config(args.config)
    if args.seed is not None:
        flat["train.seed"] = int(args.seed)
    grid = _parse_grid(args.grid) if args.grid else list(DEFAULT_ALPHA_GRID)
    corpus = Path(args.corpus)
    train_records = read_manifest(corpus / "train.jsonl")
    test_records = read_manifest(corpus / "test.jsonl")
    feat_dim = _detect_feat_dim(train_records, corpus)
    enc_cfg = encoder_config_from(flat, feat_dim=feat_dim)
    out_csv = Path(args.out)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for alpha1, alpha2 in grid:
        flat["train.alpha1"] = alpha1
        flat["train.alpha2"] = alpha2
        train_cfg = train_config_from(flat)
        run_dir = out_csv.parent / f"sweep_a1_{alpha1:g}_a2_{alpha2:g}"
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_json(asdict(enc_cfg), run_dir / "encoder.json")
        params, _ = train(train_records, train_cfg, enc_cfg, corpus, run_dir)
        feats = [read_features(corpus / r.feature_path) for r in test_records]
        audio = encode_audio(params, enc_cfg, feats, ids=[r.id for r in test_records])
        table = dict(zip(audio.row_ids, audio.vectors))
        report = eval_wd(table, test_records, train_records)
        rows.append({"alpha1": alpha1, "alpha2": alpha2,
                     "ap_iv": report.ap.get("iv"), "ap_oov": report.ap.get("oov")})
        print(f"alpha1={alpha1:g} alpha2={alpha2:g}: "
              f"AP iv={_fmt(rows[-1]['ap_iv'])} oov={_fmt(rows[-1]['ap_oov'])}")
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["alpha1", "alpha2", "ap_iv", "ap_oov"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)}-row sweep to {out_csv}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="awelab",
        description="Train and evaluate joint audio-text word embeddings.",
        epilog="Config precedence: built-in defaults < --config file < flags.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("gen-synth", formatter_class=fmt,
                       help="generate the synthetic word corpus")
    p.add_argument("--config", default=None, help="JSON config (synth.* keys)")
    p.add_argument("--out-dir", required=True, help="corpus output directory")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", formatter_class=fmt,
                       help="train the dual encoders")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--manifest", required=True, help="train manifest (JSONL)")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--alpha1", type=float, default=None,
                   help="cross-modal loss weight (default 0.1)")
    p.add_argument("--alpha2", type=float, default=None,
                   help="audio-audio loss weight (default 1.0)")
    p.add_argument("--seed", type=int, default=None, help="training seed")
    p.add_argument("--epochs", type=int, default=None,
                   help="override epoch count (default 30)")
    p.add_argument("--resume", type=int, default=None,
                   help="resume after this epoch's checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", formatter_class=fmt,
                       help="dump segment and keyword embeddings")
    p.add_argument("--model", required=True,
                   help="run directory or checkpoint file")
    p.add_argument("--manifest", required=True, help="manifest to embed")
    p.add_argument("--out", required=True, help="embedding dump path")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval-wd", formatter_class=fmt,
                       help="word-discrimination AP from an embedding dump")
    p.add_argument("--embeddings", required=True, help="embedding dump path")
    p.add_argument("--manifests", nargs=2, required=True,
                   metavar=("TRAIN", "TEST"), help="train and test manifests")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--threads", type=int, default=os.cpu_count(),
                   help="scoring parallelism")
    p.set_defaults(func=cmd_eval_wd)

    for name, desc in (("eval-std", "query-by-example search (spoken queries)"),
                       ("eval-kws", "keyword search (written queries)")):
        p = sub.add_parser(name, formatter_class=fmt, help=desc)
        p.add_argument("--model", required=True,
                       help="run directory or checkpoint file")
        p.add_argument("--corpus", required=True,
                       help="corpus directory (manifests + features)")
        p.add_argument("--windows", nargs="+", type=float,
                       default=list(DEFAULT_WINDOWS),
                       help="window lengths in seconds")
        p.add_argument("--hop-frac", type=float, default=0.5,
                       help="hop as a fraction of the window")
        p.add_argument("--vocab", choices=("iv", "oov", "both"), default="both",
                       help="vocabulary class to evaluate")
        p.add_argument("--out", required=True, help="report JSON path")
        p.add_argument("--threads", type=int, default=os.cpu_count(),
                       help="scoring parallelism")
        p.set_defaults(func=cmd_eval_std if name == "eval-std" else cmd_eval_kws)

    p = sub.add_parser("grad-check", formatter_class=fmt,
                       help="verify every gradient against finite differences")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--n-seeds", type=int, default=5, help="number of seeds")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("sweep-alpha", formatter_class=fmt,
                       help="train and evaluate a grid of loss weights")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--grid", default=None,
                   help="comma-separated a1:a2 pairs "
                        "(default: the five standard settings)")
    p.add_argument("--seed", type=int, default=None, help="training seed")
    p.add_argument("--out", required=True, help="sweep CSV path")
    p.set_defaults(func=cmd_sweep_alpha)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
