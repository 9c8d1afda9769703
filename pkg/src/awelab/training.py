"""Optimization: batch sampling, AdamW, one-cycle schedule, the epoch loop.

The loop is deterministic end to end: batch composition at (epoch, step)
is drawn from a fresh generator seeded with (seed, epoch, step), so two
runs with the same seed produce byte-identical checkpoints and metrics,
and a run resumed from an epoch checkpoint continues the uninterrupted
trajectory exactly.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from awelab.encoders import (
    EncoderConfig,
    encode_audio,
    encode_text,
    encoder_backward,
    init_params,
    load_params,
    save_params,
    zeros_like_params,
)
from awelab.frontend import ManifestRecord, read_features
from awelab.losses import LossWeights, tau_scale, total_loss_with_grad
from awelab.synthdata import phonemes_for_word


class TrainingError(RuntimeError):
    """Raised for unusable corpora or diverging optimization."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings (defaults follow the training recipe)."""

    batch_classes: int = 128
    positives_per_class: int = 2
    lr_max: float = 1e-3
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    epochs: int = 30
    warmup_frac: float = 0.20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    dwd_mode: str = "sum"

    def __post_init__(self):
        if not 0.0 < self.warmup_frac < 1.0:
            raise TrainingError("warmup_frac must be in (0, 1)")
        if self.batch_classes < 2 or self.positives_per_class < 2:
            raise TrainingError("need at least 2 classes and 2 positives per batch")


@dataclass
class OptState:
    """Per-parameter Adam moments plus the shared step counter."""

    m: dict
    v: dict
    t: int = 0


def init_opt_state(params: dict) -> OptState:
    return OptState(m=zeros_like_params(params), v=zeros_like_params(params), t=0)


@dataclass
class BatchSample:
    classes: list[str]
    instance_ids: list[list[str]]
    texts: list[np.ndarray]
    flagged: bool = False


def sample_batch(records: list[ManifestRecord], n_classes: int, n_instances: int,
                 rng: np.random.Generator, lexicon=phonemes_for_word) -> BatchSample:
    """Draw n_classes distinct words with n_instances segments each.

    Words are drawn uniformly without replacement from the train split;
    instances likewise within each word. A word with fewer than
    n_instances segments is sampled with replacement and the batch is
    flagged. ``lexicon`` maps a word label to its phoneme-id sequence.
    """
    by_word: dict[str, list[str]] = {}
    for r in records:
        if r.split == "train":
            by_word.setdefault(r.word, []).append(r.id)
    eligible = sorted(by_word)
    if len(eligible) < n_classes:
        raise TrainingError(
            f"only {len(eligible)} eligible classes, need {n_classes}"
        )
    words = [eligible[i] for i in rng.choice(len(eligible), n_classes, replace=False)]
    instance_ids = []
    flagged = False
    for w in words:
        pool = sorted(by_word[w])
        if len(pool) < n_instances:
            flagged = True
            picks = rng.choice(len(pool), n_instances, replace=True)
        else:
            picks = rng.choice(len(pool), n_instances, replace=False)
        instance_ids.append([pool[i] for i in picks])
    texts = [np.asarray(lexicon(w), dtype=np.int64) for w in words]
    return BatchSample(classes=words, instance_ids=instance_ids, texts=texts,
                       flagged=flagged)


def onecycle_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """One-cycle schedule: cosine warmup to lr_max, cosine anneal to the floor.

    Starts at lr_max/25, peaks at step ceil(warmup_frac * total), and ends
    at lr_max/10000.
    """
    if not 0 <= step < total_steps:
        raise TrainingError(f"step {step} outside [0, {total_steps})")
    lr_start = cfg.lr_max / 25.0
    lr_final = cfg.lr_max / 10000.0
    if total_steps == 1:
        return cfg.lr_max
    peak = math.ceil(cfg.warmup_frac * total_steps)
    peak = min(max(peak, 1), total_steps - 1)
    if step <= peak:
        frac = step / peak
        return lr_start + (cfg.lr_max - lr_start) * 0.5 * (1.0 - math.cos(math.pi * frac))
    frac = (step - peak) / (total_steps - 1 - peak)
    return lr_final + (cfg.lr_max - lr_final) * 0.5 * (1.0 + math.cos(math.pi * frac))


def global_grad_norm(grads: dict) -> float:
    total = 0.0
    for arr in grads.values():
        total += float((np.asarray(arr) ** 2).sum())
    return math.sqrt(total)


def clip_global_norm(grads: dict, clip_norm: float) -> dict:
    """Scale all gradients so their joint L2 norm is at most clip_norm."""
    norm = global_grad_norm(grads)
    if not math.isfinite(norm):
        raise TrainingError("non-finite gradient")
    if norm <= clip_norm:
        return grads
    scale = clip_norm / norm
    return {name: arr * scale for name, arr in grads.items()}


def adamw_step(params: dict, grads: dict, state: OptState, lr: float,
               cfg: TrainConfig) -> tuple[dict, OptState]:
    """One decoupled-weight-decay Adam update; returns fresh params and state.

    Decay applies only to matrices (ndim >= 2); biases and the temperature
    scalar are exempt.
    """
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name in params:
        p = np.asarray(params[name], dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise TrainingError(f"gradient shape mismatch for {name}")
        if p.ndim >= 2 and cfg.weight_decay != 0.0:
            p = p - lr * cfg.weight_decay * p
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g**2
        new_params[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, OptState(m=new_m, v=new_v, t=t)


METRICS_HEADER = ["step", "epoch", "lr", "loss", "clap", "dwd", "exp_tau"]


def train(records: list[ManifestRecord], train_cfg: TrainConfig,
          enc_cfg: EncoderConfig, root, out_dir, resume_epoch: int | None = None,
          lexicon=phonemes_for_word) -> tuple[dict, list[dict]]:
    """Run the training loop over a train manifest.

    Saves a checkpoint plus optimizer state after every epoch, a final
    ``checkpoint.awep``, and ``metrics.csv`` with one row per step.
    ``resume_epoch`` restarts after that epoch's saved state and reproduces
    the uninterrupted run exactly. Returns the final params and metric rows.
    """
    root = Path(root)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_records = [r for r in records if r.split == "train"]
    n_classes_total = len({r.word for r in train_records})
    steps_per_epoch = n_classes_total // train_cfg.batch_classes
    if steps_per_epoch < 1:
        raise TrainingError(
            f"{n_classes_total} train classes cannot fill a batch of "
            f"{train_cfg.batch_classes}"
        )
    total_steps = steps_per_epoch * train_cfg.epochs

    if resume_epoch is None:
        params = init_params(enc_cfg, seed=train_cfg.seed)
        opt = init_opt_state(params)
        start_epoch = 0
    else:
        params = load_params(out_dir / f"checkpoint_epoch{resume_epoch:03d}.awep")
        opt = _load_opt_state(out_dir / f"optstate_epoch{resume_epoch:03d}.awep", params)
        start_epoch = resume_epoch + 1

    feature_cache: dict[str, np.ndarray] = {}

    def features_of(seg_id: str, path: str) -> np.ndarray:
        if seg_id not in feature_cache:
            feature_cache[seg_id] = read_features(root / path).frames.astype(np.float64)
        return feature_cache[seg_id]

    paths = {r.id: r.feature_path for r in train_records}
    n, m = train_cfg.batch_classes, train_cfg.positives_per_class
    rows: list[dict] = []
    flagged_any = False

    for epoch in range(start_epoch, train_cfg.epochs):
        for step in range(steps_per_epoch):
            global_step = epoch * steps_per_epoch + step
            rng = np.random.default_rng([train_cfg.seed, epoch, step])
            batch = sample_batch(train_records, n, m, rng, lexicon=lexicon)
            flagged_any = flagged_any or batch.flagged

            audio_items = [
                features_of(seg_id, paths[seg_id])
                for per_class in batch.instance_ids
                for seg_id in per_class
            ]
            e_audio = encode_audio(params, enc_cfg, audio_items).vectors
            e_text = encode_text(params, enc_cfg, batch.texts).vectors
            instances = e_audio.reshape(n, m, enc_cfg.embed_dim)

            tau = float(params["tau"])
            loss, g_text, g_audio, g_tau, (clap_val, dwd_val) = total_loss_with_grad(
                e_text, instances, tau, train_cfg.weights, dwd_mode=train_cfg.dwd_mode
            )
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss!r} at epoch {epoch} step {step}"
                )

            grads = encoder_backward(
                params, enc_cfg, audio_items,
                g_audio.reshape(n * m, enc_cfg.embed_dim),
            )
            text_grads = encoder_backward(params, enc_cfg, batch.texts, g_text)
            for name in grads:
                grads[name] += text_grads[name]
            grads["tau"] = grads["tau"] + g_tau

            grads = clip_global_norm(grads, train_cfg.clip_norm)
            lr = onecycle_lr(global_step, total_steps, train_cfg)
            params, opt = adamw_step(params, grads, opt, lr, train_cfg)

            rows.append({
                "step": global_step, "epoch": epoch, "lr": lr, "loss": loss,
                "clap": clap_val, "dwd": dwd_val,
                "exp_tau": tau_scale(float(params["tau"])),
            })
        save_params(params, out_dir / f"checkpoint_epoch{epoch:03d}.awep")
        _save_opt_state(opt, out_dir / f"optstate_epoch{epoch:03d}.awep")

    if flagged_any:
        warnings.warn("some batches reused instances of under-filled classes",
                      stacklevel=2)
    save_params(params, out_dir / "checkpoint.awep")
    mode = "w" if resume_epoch is None else "a"
    with open(out_dir / "metrics.csv", mode, newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_HEADER)
        if resume_epoch is None:
            writer.writeheader()
        writer.writerows(
            {k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()}
            for row in rows
        )
    return params, rows


def _save_opt_state(opt: OptState, path) -> None:
    blob = {f"m.{k}": v for k, v in opt.m.items()}
    blob.update({f"v.{k}": v for k, v in opt.v.items()})
    blob["t"] = np.array(float(opt.t))
    save_params(blob, path)


def _load_opt_state(path, params: dict) -> OptState:
    blob = load_params(path)
    m = {k: blob[f"m.{k}"] for k in params}
    v = {k: blob[f"v.{k}"] for k in params}
    return OptState(m=m, v=v, t=int(float(blob["t"])))
