"""Finite-difference verification of every analytic gradient.

Two layers of checking:

* loss level - each objective's gradient with respect to its embedding
  inputs, against central differences with h = 1e-5, tolerance 1e-6;
* pipeline level - the gradient of the joint objective with respect to
  every encoder parameter (both encoder kinds, both modalities, and the
  temperature), against central differences with h = 1e-5, tolerance 1e-4.

Fixtures are tiny (3 classes x 2 instances x 5 dims, hidden width 4) so
the whole suite runs in seconds. Used by the ``grad-check`` command and
the acceptance tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from awelab.encoders import EncoderConfig, encode_audio, encode_text, encoder_backward, init_params
from awelab.losses import (
    LossWeights,
    cae_recon_with_grad,
    clap_loss_multi_with_grad,
    dwd_loss_with_grad,
    multiview_hinge_with_grad,
    ntxent_with_grad,
    siamese_hinge_with_grad,
    total_loss_with_grad,
)

LOSS_TOL = 1e-6
PIPELINE_TOL = 1e-4
FD_STEP = 1e-5

N_CLASSES, N_INSTANCES, EMBED_DIM = 3, 2, 5

POOLED_CFG = EncoderConfig(kind="pooled", hidden=4, layers=1, bidirectional=False,
                           embed_dim=EMBED_DIM, feat_dim=6, text_vocab=7,
                           text_embed_dim=3)
RECURRENT_CFG = EncoderConfig(kind="recurrent", hidden=4, layers=1,
                              bidirectional=False, embed_dim=EMBED_DIM,
                              feat_dim=6, text_vocab=7, text_embed_dim=3)


@dataclass
class CheckResult:
    name: str
    max_err: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_err < self.tol


@dataclass
class SuiteResult:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def max_err(self) -> float:
        return max(c.max_err for c in self.checks)

    def add(self, name, analytic, fd, tol):
        self.checks.append(CheckResult(name=name, max_err=_err(analytic, fd), tol=tol))


def _err(analytic, reference) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.abs(reference))
    return float(np.max(np.abs(analytic - reference) / denom))


def _fd(fn, x, h=FD_STEP):
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_g = grad.reshape(-1)
    flat_x = x.reshape(-1)
    for k in range(flat_x.size):
        orig = flat_x[k]
        flat_x[k] = orig + h
        up = fn(x)
        flat_x[k] = orig - h
        down = fn(x)
        flat_x[k] = orig
        flat_g[k] = (up - down) / (2 * h)
    return grad


def _unit(rng, *shape):
    v = rng.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def check_losses(seed: int, result: SuiteResult) -> None:
    """Gradients of every objective w.r.t. its embedding inputs."""
    rng = np.random.default_rng(seed)
    e_text = _unit(rng, N_CLASSES, EMBED_DIM)
    audio = _unit(rng, N_CLASSES, N_INSTANCES, EMBED_DIM)
    tau = float(rng.uniform(0.0, 1.5))
    tag = f"seed{seed}"

    _, g_t, g_a, g_tau = clap_loss_multi_with_grad(e_text, audio, tau)
    from awelab.losses import clap_loss_multi, dwd_loss, total_loss
    result.add(f"clap/text {tag}", g_t,
               _fd(lambda x: clap_loss_multi(x, audio, tau), e_text), LOSS_TOL)
    result.add(f"clap/audio {tag}", g_a,
               _fd(lambda x: clap_loss_multi(e_text, x, tau), audio), LOSS_TOL)
    result.add(f"clap/tau {tag}", np.array(g_tau),
               _fd(lambda x: clap_loss_multi(e_text, audio, float(x)), np.array(tau)),
               LOSS_TOL)

    (_, _, _), g_sm, g_cc = dwd_loss_with_grad(audio)
    result.add(f"dwd/softmax {tag}", g_sm,
               _fd(lambda x: dwd_loss(x)[0], audio), LOSS_TOL)
    result.add(f"dwd/centroid {tag}", g_cc,
               _fd(lambda x: dwd_loss(x)[1], audio), LOSS_TOL)
    result.add(f"dwd/sum {tag}", g_sm + g_cc,
               _fd(lambda x: dwd_loss(x)[2], audio), LOSS_TOL)

    weights = LossWeights(alpha1=0.1, alpha2=1.0)
    _, g_t, g_a, g_tau, _ = total_loss_with_grad(e_text, audio, tau, weights)
    result.add(f"total/text {tag}", g_t,
               _fd(lambda x: total_loss(x, audio, tau, weights), e_text), LOSS_TOL)
    result.add(f"total/audio {tag}", g_a,
               _fd(lambda x: total_loss(e_text, x, tau, weights), audio), LOSS_TOL)
    result.add(f"total/tau {tag}", np.array(g_tau),
               _fd(lambda x: total_loss(e_text, audio, float(x), weights),
                   np.array(tau)), LOSS_TOL)

    a, p, n = _unit(rng, 3, EMBED_DIM)
    from awelab.losses import cae_recon, multiview_hinge, ntxent, siamese_hinge
    _, ga, gp, gn = siamese_hinge_with_grad(a, p, n, margin=0.9)
    result.add(f"hinge/anchor {tag}", ga,
               _fd(lambda x: siamese_hinge(x, p, n, 0.9), a), LOSS_TOL)
    result.add(f"hinge/pos {tag}", gp,
               _fd(lambda x: siamese_hinge(a, x, n, 0.9), p), LOSS_TOL)
    result.add(f"hinge/neg {tag}", gn,
               _fd(lambda x: siamese_hinge(a, p, x, 0.9), n), LOSS_TOL)

    _, ga, gp, gn = multiview_hinge_with_grad(a, p, n, margin=0.9)
    result.add(f"multiview/anchor {tag}", ga,
               _fd(lambda x: multiview_hinge(x, p, n, 0.9), a), LOSS_TOL)

    negs = _unit(rng, 2, EMBED_DIM)
    ntx_tau = 0.5
    _, ga, gp, gns = ntxent_with_grad(a, p, negs, ntx_tau)
    result.add(f"ntxent/anchor {tag}", ga,
               _fd(lambda x: ntxent(x, p, negs, ntx_tau), a), LOSS_TOL)
    result.add(f"ntxent/pos {tag}", gp,
               _fd(lambda x: ntxent(a, x, negs, ntx_tau), p), LOSS_TOL)
    result.add(f"ntxent/negs {tag}", gns,
               _fd(lambda x: ntxent(a, p, x, ntx_tau), negs), LOSS_TOL)

    target = rng.normal(size=(4, 3))
    pred = rng.normal(size=(4, 3))
    _, gt, gp = cae_recon_with_grad(target, pred)
    result.add(f"cae/target {tag}", gt,
               _fd(lambda x: cae_recon(x, pred), target), LOSS_TOL)
    result.add(f"cae/pred {tag}", gp,
               _fd(lambda x: cae_recon(target, x), pred), LOSS_TOL)


def _pipeline_loss(params, cfg, audio_items, texts, weights):
    e_audio = encode_audio(params, cfg, audio_items).vectors
    e_text = encode_text(params, cfg, texts).vectors
    instances = e_audio.reshape(N_CLASSES, N_INSTANCES, cfg.embed_dim)
    loss, *_ = total_loss_with_grad(e_text, instances, float(params["tau"]), weights)
    return loss


def check_pipeline(seed: int, cfg: EncoderConfig, result: SuiteResult) -> None:
    """Gradient of the joint objective w.r.t. every parameter, by FD."""
    rng = np.random.default_rng(1000 + seed)
    params = init_params(cfg, seed=seed)
    audio_items = [
        rng.normal(size=(int(rng.integers(3, 6)), cfg.feat_dim))
        for _ in range(N_CLASSES * N_INSTANCES)
    ]
    texts = [rng.integers(0, cfg.text_vocab, size=int(rng.integers(2, 5)))
             for _ in range(N_CLASSES)]
    weights = LossWeights(alpha1=0.1, alpha2=1.0)

    e_audio = encode_audio(params, cfg, audio_items).vectors
    e_text = encode_text(params, cfg, texts).vectors
    instances = e_audio.reshape(N_CLASSES, N_INSTANCES, cfg.embed_dim)
    _, g_text, g_audio, g_tau, _ = total_loss_with_grad(
        e_text, instances, float(params["tau"]), weights
    )
    grads = encoder_backward(params, cfg, audio_items,
                             g_audio.reshape(-1, cfg.embed_dim))
    text_grads = encoder_backward(params, cfg, texts, g_text)
    for name in grads:
        grads[name] += text_grads[name]
    grads["tau"] = grads["tau"] + g_tau

    def loss_fn(_p=params):
        return _pipeline_loss(params, cfg, audio_items, texts, weights)

    tag = f"{cfg.kind} seed{seed}"
    for name in sorted(params):
        arr = params[name]
        fd = np.zeros_like(arr)
        flat_fd = fd.reshape(-1)
        flat_p = arr.reshape(-1)
        for k in range(flat_p.size):
            orig = flat_p[k]
            flat_p[k] = orig + FD_STEP
            up = loss_fn()
            flat_p[k] = orig - FD_STEP
            down = loss_fn()
            flat_p[k] = orig
            flat_fd[k] = (up - down) / (2 * FD_STEP)
        result.add(f"pipeline/{name} {tag}", grads[name], fd, PIPELINE_TOL)
        if name == "tau" and abs(float(grads["tau"])) <= 1e-12:
            result.checks.append(
                CheckResult(name=f"pipeline/tau-nonzero {tag}", max_err=1.0, tol=1e-6)
            )


def run_gradient_suite(seeds=range(5), kinds=("pooled", "recurrent")) -> SuiteResult:
    """Full verification: losses plus both encoder pipelines, several seeds."""
    result = SuiteResult()
    for seed in seeds:
        check_losses(seed, result)
    cfg_by_kind = {"pooled": POOLED_CFG, "recurrent": RECURRENT_CFG}
    for kind in kinds:
        for seed in seeds:
            check_pipeline(seed, cfg_by_kind[kind], result)
    return result
