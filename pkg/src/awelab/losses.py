"""Contrastive objectives over embedding batches, with exact gradients.

Two families live here:

* the joint objective used for training — a symmetric audio-text
  cross-entropy over a temperature-scaled similarity matrix, combined
  with an audio-audio word-discrimination loss built from leave-one-out
  class centroids;
* four classic baseline objectives (triplet cosine hinge, cross-modal
  hinge, temperature-scaled cross-entropy over sampled negatives, and
  sequence reconstruction error) kept for comparison experiments.

Everything is plain float64 numpy. Each loss has a ``*_with_grad``
companion returning the analytic gradient with respect to its embedding
inputs; the training loop chains those into the encoders. Gradients are
verified against central finite differences in the test suite.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

TAU_SCALE_MAX = 100.0


class LossError(ValueError):
    """Raised for shape mismatches and degenerate inputs."""


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights for the joint objective (cross-modal, audio-audio)."""

    alpha1: float = 0.1
    alpha2: float = 1.0

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise LossError("loss weights must be non-negative")
        if self.alpha1 == 0 and self.alpha2 == 0:
            raise LossError("at least one loss weight must be positive")


@dataclass(frozen=True)
class BaselineConfig:
    """Knobs for the baseline objectives."""

    margin: float = 0.5
    ntxent_tau: float = 0.07
    n_negatives: int = 5

    def __post_init__(self):
        if self.margin < 0:
            raise LossError("margin must be >= 0")
        if self.ntxent_tau <= 0:
            raise LossError("ntxent_tau must be positive")


@dataclass
class SimilarityMatrix:
    """Pairwise text-audio scores; ``scaled`` records whether exp(tau) was applied."""

    scores: np.ndarray
    scaled: bool = True


def tau_scale(tau: float) -> float:
    """exp(tau), clamped so runaway temperatures cannot blow up the logits."""
    return min(float(np.exp(tau)), TAU_SCALE_MAX)


def _tau_scale_grad(tau: float) -> float:
    s = float(np.exp(tau))
    return s if s < TAU_SCALE_MAX else 0.0


def similarity_matrix(e_text: np.ndarray, e_audio: np.ndarray, tau: float) -> SimilarityMatrix:
    """Scaled similarity scores C[i, j] = exp(tau) * (text_i . audio_j)."""
    e_text = np.asarray(e_text, dtype=np.float64)
    e_audio = np.asarray(e_audio, dtype=np.float64)
    if e_text.shape != e_audio.shape:
        raise LossError(
            f"embedding shape mismatch: text {e_text.shape} vs audio {e_audio.shape}"
        )
    return SimilarityMatrix(scores=tau_scale(tau) * (e_text @ e_audio.T), scaled=True)


def _log_softmax(scores: np.ndarray, axis: int) -> np.ndarray:
    shifted = scores - scores.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def clap_loss(sim) -> float:
    """Symmetric cross-entropy over a square similarity matrix.

    Row-wise softmax cross-entropy on the diagonal, averaged with its
    column-wise twin, each normalized by the batch size.
    """
    c = sim.scores if isinstance(sim, SimilarityMatrix) else np.asarray(sim, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise LossError(f"similarity matrix must be square, got {c.shape}")
    diag = np.arange(c.shape[0])
    loss_rows = -_log_softmax(c, axis=1)[diag, diag].mean()
    loss_cols = -_log_softmax(c, axis=0)[diag, diag].mean()
    return float(0.5 * (loss_rows + loss_cols))


def clap_loss_grad(sim) -> tuple[float, np.ndarray]:
    """clap_loss and its gradient with respect to the score matrix."""
    c = sim.scores if isinstance(sim, SimilarityMatrix) else np.asarray(sim, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise LossError(f"similarity matrix must be square, got {c.shape}")
    n = c.shape[0]
    p_rows = np.exp(_log_softmax(c, axis=1))
    p_cols = np.exp(_log_softmax(c, axis=0))
    eye = np.eye(n)
    grad = 0.5 * ((p_rows - eye) + (p_cols - eye)) / n
    return clap_loss(c), grad


def clap_loss_multi(e_text: np.ndarray, audio_instances: np.ndarray, tau: float) -> float:
    """Cross-modal loss averaged over the M instance slices of an N x M x D batch."""
    e_text = np.asarray(e_text, dtype=np.float64)
    audio = _as_instance_array(audio_instances)
    if audio.shape[0] != e_text.shape[0] or audio.shape[2] != e_text.shape[1]:
        raise LossError(
            f"text {e_text.shape} does not match audio instances {audio.shape}"
        )
    losses = [
        clap_loss(similarity_matrix(e_text, audio[:, m, :], tau))
        for m in range(audio.shape[1])
    ]
    return float(np.mean(losses))


def clap_loss_multi_with_grad(e_text, audio_instances, tau):
    """Returns (loss, d/d e_text, d/d audio, d/d tau)."""
    e_text = np.asarray(e_text, dtype=np.float64)
    audio = _as_instance_array(audio_instances)
    n, m_count, _ = audio.shape
    if audio.shape[0] != e_text.shape[0] or audio.shape[2] != e_text.shape[1]:
        raise LossError(
            f"text {e_text.shape} does not match audio instances {audio.shape}"
        )
    scale = tau_scale(tau)
    d_scale = _tau_scale_grad(tau)
    total = 0.0
    g_text = np.zeros_like(e_text)
    g_audio = np.zeros_like(audio)
    g_tau = 0.0
    for m in range(m_count):
        e_a = audio[:, m, :]
        raw = e_text @ e_a.T
        loss, g_c = clap_loss_grad(scale * raw)
        total += loss
        g_text += scale * (g_c @ e_a)
        g_audio[:, m, :] += scale * (g_c.T @ e_text)
        g_tau += d_scale * float((g_c * raw).sum())
    inv = 1.0 / m_count
    return total * inv, g_text * inv, g_audio * inv, g_tau * inv


def _as_instance_array(batch) -> np.ndarray:
    e = batch.embeddings if hasattr(batch, "embeddings") else batch
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 3:
        raise LossError(f"instance batch must be N x M x D, got shape {e.shape}")
    return e


@dataclass
class DwdBatch:
    """N word classes x M instances x D dims of unit-norm audio embeddings."""

    embeddings: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 3:
            raise LossError("embeddings must be N x M x D")
        n, m, _ = self.embeddings.shape
        if n < 2 or m < 2:
            raise LossError("need at least 2 classes and 2 instances per class")
        norms = np.linalg.norm(self.embeddings, axis=2)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise LossError("instance embeddings must be unit-norm")

    @property
    def n_classes(self) -> int:
        return self.embeddings.shape[0]

    @property
    def n_instances(self) -> int:
        return self.embeddings.shape[1]


def dwd_centroids(batch) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out and full class centroids.

    loo[j, i] is the mean of class j's instances with instance i removed;
    full[j] is the plain class mean.
    """
    e = _as_instance_array(batch)
    n, m, d = e.shape
    if m < 2:
        raise LossError("leave-one-out centroids need at least 2 instances per class")
    sums = e.sum(axis=1)
    full = sums / m
    loo = (sums[:, None, :] - e) / (m - 1)
    return loo, full


def dwd_similarities(batch, loo: np.ndarray, full: np.ndarray) -> np.ndarray:
    """Cosine scores S[j, i, k] of instance (j, i) against every class centroid.

    The own-class score uses the leave-one-out centroid; other classes use
    their full centroid. Centroids are not unit-norm, so the cosine divides
    by the explicit norms.
    """
    e = _as_instance_array(batch)
    n, m, _ = e.shape
    full_norms = np.linalg.norm(full, axis=1)
    loo_norms = np.linalg.norm(loo, axis=2)
    if np.any(full_norms == 0) or np.any(loo_norms == 0):
        raise LossError("degenerate centroid (zero norm)")
    e_norms = np.linalg.norm(e, axis=2)
    sims = np.einsum("jid,kd->jik", e, full) / (
        e_norms[:, :, None] * full_norms[None, None, :]
    )
    own = np.einsum("jid,jid->ji", e, loo) / (e_norms * loo_norms)
    j_idx = np.arange(n)
    sims[j_idx, :, j_idx] = own
    return sims


def dwd_loss(batch, mode: str = "sum") -> tuple[float, float, float]:
    """Word-discrimination loss over an N x M x D instance batch.

    Returns (softmax term, contrastive-centroid term, their sum). ``mode``
    picks the reduction over the N*M instances: "sum" (default) or "mean".
    """
    value, *_ = dwd_loss_with_grad(batch, mode=mode)
    return value


def dwd_loss_with_grad(batch, mode: str = "sum"):
    """As :func:`dwd_loss`, plus gradients of each term w.r.t. the embeddings.

    Returns ((l_sm, l_cc, l_aa), g_sm, g_cc) with g_* shaped like the batch;
    the gradient of the sum is g_sm + g_cc.
    """
    e = _as_instance_array(batch)
    n, m, d = e.shape
    if n < 2:
        raise LossError("need at least 2 classes (the cross-class max is empty)")
    if mode not in ("sum", "mean"):
        raise LossError(f"unknown reduction mode {mode!r}")
    loo, full = dwd_centroids(e)
    sims = dwd_similarities(e, loo, full)

    # -S[j,i,j] + logsumexp_k S[j,i,k] is exactly -log softmax at the own class
    log_p = _log_softmax(sims, axis=2)
    j_idx = np.arange(n)
    own = sims[j_idx, :, j_idx]  # S[j, i, j] as (n, m)
    l_sm = float(-log_p[j_idx, :, j_idx].sum())

    masked = sims.copy()
    masked[j_idx, :, j_idx] = -np.inf
    rival = masked.argmax(axis=2)  # (n, m) index of the strongest other class
    rival_score = np.take_along_axis(sims, rival[:, :, None], axis=2)[:, :, 0]
    l_cc = float(((1.0 - own) + rival_score).sum())

    # d loss / d S
    g_s_sm = np.exp(log_p)
    g_s_sm[j_idx, :, j_idx] -= 1.0
    g_s_cc = np.zeros_like(sims)
    g_s_cc[j_idx, :, j_idx] = -1.0
    np.put_along_axis(g_s_cc, rival[:, :, None], 1.0, axis=2)
    # rival is never the own class (masked with -inf), so the -1 slots survive

    g_sm = _dwd_sims_backward(e, loo, full, sims, g_s_sm)
    g_cc = _dwd_sims_backward(e, loo, full, sims, g_s_cc)

    if mode == "mean":
        inv = 1.0 / (n * m)
        l_sm *= inv
        l_cc *= inv
        g_sm = g_sm * inv
        g_cc = g_cc * inv
    return (l_sm, l_cc, l_sm + l_cc), g_sm, g_cc


def _dwd_sims_backward(e, loo, full, sims, g_s):
    """Chain d loss / d S back to the instance embeddings.

    Handles all three paths: each instance's own appearance in S, its
    contribution to its class's leave-one-out centroids, and its
    contribution to the full centroid every other class scores against.
    """
    n, m, d = e.shape
    e_norms = np.linalg.norm(e, axis=2)
    full_norms = np.linalg.norm(full, axis=1)
    loo_norms = np.linalg.norm(loo, axis=2)
    j_idx = np.arange(n)

    grad = np.zeros_like(e)
    g_full = np.zeros_like(full)

    # cross-class entries: S[j, i, k] = cos(e_ji, full_k), k != j
    g_cross = g_s.copy()
    g_cross[j_idx, :, j_idx] = 0.0
    denom = e_norms[:, :, None] * full_norms[None, None, :]
    cos_cross = np.einsum("jid,kd->jik", e, full) / denom
    # d cos / d u and d cos / d c, weighted by g_cross
    grad += np.einsum("jik,kd->jid", g_cross / denom, full)
    grad -= (
        (g_cross * cos_cross).sum(axis=2)[:, :, None]
        * e
        / (e_norms**2)[:, :, None]
    )
    g_full += np.einsum("jik,jid->kd", g_cross / denom, e)
    g_full -= np.einsum(
        "jik,kd->kd", g_cross * cos_cross / full_norms[None, None, :] ** 2, full
    )

    # own-class entries: S[j, i, j] = cos(e_ji, loo_ji)
    g_own = g_s[j_idx, :, j_idx]  # (n, m)
    own_cos = sims[j_idx, :, j_idx]
    denom_own = e_norms * loo_norms
    grad += (g_own / denom_own)[:, :, None] * loo
    grad -= (g_own * own_cos / e_norms**2)[:, :, None] * e
    g_loo = (g_own / denom_own)[:, :, None] * e
    g_loo -= (g_own * own_cos / loo_norms**2)[:, :, None] * loo

    # centroid contributions back to instances
    # full[k] = mean_m e[k, m]
    grad += g_full[:, None, :] / m
    # loo[j, i] = (sum_m e[j, m] - e[j, i]) / (m - 1)
    g_loo_sum = g_loo.sum(axis=1)
    grad += (g_loo_sum[:, None, :] - g_loo) / (m - 1)
    return grad


def total_loss(e_text, batch, tau: float, weights: LossWeights) -> float:
    """Weighted joint objective: alpha1 * cross-modal + alpha2 * audio-audio."""
    value, *_ = total_loss_with_grad(e_text, batch, tau, weights)
    return value


def total_loss_with_grad(e_text, batch, tau, weights, dwd_mode: str = "sum"):
    """Joint objective with gradients.

    Returns (loss, d/d e_text, d/d audio batch, d/d tau) plus the two
    component values for logging, as a final (clap, dwd) pair.
    """
    e_text = np.asarray(e_text, dtype=np.float64)
    audio = _as_instance_array(batch)
    g_text = np.zeros_like(e_text)
    g_audio = np.zeros_like(audio)
    g_tau = 0.0
    clap_val = 0.0
    dwd_val = 0.0
    if weights.alpha1 != 0.0:
        clap_val, g_t, g_a, g_tau_c = clap_loss_multi_with_grad(e_text, audio, tau)
        g_text += weights.alpha1 * g_t
        g_audio += weights.alpha1 * g_a
        g_tau += weights.alpha1 * g_tau_c
    if weights.alpha2 != 0.0:
        (l_sm, l_cc, l_aa), g_sm, g_cc = dwd_loss_with_grad(audio, mode=dwd_mode)
        dwd_val = l_aa
        g_audio += weights.alpha2 * (g_sm + g_cc)
    loss = weights.alpha1 * clap_val + weights.alpha2 * dwd_val
    return loss, g_text, g_audio, g_tau, (clap_val, dwd_val)


# ---------------------------------------------------------------------------
# baseline objectives


def _cosine_with_grads(u, v):
    """cos(u, v) plus its gradients w.r.t. both vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise LossError("zero-norm input vector")
    cos = float(u @ v) / (nu * nv)
    du = v / (nu * nv) - cos * u / nu**2
    dv = u / (nu * nv) - cos * v / nv**2
    return cos, du, dv


def cosine_distance(u, v) -> float:
    """1 - cos(u, v)."""
    cos, _, _ = _cosine_with_grads(u, v)
    return 1.0 - cos


def siamese_hinge(anchor, positive, negative, margin: float) -> float:
    """Triplet cosine hinge: max(0, m + d(a, p) - d(a, n))."""
    value, *_ = siamese_hinge_with_grad(anchor, positive, negative, margin)
    return value


def siamese_hinge_with_grad(anchor, positive, negative, margin):
    cos_p, da_p, dp = _cosine_with_grads(anchor, positive)
    cos_n, da_n, dn = _cosine_with_grads(anchor, negative)
    arg = margin + (1.0 - cos_p) - (1.0 - cos_n)
    if arg <= 0.0:
        z = np.zeros_like(np.asarray(anchor, dtype=np.float64))
        return 0.0, z, z.copy(), z.copy()
    return float(arg), -da_p + da_n, -dp, dn


def multiview_hinge(audio_pos, text_pos, text_neg, margin: float) -> float:
    """Cross-modal hinge: the matched text must beat the mismatched one by m."""
    value, *_ = multiview_hinge_with_grad(audio_pos, text_pos, text_neg, margin)
    return value


def multiview_hinge_with_grad(audio_pos, text_pos, text_neg, margin):
    return siamese_hinge_with_grad(audio_pos, text_pos, text_neg, margin)


def ntxent(anchor, positive, negatives, tau: float) -> float:
    """Temperature-scaled cross-entropy over one positive and K negatives."""
    value, *_ = ntxent_with_grad(anchor, positive, negatives, tau)
    return value


def ntxent_with_grad(anchor, positive, negatives, tau):
    if tau <= 0:
        raise LossError("temperature must be positive")
    anchor = np.asarray(anchor, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64)
    if negatives.size == 0:
        negatives = negatives.reshape(0, anchor.size)
        warnings.warn("ntxent with no negatives: loss is identically 0", stacklevel=2)
    cands = [np.asarray(positive, dtype=np.float64)] + [row for row in negatives]
    cos_all, d_anchor_all, d_cand_all = [], [], []
    for cand in cands:
        cos, da, dc = _cosine_with_grads(anchor, cand)
        cos_all.append(cos)
        d_anchor_all.append(da)
        d_cand_all.append(dc)
    logits = np.array(cos_all) / tau
    log_p = logits - logits.max()
    log_p = log_p - np.log(np.exp(log_p).sum())
    loss = float(-log_p[0])
    g_logits = np.exp(log_p)
    g_logits[0] -= 1.0
    g_anchor = sum(g / tau * da for g, da in zip(g_logits, d_anchor_all))
    g_pos = g_logits[0] / tau * d_cand_all[0]
    g_negs = np.stack(
        [g / tau * dc for g, dc in zip(g_logits[1:], d_cand_all[1:])]
    ) if len(cands) > 1 else np.zeros_like(negatives)
    return loss, g_anchor, g_pos, g_negs


def cae_recon(target, predicted) -> float:
    """Summed squared frame error between a target sequence and a reconstruction."""
    value, *_ = cae_recon_with_grad(target, predicted)
    return value


def cae_recon_with_grad(target, predicted):
    t = np.asarray(getattr(target, "frames", target), dtype=np.float64)
    p = np.asarray(getattr(predicted, "frames", predicted), dtype=np.float64)
    if t.shape != p.shape:
        raise LossError(f"shape mismatch: target {t.shape} vs predicted {p.shape}")
    diff = t - p
    return float((diff**2).sum()), 2.0 * diff, -2.0 * diff
