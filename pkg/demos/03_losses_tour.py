#!/usr/bin/env python3
"""Walk through every training objective on small hand-made batches."""

import math

import numpy as np

from awelab import (
    LossWeights,
    cae_recon,
    clap_loss,
    clap_loss_multi,
    dwd_centroids,
    dwd_loss,
    dwd_similarities,
    multiview_hinge,
    ntxent,
    siamese_hinge,
    similarity_matrix,
    total_loss,
)

rng = np.random.default_rng(3)

def unit(*shape):
    v = rng.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)

# --- the cross-modal objective ------------------------------------------------
# rows of the similarity matrix are text keywords, columns are audio segments;
# the diagonal holds the matched pairs
e_text = unit(4, 8)
e_audio = unit(4, 8)
tau = math.log(1 / 0.07)
sim = similarity_matrix(e_text, e_audio, tau)
print(f"similarity matrix 4x4, scaled by exp(tau)={math.exp(tau):.1f}")
print(f"  random pairing: loss = {clap_loss(sim):.4f}")
print(f"  perfectly aligned: loss = {clap_loss(similarity_matrix(e_text, e_text, tau)):.6f}")
print(f"  chance level for N=4 would be ln(4) = {math.log(4):.4f} at tau=0")

# with M positives per class, the loss averages over M pairing matrices
audio_instances = unit(4, 3, 8)
print(f"  averaged over 3 instance slices: {clap_loss_multi(e_text, audio_instances, tau):.4f}")

# --- the audio-audio word-discrimination objective ------------------------------
# tight, well-separated classes: the centroid-contrast term goes to zero
tight = np.repeat(unit(4, 8)[:, None, :], 3, axis=1)
l_sm, l_cc, l_aa = dwd_loss(tight)
print(f"\ntight clusters: softmax term {l_sm:.4f}, centroid-contrast term {l_cc:.4f}")

messy = unit(4, 3, 8)
loo, full = dwd_centroids(messy)
sims = dwd_similarities(messy, loo, full)
l_sm, l_cc, l_aa = dwd_loss(messy)
print(f"random clusters: softmax {l_sm:.3f} + contrast {l_cc:.3f} = {l_aa:.3f}")
print(f"  own-class scores use leave-one-out centroids: S[0,0,0]={sims[0,0,0]:.3f}")
print(f"  other classes use full centroids:            S[0,0,1]={sims[0,0,1]:.3f}")

# --- the joint objective --------------------------------------------------------
weights = LossWeights(alpha1=0.1, alpha2=1.0)
print(f"\njoint loss (0.1 * cross-modal + 1.0 * audio-audio): "
      f"{total_loss(e_text, audio_instances, tau, weights):.4f}")

# --- baseline objectives kept for comparison experiments ------------------------
a, p, n = unit(3, 8)
print("\nbaselines on one random triplet:")
print(f"  triplet cosine hinge (m=0.5):   {siamese_hinge(a, p, n, 0.5):.4f}")
print(f"  cross-modal hinge (m=0.5):      {multiview_hinge(a, p, n, 0.5):.4f}")
negatives = unit(5, 8)
print(f"  sampled-negative cross-entropy: {ntxent(a, p, negatives, 0.07):.4f}")
target = rng.normal(size=(20, 13))
recon = target + rng.normal(size=target.shape) * 0.1
print(f"  reconstruction error:           {cae_recon(target, recon):.2f}")
