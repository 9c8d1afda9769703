"""Independent brute-force oracles used by the test suite.

Everything here is deliberately naive: explicit Python loops and direct
formula transcriptions, kept free of the vectorized code paths they check.
"""

import math

import numpy as np


def rel_err(analytic, reference):
    """Worst per-entry error, relative above magnitude 1, absolute below."""
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    denom = np.maximum(1.0, np.abs(reference))
    return float(np.max(np.abs(analytic - reference) / denom)) if analytic.size else 0.0


def fd_grad(fn, x, h=1e-5):
    """Central finite-difference gradient of scalar fn at x (entrywise)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for k in range(xf.size):
        orig = xf[k]
        xf[k] = orig + h
        up = fn(x)
        xf[k] = orig - h
        down = fn(x)
        xf[k] = orig
        flat[k] = (up - down) / (2 * h)
    return grad


def cosine(u, v):
    num = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return num / (nu * nv)


def similarity_matrix_loops(e_text, e_audio, tau):
    n = len(e_text)
    out = np.zeros((n, n))
    scale = min(math.exp(tau), 100.0)
    for i in range(n):
        for j in range(n):
            out[i, j] = scale * sum(a * b for a, b in zip(e_text[i], e_audio[j]))
    return out


def clap_loss_loops(c):
    n = c.shape[0]
    loss_rows = 0.0
    loss_cols = 0.0
    for i in range(n):
        row = [math.exp(v) for v in c[i, :]]
        loss_rows += -math.log(math.exp(c[i, i]) / sum(row))
        col = [math.exp(v) for v in c[:, i]]
        loss_cols += -math.log(math.exp(c[i, i]) / sum(col))
    return 0.5 * (loss_rows / n + loss_cols / n)


def clap_loss_multi_loops(e_text, audio, tau):
    m_count = audio.shape[1]
    total = 0.0
    for m in range(m_count):
        c = similarity_matrix_loops(e_text, audio[:, m, :], tau)
        total += clap_loss_loops(c)
    return total / m_count


def dwd_sims_loops(e):
    n, m, _ = e.shape
    sims = np.zeros((n, m, n))
    for j in range(n):
        for i in range(m):
            for k in range(n):
                if k == j:
                    centroid = (e[j].sum(axis=0) - e[j, i]) / (m - 1)
                else:
                    centroid = e[k].mean(axis=0)
                sims[j, i, k] = cosine(e[j, i], centroid)
    return sims


def dwd_loss_loops(e, mode="sum"):
    n, m, _ = e.shape
    sims = dwd_sims_loops(e)
    l_sm = 0.0
    l_cc = 0.0
    for j in range(n):
        for i in range(m):
            l_sm += -sims[j, i, j] + math.log(
                sum(math.exp(sims[j, i, k]) for k in range(n))
            )
            best_other = max(sims[j, i, k] for k in range(n) if k != j)
            l_cc += (1.0 - sims[j, i, j]) + best_other
    if mode == "mean":
        l_sm /= n * m
        l_cc /= n * m
    return l_sm, l_cc, l_sm + l_cc


def total_loss_loops(e_text, audio, tau, alpha1, alpha2, mode="sum"):
    return alpha1 * clap_loss_multi_loops(e_text, audio, tau) + alpha2 * (
        dwd_loss_loops(audio, mode=mode)[2]
    )


def ntxent_loops(anchor, positive, negatives, tau):
    sims = [cosine(anchor, positive)] + [cosine(anchor, n) for n in negatives]
    exps = [math.exp(s / tau) for s in sims]
    return -math.log(exps[0] / sum(exps))


def hinge_loops(a, p, n, margin):
    d_ap = 1.0 - cosine(a, p)
    d_an = 1.0 - cosine(a, n)
    return max(0.0, margin + d_ap - d_an)


def cae_loops(target, predicted):
    total = 0.0
    for t_row, p_row in zip(target, predicted):
        total += sum((tv - pv) ** 2 for tv, pv in zip(t_row, p_row))
    return total


def average_precision_loops(scores, labels):
    """Exact AP by explicit threshold enumeration with tie groups."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    thresholds = sorted(set(scores.tolist()), reverse=True)
    ap = 0.0
    prev_tp = 0
    for th in thresholds:
        sel = scores >= th
        tp = int((labels & sel).sum())
        fp = int((~labels & sel).sum())
        precision = tp / (tp + fp)
        ap += (tp - prev_tp) * precision
        prev_tp = tp
    return ap / n_pos


def far_frr_at(scores, labels, threshold):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    far = int((scores[~labels] >= threshold).sum()) / int((~labels).sum())
    frr = int((scores[labels] < threshold).sum()) / int(labels.sum())
    return far, frr


def equal_error_rate_loops(scores, labels):
    """Threshold sweep with linear interpolation at the FAR/FRR crossing."""
    scores = np.asarray(scores, dtype=np.float64)
    thresholds = sorted(set(scores.tolist()))
    points = [far_frr_at(scores, labels, th) for th in thresholds]
    points.append((0.0, 1.0))  # sentinel above the max score
    prev_far, prev_frr = points[0]
    for far, frr in points:
        diff = far - frr
        if diff == 0.0:
            return far
        if diff < 0.0:
            prev_diff = prev_far - prev_frr
            t = prev_diff / (prev_diff - diff)
            return prev_far + t * (far - prev_far)
        prev_far, prev_frr = far, frr
    raise AssertionError("no crossing found")


def fd_param_grads(loss_fn, params, h=1e-4):
    """Central finite differences of a scalar loss over every parameter entry."""
    grads = {}
    for name in sorted(params):
        arr = params[name]
        g = np.zeros_like(arr, dtype=np.float64)
        flat_g = g.reshape(-1)
        flat_p = arr.reshape(-1)
        for k in range(flat_p.size):
            orig = flat_p[k]
            flat_p[k] = orig + h
            up = loss_fn(params)
            flat_p[k] = orig - h
            down = loss_fn(params)
            flat_p[k] = orig
            flat_g[k] = (up - down) / (2 * h)
        grads[name] = g
    return grads
