"""Audio and text encoders with exact, hand-derived gradients.

Both modalities map a variable-length sequence to a unit-norm embedding:

* ``pooled``    - mean over frames, a two-layer tanh perceptron, a linear
                  projection, then L2 normalization. Cheap and exactly
                  differentiable without backprop-through-time; the
                  reference encoder for gradient verification.
* ``recurrent`` - stacked (optionally bidirectional) GRU layers; the final
                  states are concatenated, projected, and normalized.

The text encoder first maps phoneme ids through a learned embedding table,
then applies the same encoder family with its own parameters.

Parameters live in a flat name -> float64 array dict ("ParamStore"); the
learned log-temperature sits in it under the name "tau". ``encoder_backward``
re-runs the forward pass to rebuild intermediates, then chain-rules the
caller's upstream embedding gradients down to every parameter. All math is
float64; gradient exactness is enforced by finite-difference tests.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from awelab.frontend import FeatureSequence

CHECKPOINT_MAGIC = b"AWEP"

TAU_INIT = float(np.log(1.0 / 0.07))


class EncoderError(ValueError):
    """Raised for bad configs, shapes, or out-of-vocabulary inputs."""


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the two encoders and the shared embedding space."""

    kind: str = "recurrent"
    hidden: int = 256
    layers: int = 3
    bidirectional: bool = True
    embed_dim: int = 512
    feat_dim: int = 128
    text_vocab: int = 40
    text_embed_dim: int = 64

    def __post_init__(self):
        if self.kind not in ("pooled", "recurrent"):
            raise EncoderError(f"unknown encoder kind {self.kind!r}")
        for name in ("hidden", "layers", "embed_dim", "feat_dim",
                     "text_vocab", "text_embed_dim"):
            if getattr(self, name) < 1:
                raise EncoderError(f"{name} must be >= 1")

    @property
    def directions(self) -> tuple[str, ...]:
        return ("f", "b") if self.bidirectional else ("f",)

    @property
    def state_dim(self) -> int:
        """Width of the concatenated final state feeding the projection."""
        if self.kind == "pooled":
            return self.hidden
        return self.hidden * len(self.directions)


@dataclass
class EmbeddingBatch:
    """Unit-norm embedding rows plus the ids they belong to."""

    vectors: np.ndarray
    row_ids: list[str]

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise EncoderError("vectors must be a B x D matrix")
        if len(self.row_ids) != self.vectors.shape[0]:
            raise EncoderError("row_ids must match the number of rows")
        norms = np.linalg.norm(self.vectors, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise EncoderError("embedding rows must be unit-norm")


def _xavier(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _init_trunk(rng, cfg: EncoderConfig, prefix: str, input_dim: int) -> dict:
    p = {}
    h = cfg.hidden
    if cfg.kind == "pooled":
        p[f"{prefix}.mlp1.W"] = _xavier(rng, input_dim, h, (input_dim, h))
        p[f"{prefix}.mlp1.b"] = np.zeros(h)
        p[f"{prefix}.mlp2.W"] = _xavier(rng, h, h, (h, h))
        p[f"{prefix}.mlp2.b"] = np.zeros(h)
    else:
        for layer in range(cfg.layers):
            in_dim = input_dim if layer == 0 else h * len(cfg.directions)
            for d in cfg.directions:
                base = f"{prefix}.gru{layer}.{d}"
                for gate in ("z", "r", "n"):
                    p[f"{base}.W{gate}"] = _xavier(rng, in_dim, h, (in_dim, h))
                    p[f"{base}.U{gate}"] = _xavier(rng, h, h, (h, h))
                    p[f"{base}.b{gate}"] = np.zeros(h)
    p[f"{prefix}.proj.W"] = _xavier(rng, cfg.state_dim, cfg.embed_dim,
                                    (cfg.state_dim, cfg.embed_dim))
    p[f"{prefix}.proj.b"] = np.zeros(cfg.embed_dim)
    return p


def init_params(cfg: EncoderConfig, seed: int) -> dict:
    """Fresh parameters: Xavier-uniform weights, zero biases, tau = ln(1/0.07).

    Creation order is fixed, so a seed fully determines every array.
    """
    rng = np.random.default_rng(seed)
    params = {}
    params.update(_init_trunk(rng, cfg, "audio", cfg.feat_dim))
    params["text.embed.table"] = _xavier(
        rng, cfg.text_vocab, cfg.text_embed_dim,
        (cfg.text_vocab, cfg.text_embed_dim),
    )
    params.update(_init_trunk(rng, cfg, "text", cfg.text_embed_dim))
    params["tau"] = np.array(TAU_INIT)
    return {name: params[name] for name in sorted(params)}


def zeros_like_params(params: dict) -> dict:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


# ---------------------------------------------------------------------------
# forward / backward internals


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _pooled_forward(params, prefix, x):
    mean = x.mean(axis=0)
    h1 = np.tanh(mean @ params[f"{prefix}.mlp1.W"] + params[f"{prefix}.mlp1.b"])
    h2 = np.tanh(h1 @ params[f"{prefix}.mlp2.W"] + params[f"{prefix}.mlp2.b"])
    tape = {"mean": mean, "h1": h1, "h2": h2, "n_frames": x.shape[0]}
    return h2, tape


def _pooled_backward(params, prefix, tape, g_state, grads):
    g_pre2 = g_state * (1.0 - tape["h2"] ** 2)
    grads[f"{prefix}.mlp2.W"] += np.outer(tape["h1"], g_pre2)
    grads[f"{prefix}.mlp2.b"] += g_pre2
    g_h1 = g_pre2 @ params[f"{prefix}.mlp2.W"].T
    g_pre1 = g_h1 * (1.0 - tape["h1"] ** 2)
    grads[f"{prefix}.mlp1.W"] += np.outer(tape["mean"], g_pre1)
    grads[f"{prefix}.mlp1.b"] += g_pre1
    g_mean = g_pre1 @ params[f"{prefix}.mlp1.W"].T
    # mean over frames spreads the gradient uniformly
    g_x = np.tile(g_mean / tape["n_frames"], (tape["n_frames"], 1))
    return g_x


def _gru_direction_forward(params, base, x):
    """Run one GRU direction over x (T x I), returning states and a tape."""
    w_z, w_r, w_n = (params[f"{base}.W{g}"] for g in ("z", "r", "n"))
    u_z, u_r, u_n = (params[f"{base}.U{g}"] for g in ("z", "r", "n"))
    b_z, b_r, b_n = (params[f"{base}.b{g}"] for g in ("z", "r", "n"))
    t_len = x.shape[0]
    h = np.zeros(w_z.shape[1])
    states = np.zeros((t_len, h.size))
    steps = []
    for t in range(t_len):
        xt = x[t]
        z = _sigmoid(xt @ w_z + h @ u_z + b_z)
        r = _sigmoid(xt @ w_r + h @ u_r + b_r)
        rh = r * h
        n = np.tanh(xt @ w_n + rh @ u_n + b_n)
        h_new = (1.0 - z) * n + z * h
        steps.append({"x": xt, "h_prev": h, "z": z, "r": r, "n": n, "rh": rh})
        states[t] = h_new
        h = h_new
    return states, steps


def _gru_direction_backward(params, base, steps, g_states, grads):
    """BPTT for one direction. g_states holds dL/d h_t for every step."""
    w_z, w_r, w_n = (params[f"{base}.W{g}"] for g in ("z", "r", "n"))
    u_z, u_r, u_n = (params[f"{base}.U{g}"] for g in ("z", "r", "n"))
    t_len = len(steps)
    g_x = np.zeros((t_len, w_z.shape[0]))
    carry = np.zeros(w_z.shape[1])
    for t in range(t_len - 1, -1, -1):
        s = steps[t]
        g_h = g_states[t] + carry
        g_z = g_h * (s["h_prev"] - s["n"])
        g_n = g_h * (1.0 - s["z"])
        g_an = g_n * (1.0 - s["n"] ** 2)
        grads[f"{base}.Wn"] += np.outer(s["x"], g_an)
        grads[f"{base}.Un"] += np.outer(s["rh"], g_an)
        grads[f"{base}.bn"] += g_an
        g_rh = g_an @ u_n.T
        g_r = g_rh * s["h_prev"]
        g_az = g_z * s["z"] * (1.0 - s["z"])
        grads[f"{base}.Wz"] += np.outer(s["x"], g_az)
        grads[f"{base}.Uz"] += np.outer(s["h_prev"], g_az)
        grads[f"{base}.bz"] += g_az
        g_ar = g_r * s["r"] * (1.0 - s["r"])
        grads[f"{base}.Wr"] += np.outer(s["x"], g_ar)
        grads[f"{base}.Ur"] += np.outer(s["h_prev"], g_ar)
        grads[f"{base}.br"] += g_ar
        g_x[t] = g_an @ w_n.T + g_az @ w_z.T + g_ar @ w_r.T
        carry = g_h * s["z"] + g_rh * s["r"] + g_az @ u_z.T + g_ar @ u_r.T
    return g_x


def _recurrent_forward(params, cfg, prefix, x):
    """Stacked GRU. Returns the concatenated final state and a tape."""
    seq = x
    layer_tapes = []
    for layer in range(cfg.layers):
        outs = []
        dir_tapes = {}
        for d in cfg.directions:
            base = f"{prefix}.gru{layer}.{d}"
            inp = seq if d == "f" else seq[::-1]
            states, steps = _gru_direction_forward(params, base, inp)
            dir_tapes[d] = steps
            outs.append(states if d == "f" else states[::-1])
        seq = np.concatenate(outs, axis=1)
        layer_tapes.append(dir_tapes)
    finals = []
    for k, d in enumerate(cfg.directions):
        col = seq[:, k * cfg.hidden:(k + 1) * cfg.hidden]
        finals.append(col[-1] if d == "f" else col[0])
    state = np.concatenate(finals)
    return state, {"layers": layer_tapes, "t_len": x.shape[0]}


def _recurrent_backward(params, cfg, prefix, tape, g_state, grads):
    t_len = tape["t_len"]
    h = cfg.hidden
    n_dir = len(cfg.directions)
    # seed the top layer's per-step gradients from the final-state gradient
    g_seq = np.zeros((t_len, h * n_dir))
    for k, d in enumerate(cfg.directions):
        piece = g_state[k * h:(k + 1) * h]
        if d == "f":
            g_seq[-1, k * h:(k + 1) * h] = piece
        else:
            g_seq[0, k * h:(k + 1) * h] = piece
    for layer in range(cfg.layers - 1, -1, -1):
        dir_tapes = tape["layers"][layer]
        g_below = None
        for k, d in enumerate(cfg.directions):
            base = f"{prefix}.gru{layer}.{d}"
            g_states = g_seq[:, k * h:(k + 1) * h]
            if d == "b":
                g_states = g_states[::-1]
            g_x = _gru_direction_backward(params, base, dir_tapes[d], g_states, grads)
            if d == "b":
                g_x = g_x[::-1]
            g_below = g_x if g_below is None else g_below + g_x
        g_seq = g_below
    return g_seq  # gradient on the layer-0 input sequence


def _trunk_forward(params, cfg, prefix, x):
    if cfg.kind == "pooled":
        return _pooled_forward(params, prefix, x)
    return _recurrent_forward(params, cfg, prefix, x)


def _trunk_backward(params, cfg, prefix, tape, g_state, grads):
    if cfg.kind == "pooled":
        return _pooled_backward(params, prefix, tape, g_state, grads)
    return _recurrent_backward(params, cfg, prefix, tape, g_state, grads)


def _embed_one(params, cfg, prefix, x):
    state, tape = _trunk_forward(params, cfg, prefix, x)
    u = state @ params[f"{prefix}.proj.W"] + params[f"{prefix}.proj.b"]
    norm = np.linalg.norm(u)
    if norm == 0:
        raise EncoderError("projection collapsed to the zero vector")
    e = u / norm
    tape.update({"state": state, "e": e, "norm": norm})
    return e, tape


def _embed_one_backward(params, cfg, prefix, tape, g_e, grads):
    # through the normalization: d u = (g - (e . g) e) / ||u||
    e = tape["e"]
    g_u = (g_e - (e @ g_e) * e) / tape["norm"]
    grads[f"{prefix}.proj.W"] += np.outer(tape["state"], g_u)
    grads[f"{prefix}.proj.b"] += g_u
    g_state = g_u @ params[f"{prefix}.proj.W"].T
    return _trunk_backward(params, cfg, prefix, tape, g_state, grads)


def _audio_item(item) -> np.ndarray:
    frames = item.frames if isinstance(item, FeatureSequence) else np.asarray(item)
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise EncoderError("each audio item must be a non-empty T x F matrix")
    return frames


def _text_item(item, vocab: int) -> np.ndarray:
    ids = np.asarray(item, dtype=np.int64)
    if ids.ndim != 1 or ids.size < 1:
        raise EncoderError("each text item must be a non-empty phoneme-id sequence")
    if ids.min() < 0 or ids.max() >= vocab:
        raise EncoderError(
            f"phoneme id out of vocabulary (got {int(ids.max())}, vocab {vocab})"
        )
    return ids


def encode_audio(params, cfg: EncoderConfig, batch, ids=None) -> EmbeddingBatch:
    """Embed a batch of feature sequences; row i corresponds to input i."""
    if len(batch) == 0:
        raise EncoderError("empty batch")
    rows = []
    for item in batch:
        e, _ = _embed_one(params, cfg, "audio", _audio_item(item))
        rows.append(e)
    row_ids = list(ids) if ids is not None else [str(i) for i in range(len(batch))]
    return EmbeddingBatch(vectors=np.stack(rows), row_ids=row_ids)


def encode_text(params, cfg: EncoderConfig, batch, ids=None) -> EmbeddingBatch:
    """Embed a batch of phoneme-id sequences through the text encoder."""
    if len(batch) == 0:
        raise EncoderError("empty batch")
    table = params["text.embed.table"]
    rows = []
    for item in batch:
        seq = table[_text_item(item, cfg.text_vocab)]
        e, _ = _embed_one(params, cfg, "text", seq)
        rows.append(e)
    row_ids = list(ids) if ids is not None else [str(i) for i in range(len(batch))]
    return EmbeddingBatch(vectors=np.stack(rows), row_ids=row_ids)


def encoder_backward(params, cfg: EncoderConfig, batch, upstream) -> dict:
    """Exact parameter gradients for a previous forward pass.

    ``upstream`` is dL/dE, one row per batch item. The modality is inferred
    from the batch contents (feature matrices vs phoneme-id sequences). The
    forward pass is re-run to rebuild intermediates, which keeps the public
    encode functions pure. Returns a full ParamStore-shaped gradient dict;
    parameters the batch never touched (including tau) stay zero.
    """
    if len(batch) == 0:
        raise EncoderError("empty batch")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (len(batch), cfg.embed_dim):
        raise EncoderError(
            f"upstream gradient shape {upstream.shape} does not match "
            f"({len(batch)}, {cfg.embed_dim})"
        )
    grads = zeros_like_params(params)
    first = batch[0]
    is_audio = isinstance(first, FeatureSequence) or np.asarray(first).ndim == 2
    if is_audio:
        for item, g_e in zip(batch, upstream):
            _, tape = _embed_one(params, cfg, "audio", _audio_item(item))
            _embed_one_backward(params, cfg, "audio", tape, g_e, grads)
    else:
        table = params["text.embed.table"]
        for item, g_e in zip(batch, upstream):
            token_ids = _text_item(item, cfg.text_vocab)
            seq = table[token_ids]
            _, tape = _embed_one(params, cfg, "text", seq)
            g_seq = _embed_one_backward(params, cfg, "text", tape, g_e, grads)
            np.add.at(grads["text.embed.table"], token_ids, g_seq)
    return grads


# ---------------------------------------------------------------------------
# checkpoint format


def save_params(params: dict, path) -> None:
    """Write a ParamStore to the binary checkpoint format (float64 LE)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.asarray(params[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes())


def load_params(path) -> dict:
    """Read a checkpoint written by :func:`save_params`, bit-exactly."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise EncoderError(f"bad magic {data[:4]!r} in {path}")
    offset = 4
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    params = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", data, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}I", data, offset) if rank else ()
            offset += 4 * rank
            n_items = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(data, dtype="<f8", count=n_items, offset=offset)
            offset += 8 * n_items
            params[name] = arr.reshape(shape).copy() if rank else np.array(arr[0])
    except (struct.error, ValueError) as exc:
        raise EncoderError(f"truncated checkpoint {path}: {exc}") from exc
    if offset != len(data):
        raise EncoderError(f"trailing bytes in checkpoint {path}")
    return params
