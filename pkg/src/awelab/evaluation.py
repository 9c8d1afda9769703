"""Embedding evaluation: word discrimination, windowed search, score reports.

Word discrimination scores every unordered pair of test segments and
summarizes the ranking with exact average precision. Spoken-term detection
and keyword spotting slice each search utterance into fixed-length windows,
score a query against the best-matching window, and summarize with the
equal error rate. Both metrics are exact finite-sample estimators and are
checked against brute-force threshold enumeration in the tests.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from awelab.encoders import encode_audio, encode_text
from awelab.frontend import FeatureSequence, ManifestRecord

EMBEDDING_MAGIC = b"EMB1"

DEFAULT_WINDOWS = (0.2, 0.3, 0.4, 0.6)

SCORE_CHUNK = 262144


class EvalError(ValueError):
    """Raised for malformed trials, missing embeddings, or degenerate metrics."""


@dataclass
class Trial:
    id_a: str
    id_b: str
    label: str
    score: float | None = None


@dataclass
class TrialSet:
    """Columnar trial storage: indices into a shared id list plus labels/scores."""

    id_list: list[str]
    a: np.ndarray
    b: np.ndarray
    labels: np.ndarray
    scores: np.ndarray | None = None

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.int64)
        self.b = np.asarray(self.b, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=bool)
        if not (len(self.a) == len(self.b) == len(self.labels)):
            raise EvalError("trial columns must have equal length")

    def __len__(self) -> int:
        return len(self.a)

    @classmethod
    def from_trials(cls, trials: list[Trial]) -> "TrialSet":
        ids = sorted({t.id_a for t in trials} | {t.id_b for t in trials})
        index = {s: i for i, s in enumerate(ids)}
        a = np.array([index[t.id_a] for t in trials], dtype=np.int64)
        b = np.array([index[t.id_b] for t in trials], dtype=np.int64)
        labels = np.array([t.label == "positive" for t in trials], dtype=bool)
        scores = None
        if all(t.score is not None for t in trials):
            scores = np.array([t.score for t in trials], dtype=np.float64)
        return cls(id_list=ids, a=a, b=b, labels=labels, scores=scores)

    def iter_trials(self):
        for k in range(len(self)):
            yield Trial(
                id_a=self.id_list[self.a[k]],
                id_b=self.id_list[self.b[k]],
                label="positive" if self.labels[k] else "negative",
                score=None if self.scores is None else float(self.scores[k]),
            )

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("id_a,id_b,label,score\n")
            scores = self.scores
            for k in range(len(self)):
                score = "" if scores is None else f"{scores[k]:.17g}"
                label = "positive" if self.labels[k] else "negative"
                fh.write(f"{self.id_list[self.a[k]]},{self.id_list[self.b[k]]},"
                         f"{label},{score}\n")


def iv_oov_split(train_records, test_records) -> dict[str, str]:
    """Label each test word IV or OOV by case-folded match against training."""
    train_words = {r.word.lower() for r in train_records}
    return {
        w: ("IV" if w.lower() in train_words else "OOV")
        for w in {r.word for r in test_records}
    }


def build_wd_trials(records: list[ManifestRecord], words=None) -> TrialSet:
    """All unordered segment pairs, positives being same-word pairs.

    ``words`` restricts the pool to segments of those word types; every
    unordered pair is emitted exactly once, so positives and negatives
    together number C(T, 2).
    """
    pool = [r for r in records if words is None or r.word in words]
    if len(pool) < 2:
        raise EvalError("need at least 2 segments to build trials")
    ids = [r.id for r in pool]
    codes: dict[str, int] = {}
    word_idx = np.array([codes.setdefault(r.word, len(codes)) for r in pool])
    a, b = np.triu_indices(len(pool), k=1)
    labels = word_idx[a] == word_idx[b]
    return TrialSet(id_list=ids, a=a, b=b, labels=labels)


def build_cross_trials(records: list[ManifestRecord], words=None) -> TrialSet:
    """One trial per (word text query, audio segment) pair.

    Text queries get ids "text:<word>"; a trial is positive when the
    segment is an instance of the queried word.
    """
    pool = [r for r in records if words is None or r.word in words]
    if not pool:
        raise EvalError("no segments for the requested words")
    word_list = sorted({r.word for r in pool})
    ids = ["text:" + w for w in word_list] + [r.id for r in pool]
    n_words = len(word_list)
    word_of = {w: i for i, w in enumerate(word_list)}
    a = np.repeat(np.arange(n_words), len(pool))
    b = n_words + np.tile(np.arange(len(pool)), n_words)
    seg_words = np.array([word_of[r.word] for r in pool])
    labels = np.repeat(np.arange(n_words), len(pool)) == np.tile(seg_words, n_words)
    return TrialSet(id_list=ids, a=a, b=b, labels=labels)


def _cosine_rows(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    num = (u * v).sum(axis=1)
    nu = np.sqrt((u * u).sum(axis=1))
    nv = np.sqrt((v * v).sum(axis=1))
    return num / (nu * nv)


def score_trials(trials: TrialSet, embeddings, workers: int | None = None) -> TrialSet:
    """Fill trial scores with cosine similarity between the paired embeddings.

    ``embeddings`` maps id -> vector (any dict-like; an EmbeddingBatch also
    works). Scoring is chunked; with ``workers`` > 1 the chunks run on a
    thread pool writing disjoint output ranges, so the result is identical
    to the sequential pass regardless of worker count.
    """
    table = _as_embedding_dict(embeddings)
    missing = [s for s in trials.id_list if s not in table]
    if missing:
        raise EvalError(f"missing embedding for id {missing[0]!r}")
    matrix = np.stack([np.asarray(table[s], dtype=np.float64) for s in trials.id_list])
    scores = np.empty(len(trials), dtype=np.float64)

    def fill(lo: int, hi: int) -> None:
        scores[lo:hi] = _cosine_rows(
            matrix[trials.a[lo:hi]], matrix[trials.b[lo:hi]]
        )

    spans = [(lo, min(lo + SCORE_CHUNK, len(trials)))
             for lo in range(0, len(trials), SCORE_CHUNK)]
    if workers is None or workers <= 1 or len(spans) <= 1:
        for lo, hi in spans:
            fill(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda span: fill(*span), spans))
    return TrialSet(id_list=trials.id_list, a=trials.a, b=trials.b,
                    labels=trials.labels, scores=scores)


def _as_embedding_dict(embeddings) -> dict:
    if hasattr(embeddings, "row_ids"):
        return dict(zip(embeddings.row_ids, embeddings.vectors))
    return embeddings


def average_precision(scores, labels) -> float:
    """Exact finite-sample AP from ranked pair scores.

    Trials are ranked by descending score; equal scores form one threshold
    group, so tied rankings are deterministic. No interpolation.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise EvalError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    cum_tp = np.cumsum(y)
    group_end = np.nonzero(np.append(s[1:] != s[:-1], True))[0]
    tp_at_end = cum_tp[group_end]
    precision = tp_at_end / (group_end + 1)
    delta_tp = np.diff(np.concatenate(([0], tp_at_end)))
    return float((delta_tp * precision).sum() / n_pos)


def equal_error_rate(scores, labels) -> float:
    """EER by threshold sweep over the observed scores.

    FAR(t) is the fraction of negatives scoring >= t, FRR(t) the fraction
    of positives scoring < t. The rates are linearly interpolated between
    the adjacent sweep points where FAR - FRR changes sign; at an exact
    crossing the common value is returned.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvalError("equal error rate needs both labels present")
    pos_sorted = np.sort(scores[labels])
    neg_sorted = np.sort(scores[~labels])
    thresholds = np.unique(scores)
    far = (n_neg - np.searchsorted(neg_sorted, thresholds, side="left")) / n_neg
    frr = np.searchsorted(pos_sorted, thresholds, side="left") / n_pos
    far = np.append(far, 0.0)  # sentinel threshold above every score
    frr = np.append(frr, 1.0)
    diff = far - frr
    idx = int(np.argmax(diff <= 0.0))
    if diff[idx] == 0.0:
        return float(far[idx])
    d0, d1 = diff[idx - 1], diff[idx]
    t = d0 / (d0 - d1)
    return float(far[idx - 1] + t * (far[idx] - far[idx - 1]))


def segment_windows(utterance: FeatureSequence, window_s: float, hop_s: float,
                    frame_seconds: float = 0.010) -> list[FeatureSequence]:
    """Slice an utterance into fixed-length windows with a fixed hop.

    A trailing partial window is kept when it spans at least half a window;
    an utterance shorter than one window yields itself as a single
    (truncated) window.
    """
    if window_s <= 0 or hop_s <= 0:
        raise EvalError("window and hop must be positive")
    frames = utterance.frames
    w = int(round(window_s / frame_seconds))
    h = int(round(hop_s / frame_seconds))
    t_len = frames.shape[0]
    if t_len < w:
        return [FeatureSequence(frames=frames.copy())]
    out = []
    start = 0
    while start + w <= t_len:
        out.append(FeatureSequence(frames=frames[start:start + w].copy()))
        start += h
    remainder = t_len - start
    if remainder * 2 >= w:
        out.append(FeatureSequence(frames=frames[start:].copy()))
    return out


def std_score(query_embedding: np.ndarray, window_embeddings: np.ndarray) -> float:
    """Best cosine match of the query against any window of the utterance."""
    windows = np.atleast_2d(np.asarray(window_embeddings, dtype=np.float64))
    if windows.shape[0] < 1:
        raise EvalError("need at least one window embedding")
    q = np.asarray(query_embedding, dtype=np.float64)
    sims = (windows @ q) / (np.linalg.norm(windows, axis=1) * np.linalg.norm(q))
    return float(sims.max())


@dataclass
class EvalReport:
    """Evaluation results in the shape of the JSON report file."""

    ap: dict = field(default_factory=dict)
    ap_cross: dict = field(default_factory=dict)
    eer: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    score_stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"ap": self.ap, "ap_cross": self.ap_cross, "eer": self.eer,
                "counts": self.counts, "score_stats": self.score_stats}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def label_stats(scores, labels) -> dict:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    out = {}
    for name, mask in (("positive", labels), ("negative", ~labels)):
        if mask.any():
            out[name] = {"mean": float(scores[mask].mean()),
                         "std": float(scores[mask].std()),
                         "count": int(mask.sum())}
        else:
            out[name] = {"mean": None, "std": None, "count": 0}
    return out


def eval_wd(audio_embeddings, test_records, train_records,
            text_embeddings=None, workers: int | None = None) -> EvalReport:
    """Word-discrimination APs on the test split, IV and OOV separately.

    Acoustic view scores segment-segment pairs; when ``text_embeddings``
    (word -> vector) is given, the cross view scores every word text query
    against every segment.
    """
    vocab = iv_oov_split(train_records, test_records)
    report = EvalReport()
    for cls in ("IV", "OOV"):
        words = {w for w, c in vocab.items() if c == cls}
        key = cls.lower()
        if not words or sum(r.word in words for r in test_records) < 2:
            report.ap[key] = None
            continue
        trials = score_trials(build_wd_trials(test_records, words),
                              audio_embeddings, workers=workers)
        report.ap[key] = average_precision(trials.scores, trials.labels)
        report.counts[f"wd_{key}_trials"] = len(trials)
        report.counts[f"wd_{key}_positives"] = int(trials.labels.sum())
        report.score_stats[f"wd_{key}"] = label_stats(trials.scores, trials.labels)
        if text_embeddings is not None:
            table = {"text:" + w: v for w, v in text_embeddings.items()}
            table.update(_as_embedding_dict(audio_embeddings))
            cross = score_trials(build_cross_trials(test_records, words),
                                 table, workers=workers)
            report.ap_cross[key] = average_precision(cross.scores, cross.labels)
            report.counts[f"cross_{key}_trials"] = len(cross)
    return report


def segment_frames(record: ManifestRecord, file_features: FeatureSequence,
                   frame_seconds: float = 0.010) -> FeatureSequence:
    """Slice a record's [start_s, end_s) span out of its feature file."""
    t_len = file_features.n_frames
    lo = int(round(record.start_s / frame_seconds))
    hi = int(round(record.end_s / frame_seconds))
    lo = max(0, min(lo, t_len - 1))
    hi = max(lo + 1, min(hi, t_len))
    return FeatureSequence(frames=file_features.frames[lo:hi].copy())


@dataclass
class SearchUnit:
    """One search utterance: its feature file and the word segments inside."""

    path: str
    features: FeatureSequence
    records: list[ManifestRecord]

    @property
    def words(self) -> set:
        return {r.word for r in self.records}

    @property
    def record_ids(self) -> set:
        return {r.id for r in self.records}


def group_search_units(search_records, file_features: dict) -> list[SearchUnit]:
    """Group manifest records by their shared utterance file."""
    by_path: dict[str, list[ManifestRecord]] = {}
    for r in search_records:
        by_path.setdefault(r.feature_path, []).append(r)
    return [
        SearchUnit(path=path, features=file_features[path], records=recs)
        for path, recs in sorted(by_path.items())
    ]


def _unit_window_embeddings(params, cfg, units, window_s, hop_s):
    """Embeddings of each unit's windows; window_s None means the exact
    word segments inside the unit (the aligned condition)."""
    out = []
    for unit in units:
        if window_s is None:
            pieces = [segment_frames(r, unit.features) for r in unit.records]
        else:
            pieces = segment_windows(unit.features, window_s, hop_s)
        out.append(encode_audio(params, cfg, pieces).vectors)
    return out


def _windowed_search(params, cfg, query_embs, query_words, query_ids, units,
                     windows, hop_frac, include_aligned, exclude_self) -> dict:
    jobs: list[tuple[str, float | None]] = []
    if include_aligned:
        jobs.append(("aligned", None))
    jobs.extend((f"{w:g}", w) for w in windows)
    out = {"eer": {}, "score_stats": {}, "counts": {}}
    for key, window_s in jobs:
        hop_s = None if window_s is None else window_s * hop_frac
        unit_embs = _unit_window_embeddings(params, cfg, units, window_s, hop_s)
        scores, labels = [], []
        for q_emb, q_word, q_id in zip(query_embs, query_words, query_ids):
            for unit, embs in zip(units, unit_embs):
                if exclude_self and q_id in unit.record_ids:
                    continue
                scores.append(std_score(q_emb, embs))
                labels.append(q_word in unit.words)
        scores = np.array(scores)
        labels = np.array(labels, dtype=bool)
        out["eer"][key] = equal_error_rate(scores, labels)
        out["score_stats"][key] = label_stats(scores, labels)
        out["counts"][key] = len(scores)
    return out


def eval_std(params, cfg, query_records, search_records, file_features,
             windows=DEFAULT_WINDOWS, hop_frac: float = 0.5,
             include_aligned: bool = True) -> dict:
    """Query-by-example search: spoken queries against windowed utterances.

    Queries are embedded from their exact segments. Each search utterance
    is scored by its best-matching window; a trial is positive when the
    utterance contains the query's word. Pairing is exhaustive except that
    a query is never scored against its own manifest record.
    ``file_features`` maps feature_path to the utterance's (or segment
    file's) features. Returns per-window EER and score statistics; the
    ``aligned`` rows score the exact contained segments instead of sliding
    windows.
    """
    query_feats = [
        segment_frames(r, file_features[r.feature_path]) for r in query_records
    ]
    query_embs = encode_audio(params, cfg, query_feats).vectors
    units = group_search_units(search_records, file_features)
    return _windowed_search(
        params, cfg, query_embs, [r.word for r in query_records],
        [r.id for r in query_records], units, windows, hop_frac,
        include_aligned, exclude_self=True,
    )


def eval_kws(params, cfg, query_words, lexicon, search_records, file_features,
             windows=DEFAULT_WINDOWS, hop_frac: float = 0.5,
             include_aligned: bool = True) -> dict:
    """Keyword spotting: written keywords against windowed utterances.

    Same protocol and report shape as :func:`eval_std`, with query
    embeddings from the text encoder via ``lexicon`` (word -> phoneme ids).
    """
    query_words = sorted(query_words)
    texts = [np.asarray(lexicon(w), dtype=np.int64) for w in query_words]
    query_embs = encode_text(params, cfg, texts).vectors
    units = group_search_units(search_records, file_features)
    return _windowed_search(
        params, cfg, query_embs, query_words,
        ["text:" + w for w in query_words], units, windows, hop_frac,
        include_aligned, exclude_self=False,
    )


def score_histogram(scores, labels, n_bins: int = 50) -> dict:
    """Binned score counts per label over [-1, 1], plus mean and spread.

    The CSV-friendly dict feeds external density plotting.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    edges = np.linspace(-1.0, 1.0, n_bins + 1)
    clipped = np.clip(scores, -1.0, 1.0)
    out = {"bin_edges": edges.tolist(), "stats": label_stats(scores, labels)}
    for name, mask in (("positive", labels), ("negative", ~labels)):
        counts, _ = np.histogram(clipped[mask], bins=edges)
        out[name] = counts.tolist()
    return out


def write_histogram_csv(hist: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_lo,bin_hi,positive,negative\n")
        edges = hist["bin_edges"]
        for k in range(len(edges) - 1):
            fh.write(f"{edges[k]:.6f},{edges[k + 1]:.6f},"
                     f"{hist['positive'][k]},{hist['negative'][k]}\n")


# ---------------------------------------------------------------------------
# embedding dump format


def save_embeddings(embeddings, path) -> None:
    """Write id -> vector pairs to the binary embedding dump (float32 LE)."""
    table = _as_embedding_dict(embeddings)
    ids = sorted(table)
    if not ids:
        raise EvalError("nothing to save")
    dim = int(np.asarray(table[ids[0]]).shape[0])
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<II", len(ids), dim))
        for name in ids:
            vec = np.asarray(table[name], dtype="<f4")
            if vec.shape != (dim,):
                raise EvalError(f"embedding {name!r} has shape {vec.shape}")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(vec.tobytes())


def load_embeddings(path) -> dict[str, np.ndarray]:
    """Read an embedding dump written by :func:`save_embeddings`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != EMBEDDING_MAGIC:
        raise EvalError(f"bad magic {data[:4]!r} in {path}")
    offset = 4
    try:
        count, dim = struct.unpack_from("<II", data, offset)
        offset += 8
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset:offset + name_len].decode("utf-8")
            offset += name_len
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
            offset += 4 * dim
            out[name] = vec.copy()
    except (struct.error, ValueError) as exc:
        raise EvalError(f"truncated embedding dump {path}: {exc}") from exc
    if offset != len(data):
        raise EvalError(f"trailing bytes in embedding dump {path}")
    return out
