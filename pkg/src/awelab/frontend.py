"""Audio frontend: waveform loading, log-mel features, manifests, feature files.

The binary feature format and the JSON-lines manifest defined here are the
interchange formats used by every other module.
"""

from __future__ import annotations

import json
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000

FEATURE_MAGIC = b"AWE1"


class FrontendError(ValueError):
    """Raised for malformed audio, feature files, or manifests."""


@dataclass
class WaveForm:
    """Mono PCM audio at 16 kHz, samples scaled into [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise FrontendError("empty audio")
        if self.sample_rate != SAMPLE_RATE:
            raise FrontendError(
                f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}"
            )


@dataclass(frozen=True)
class MelConfig:
    """Analysis parameters for the log-mel frontend.

    Defaults: 25 ms Hann window, 10 ms hop, 128 mel bands over 0..Nyquist.
    """

    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 128
    fft_size: int = 512
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.n_mels < 1:
            raise FrontendError("n_mels must be >= 1")
        if self.log_floor <= 0:
            raise FrontendError("log_floor must be positive")
        if self.win_length > self.fft_size:
            raise FrontendError(
                f"window of {self.win_length} samples exceeds fft_size {self.fft_size}"
            )

    @property
    def win_length(self) -> int:
        return int(round(self.win_ms * SAMPLE_RATE / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * SAMPLE_RATE / 1000))


@dataclass
class FeatureSequence:
    """A T x F matrix of log-mel energies for one segment or utterance."""

    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise FrontendError("frames must be a non-empty T x F matrix")
        if not np.all(np.isfinite(self.frames)):
            raise FrontendError("non-finite feature values")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_bins(self) -> int:
        return self.frames.shape[1]


@dataclass
class ManifestRecord:
    """One labeled word segment: where its features live and what it says."""

    id: str
    word: str
    split: str
    feature_path: str
    start_s: float
    end_s: float
    speaker: str

    def __post_init__(self):
        if self.end_s <= self.start_s:
            raise FrontendError(f"record {self.id}: end_s must exceed start_s")
        if self.split not in ("train", "test"):
            raise FrontendError(f"record {self.id}: unknown split {self.split!r}")

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


def read_wav(path) -> WaveForm:
    """Read a 16-bit PCM mono WAV file into a WaveForm.

    Sample values are scaled by 1/32768. Anything that is not plain
    16-bit mono PCM at 16 kHz is rejected.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            comptype = wf.getcomptype()
            raw = wf.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise FrontendError(f"malformed WAV file {path}: {exc}") from exc
    if comptype != "NONE":
        raise FrontendError(f"unsupported encoding {comptype!r} (need PCM)")
    if sampwidth != 2:
        raise FrontendError(f"unsupported sample width {sampwidth * 8} bit (need 16)")
    if n_channels != 1:
        raise FrontendError(f"non-mono audio ({n_channels} channels)")
    if n_frames == 0 or len(raw) == 0:
        raise FrontendError("empty audio")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return WaveForm(samples=samples, sample_rate=rate)


def hz_to_mel(f):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_breakpoints(n_mels: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """(n_mels + 2) filter edge/center frequencies in Hz, uniform on the mel axis.

    Filter m spans [pts[m], pts[m+2]] and peaks at pts[m+1]; each filter's
    edge sits on its neighbor's center, so adjacent responses cross halfway.
    """
    mel_pts = np.linspace(0.0, float(hz_to_mel(sample_rate / 2)), n_mels + 2)
    return mel_to_hz(mel_pts)


def _triangle_cell_average(left, center, right, lo, hi):
    """Mean of the triangular response over the frequency cell [lo, hi].

    Integrating instead of point-sampling keeps every filter row positive
    even when a narrow low-frequency triangle falls between FFT bins.
    """

    def _ramp_integral(a, b, x0, x1, rising):
        # integral of the linear ramp between x0 (height 0 or 1) and x1
        s, e = max(a, x0), min(b, x1)
        if e <= s or x1 <= x0:
            return 0.0
        if rising:
            h_s = (s - x0) / (x1 - x0)
            h_e = (e - x0) / (x1 - x0)
        else:
            h_s = (x1 - s) / (x1 - x0)
            h_e = (x1 - e) / (x1 - x0)
        return 0.5 * (h_s + h_e) * (e - s)

    if hi <= lo:
        return 0.0
    area = _ramp_integral(lo, hi, left, center, rising=True)
    area += _ramp_integral(lo, hi, center, right, rising=False)
    return area / (hi - lo)


def mel_filterbank(cfg: MelConfig, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular mel filterbank as an (n_mels, fft_size//2 + 1) matrix.

    Each entry is the triangle's average response over the corresponding
    FFT bin's frequency cell (cells clipped to [0, Nyquist]).
    """
    nyquist = sample_rate / 2.0
    n_bins = cfg.fft_size // 2 + 1
    pts = mel_breakpoints(cfg.n_mels, sample_rate)
    bin_width = sample_rate / cfg.fft_size
    centers = np.arange(n_bins) * bin_width
    cell_lo = np.clip(centers - bin_width / 2, 0.0, nyquist)
    cell_hi = np.clip(centers + bin_width / 2, 0.0, nyquist)

    fb = np.zeros((cfg.n_mels, n_bins), dtype=np.float64)
    for m in range(cfg.n_mels):
        left, center, right = pts[m], pts[m + 1], pts[m + 2]
        for k in range(n_bins):
            if cell_hi[k] <= left or cell_lo[k] >= right:
                continue
            fb[m, k] = _triangle_cell_average(
                left, center, right, cell_lo[k], cell_hi[k]
            )
    return fb


def compute_logmel(wave_in: WaveForm, cfg: MelConfig = MelConfig()) -> FeatureSequence:
    """Log-mel filterbank energies of a waveform.

    Frames of ``win_length`` samples every ``hop_length`` samples are
    Hann-windowed; the magnitude-squared spectrum is pooled through the
    triangular mel filterbank and floored before the natural log.

    Produces T = 1 + floor((len - win) / hop) frames.
    """
    x = wave_in.samples
    win, hop = cfg.win_length, cfg.hop_length
    if x.size < win:
        raise FrontendError(
            f"waveform of {x.size} samples is shorter than one window ({win})"
        )
    n_frames = 1 + (x.size - win) // hop
    window = np.hanning(win)
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * window[None, :]
    spectrum = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    fb = mel_filterbank(cfg, wave_in.sample_rate)
    energy = power @ fb.T
    logmel = np.log(np.maximum(energy, cfg.log_floor))
    return FeatureSequence(frames=logmel.astype(np.float32))


def duration_filter(records: list[ManifestRecord]) -> list[ManifestRecord]:
    """Keep segments lasting 0.5 to 2.0 seconds, boundaries inclusive."""
    return [r for r in records if 0.5 <= r.duration <= 2.0]


def write_features(seq: FeatureSequence, path) -> None:
    """Write a feature matrix to the little-endian binary feature format."""
    t, f = seq.frames.shape
    payload = np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", t, f))
        fh.write(payload)


def read_features(path) -> FeatureSequence:
    """Read a feature file written by :func:`write_features`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise FrontendError(f"bad magic {magic!r} in {path}")
        header = fh.read(8)
        if len(header) < 8:
            raise FrontendError(f"truncated header in {path}")
        t, f = struct.unpack("<II", header)
        payload = fh.read()
    expected = t * f * 4
    if len(payload) != expected:
        raise FrontendError(
            f"truncated feature file {path}: expected {expected} payload bytes, "
            f"got {len(payload)}"
        )
    frames = np.frombuffer(payload, dtype="<f4").reshape(t, f)
    return FeatureSequence(frames=frames.copy())


def write_manifest(records: list[ManifestRecord], path) -> None:
    """Write records as JSON lines, one record per line, UTF-8."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "id": r.id,
                        "word": r.word,
                        "split": r.split,
                        "feature_path": r.feature_path,
                        "start_s": r.start_s,
                        "end_s": r.end_s,
                        "speaker": r.speaker,
                    }
                )
            )
            fh.write("\n")


def read_manifest(path) -> list[ManifestRecord]:
    """Read a JSON-lines manifest, checking id uniqueness."""
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FrontendError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            rec = ManifestRecord(**obj)
            if rec.id in seen:
                raise FrontendError(f"{path}:{lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


def load_features_for(records: list[ManifestRecord], root) -> dict[str, FeatureSequence]:
    """Load each record's feature file, resolving paths relative to ``root``."""
    root = Path(root)
    return {r.id: read_features(root / r.feature_path) for r in records}
