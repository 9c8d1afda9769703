#!/usr/bin/env python3
"""Tour of the audio frontend: waveforms in, log-mel features out.

Builds a synthetic WAV on disk, loads it back, computes log-mel features,
and round-trips them through the binary feature format.
"""

import tempfile
import wave
from pathlib import Path

import numpy as np

from awelab import MelConfig, compute_logmel, read_features, read_wav, write_features
from awelab.frontend import mel_breakpoints

workdir = Path(tempfile.mkdtemp(prefix="awelab_demo_"))

# --- write a 1-second 16 kHz tone as 16-bit PCM -----------------------------
freq = float(mel_breakpoints(128)[97])  # center of mel filter 96
t = np.arange(16000) / 16000.0
tone = (0.5 * np.sin(2 * np.pi * freq * t) * 32767).astype("<i2")
wav_path = workdir / "tone.wav"
with wave.open(str(wav_path), "wb") as fh:
    fh.setnchannels(1)
    fh.setsampwidth(2)
    fh.setframerate(16000)
    fh.writeframes(tone.tobytes())
print(f"wrote a {freq:.0f} Hz tone to {wav_path}")

# --- load and featurize ------------------------------------------------------
wave_in = read_wav(wav_path)
print(f"samples: {wave_in.samples.size}, peak amplitude {wave_in.samples.max():.3f}")

cfg = MelConfig()  # 25 ms window, 10 ms hop, 128 mel bands
feats = compute_logmel(wave_in, cfg)
print(f"log-mel matrix: {feats.n_frames} frames x {feats.n_bins} bands")
print(f"frame-count formula: 1 + (16000 - {cfg.win_length}) // {cfg.hop_length} "
      f"= {1 + (16000 - cfg.win_length) // cfg.hop_length}")

# a pure tone at a filter's center frequency peaks in that filter, every frame
peaks = np.argmax(feats.frames, axis=1)
print(f"argmax mel band in every frame: {np.unique(peaks)} (tone sits in band 96)")

# --- binary feature files round-trip bit-exactly -----------------------------
feat_path = workdir / "tone.awe"
write_features(feats, feat_path)
back = read_features(feat_path)
print(f"feature file round-trip identical: {np.array_equal(feats.frames, back.frames)}")
print(f"file size: {feat_path.stat().st_size} bytes "
      f"(12-byte header + {feats.n_frames}x{feats.n_bins} float32)")
