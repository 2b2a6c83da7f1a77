#!/usr/bin/env python3
"""Audio frontend walkthrough: WAV round trip, log-mel features, normalization."""

import math
import tempfile
from pathlib import Path

import numpy as np

from conmamba.frontend import (
    FrontendConfig,
    compute_logmel,
    frame_count,
    load_wav,
    mel_center_frequencies,
    normalize,
    read_feature_cache,
    write_feature_cache,
    write_wav,
)

cfg = FrontendConfig()
workdir = Path(tempfile.mkdtemp(prefix="frontend_demo_"))

print("One second of a 1 kHz tone at 16 kHz, written and read back as PCM16:")
t = np.arange(16000) / 16000.0
tone = 0.5 * np.sin(2 * np.pi * 1000.0 * t)
wav_path = workdir / "tone.wav"
write_wav(wav_path, tone, 16000)
w = load_wav(wav_path)
print(f"  {w.samples.size} samples at {w.sample_rate} Hz, max {np.max(np.abs(w.samples)):.4f}")

print("\nFrame count follows (N - win) // hop + 1:")
print(f"  N=16000, win={cfg.win}, hop={cfg.hop} -> {frame_count(16000, cfg.win, cfg.hop)} frames")

mel = compute_logmel(w, cfg)
print(f"\nLog-mel features: {mel.frames.shape} (frames x mel bins)")
centers = mel_center_frequencies(cfg)
peak = int(np.argmax(mel.frames.mean(axis=0)))
print(f"  energy peaks in mel bin {peak}, centered at {centers[peak]:.0f} Hz")
print(f"  nearest filter center to 1 kHz is bin {int(np.argmin(np.abs(centers - 1000)))}")

print(f"\nSilence maps every cell to the log power floor: {math.log(1e-10):.2f}")

print("\nA steady tone has constant per-coefficient energy, so per-utterance")
print("normalization sends it to zero (variance-floor path). A signal that")
print("changes over time keeps unit variance instead:")
two_tone = np.concatenate([tone, 0.5 * np.sin(2 * np.pi * 2500.0 * t)])
write_wav(workdir / "two.wav", two_tone, 16000)
norm = normalize(compute_logmel(load_wav(workdir / "two.wav"), cfg))
varying = norm.frames.var(axis=0) > 0.5
print(f"  mean in [{norm.frames.mean(axis=0).min():.2e}, {norm.frames.mean(axis=0).max():.2e}]")
print(f"  {int(varying.sum())} of {norm.n_mels} coefficients carry unit variance; "
      f"the rest were constant (floored)")

cache = workdir / "tone.mlfb"
write_feature_cache(cache, norm.frames)
again = read_feature_cache(cache)
print(f"\nFeature cache round trip exact: {np.array_equal(again, norm.frames)} ({cache})")
