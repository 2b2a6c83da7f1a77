"""Synthetic tone-coded speech for end-to-end tests and demos.

Each "word" is a pure tone at a fixed frequency; two synthetic languages
use disjoint word inventories on interleaved frequency grids, so the
acoustics are trivially separable and a small model can be driven to 0%
error. Useful for exercising the full pipeline (featurize -> train ->
decode -> score) in minutes on a CPU.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .frontend import write_wav

WORD_TONES = {
    "syn1": {"ba": 330.0, "di": 550.0, "ko": 770.0, "mu": 990.0},
    "syn2": {"za": 440.0, "pe": 660.0, "lu": 880.0, "ti": 1100.0},
}

WORD_S = 0.16
GAP_S = 0.08
EDGE_S = 0.05
AMP = 0.4


def synth_utterance(words, language, sample_rate=16000):
    """Waveform for a word sequence: tones separated by short silences."""
    tones = WORD_TONES[language]
    pieces = [np.zeros(int(EDGE_S * sample_rate))]
    for w, word in enumerate(words):
        if w:
            pieces.append(np.zeros(int(GAP_S * sample_rate)))
        n = int(WORD_S * sample_rate)
        t = np.arange(n) / sample_rate
        tone = AMP * np.sin(2.0 * np.pi * tones[word] * t)
        ramp = min(80, n // 4)
        env = np.ones(n)
        env[:ramp] = np.linspace(0.0, 1.0, ramp)
        env[-ramp:] = np.linspace(1.0, 0.0, ramp)
        pieces.append(tone * env)
    pieces.append(np.zeros(int(EDGE_S * sample_rate)))
    return np.concatenate(pieces)


def make_tone_corpus(out_dir, n_utterances=20, seed=0, min_words=1, max_words=3,
                     sample_rate=16000):
    """Write WAVs plus a manifest; returns the manifest path.

    Utterances alternate between the two synthetic languages; word choices
    are seeded, so the corpus is a pure function of its arguments.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    languages = sorted(WORD_TONES)
    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as mf:
        for i in range(n_utterances):
            language = languages[i % len(languages)]
            inventory = sorted(WORD_TONES[language])
            count = int(rng.integers(min_words, max_words + 1))
            words = [inventory[k] for k in rng.integers(0, len(inventory), count)]
            wave = synth_utterance(words, language, sample_rate)
            wav_path = out_dir / f"{language}_{i:03d}.wav"
            write_wav(wav_path, wave, sample_rate)
            mf.write(json.dumps({
                "id": f"{language}_{i:03d}",
                "audio_path": str(wav_path),
                "transcript": " ".join(words),
                "language": language,
                "duration_s": wave.size / sample_rate,
            }) + "\n")
    return manifest_path
