#!/usr/bin/env python3
"""Manifests, per-language statistics, the character vocabulary, batching."""

import tempfile
from collections import Counter
from pathlib import Path

from conmamba.data import (
    estimated_frames,
    load_manifest,
    plan_epoch,
    render_hours_table,
)
from conmamba.synth import make_tone_corpus
from conmamba.tokenizer import build_vocab, normalize_text

workdir = Path(tempfile.mkdtemp(prefix="corpus_demo_"))
manifest = make_tone_corpus(workdir, n_utterances=12, seed=4)
records = load_manifest(manifest)

print(f"Manifest {manifest} holds {len(records)} validated records:")
r = records[0]
print(f"  {r.id}: {r.duration_s:.2f}s of {r.language!r} saying {r.transcript!r}")

print("\nPer-language hours in the dataset/language table shape:")
text, csv_text = render_hours_table({"tones": records})
print(text)
print("\nCSV form:\n" + csv_text.strip())

print("\nText normalization is shared by training targets and scoring:")
sample = "  Hello,   World!  "
print(f"  {sample!r} -> {normalize_text(sample)!r}")

vocab = build_vocab([r.transcript for r in records])
print(f"\nCharacter vocabulary ({len(vocab)} ids, 3 reserved):")
print("  " + " ".join(repr(s) for s in vocab.symbols))
ids = vocab.encode(normalize_text(records[0].transcript))
print(f"  encode({records[0].transcript!r}) = {ids}")
print(f"  decode back: {vocab.decode(ids)!r}")

print("\nBatching groups similar durations under a padded-frame budget:")
plan = plan_epoch(records, max_frames_per_batch=300, seed=5)
for i, batch in enumerate(plan):
    frames = [estimated_frames(x.duration_s) for x in batch]
    print(f"  batch {i}: {len(batch)} utts, frames {frames}, "
          f"padded total {len(batch) * max(frames)} <= 300")
counts = Counter(x.id for b in plan for x in b)
print(f"  every utterance exactly once: {set(counts.values()) == {1}}")
