"""Manifest-driven multilingual corpus handling.

A manifest is line-delimited JSON, one utterance per line:

    {"id": ..., "audio_path": ..., "transcript": ..., "language": ..., "duration_s": ...}

Batching groups utterances of similar duration under a padded-frame budget
(batch_size * longest_T <= max_frames_per_batch) so padding waste stays
bounded. Language sampling is natural by default — every record appears
exactly once per epoch; an optional per-language repeat map exists for
rebalancing experiments and knowingly breaks that partition property.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import frontend
from .frontend import FrontendConfig

REQUIRED_FIELDS = ("id", "audio_path", "transcript", "language", "duration_s")


class ManifestError(ValueError):
    pass


class BatchBudgetError(ValueError):
    pass


@dataclass
class UtteranceRecord:
    id: str
    audio_path: str
    transcript: str
    language: str
    duration_s: float


@dataclass
class Batch:
    features: np.ndarray        # [B, T_max, n_mels] float32, zero padded
    feature_lengths: list       # true frame counts
    targets: list               # list of id lists (true lengths implicit)
    languages: list
    ids: list

    @property
    def size(self):
        return len(self.ids)


def load_manifest(path):
    """Parse and validate a JSONL manifest; order is preserved."""
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise ManifestError(f"{path}:{lineno}: expected a JSON object")
            for fname in REQUIRED_FIELDS:
                if fname not in obj:
                    raise ManifestError(f"{path}:{lineno}: missing field {fname!r}")
            rec = UtteranceRecord(
                id=str(obj["id"]),
                audio_path=str(obj["audio_path"]),
                transcript=str(obj["transcript"]),
                language=str(obj["language"]),
                duration_s=float(obj["duration_s"]),
            )
            if rec.duration_s <= 0:
                raise ManifestError(f"{path}:{lineno}: duration_s must be positive, got {rec.duration_s}")
            if not rec.language:
                raise ManifestError(f"{path}:{lineno}: empty language tag")
            if rec.id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate utterance id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


def corpus_stats(records):
    """Hours per language plus the total, as (dict, float)."""
    hours = {}
    for rec in records:
        hours[rec.language] = hours.get(rec.language, 0.0) + rec.duration_s / 3600.0
    return hours, sum(hours.values())


def render_hours_table(per_dataset):
    """Dataset-by-language hours table (text and CSV).

    ``per_dataset`` maps dataset name -> record list. Missing cells render
    as '-'; the final row is the per-language total.
    """
    stats = {name: corpus_stats(recs)[0] for name, recs in per_dataset.items()}
    languages = sorted({lang for s in stats.values() for lang in s})
    header = ["Dataset"] + languages + ["Total"]
    rows = []
    for name in stats:
        cells = [f"{stats[name][lang]:.2f}" if lang in stats[name] else "-" for lang in languages]
        rows.append([name] + cells + [f"{sum(stats[name].values()):.2f}"])
    totals = [sum(s.get(lang, 0.0) for s in stats.values()) for lang in languages]
    rows.append(["Total:"] + [f"{t:.2f}" for t in totals] + [f"{sum(totals):.2f}"])

    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    text = "\n".join(lines)

    csv_lines = ["dataset,language,hours"]
    for name in stats:
        for lang in languages:
            if lang in stats[name]:
                csv_lines.append(f"{name},{lang},{stats[name][lang]:.6f}")
    return text, "\n".join(csv_lines) + "\n"


def estimated_frames(duration_s, cfg=None):
    """Feature frames implied by a duration, via the frontend's formula."""
    cfg = cfg or FrontendConfig()
    return frontend.frame_count(int(round(duration_s * cfg.sample_rate)), cfg.win, cfg.hop)


def plan_epoch(records, max_frames_per_batch, seed, epoch=0, cfg=None, language_repeats=None):
    """Deterministic duration-bucketed batch plan for one epoch.

    Records are shuffled (tie diversity), stably sorted by frame count, and
    packed greedily so that batch_size * max_frames_in_batch never exceeds
    the budget; the batch order is then shuffled. Every record appears
    exactly once unless ``language_repeats`` asks for duplication.
    """
    cfg = cfg or FrontendConfig()
    pool = list(records)
    if language_repeats:
        for rec in records:
            extra = int(language_repeats.get(rec.language, 1)) - 1
            pool.extend([rec] * extra)
    if not pool:
        return []
    frames = {id(rec): max(1, estimated_frames(rec.duration_s, cfg)) for rec in pool}
    worst = max(pool, key=lambda r: frames[id(r)])
    if frames[id(worst)] > max_frames_per_batch:
        raise BatchBudgetError(
            f"utterance {worst.id!r} needs {frames[id(worst)]} frames, over the batch budget {max_frames_per_batch}"
        )
    rng = np.random.default_rng([int(seed), 1, int(epoch)])
    order = rng.permutation(len(pool))
    shuffled = [pool[i] for i in order]
    shuffled.sort(key=lambda r: frames[id(r)])  # stable: keeps shuffle among ties
    batches = []
    current = []
    for rec in shuffled:
        # sorted ascending, so the incoming record sets the padded length
        if current and (len(current) + 1) * frames[id(rec)] > max_frames_per_batch:
            batches.append(current)
            current = []
        current.append(rec)
    if current:
        batches.append(current)
    batch_order = rng.permutation(len(batches))
    return [batches[i] for i in batch_order]


def default_featurizer(feature_dir=None, cfg=None):
    """Record -> normalized log-mel frames, optionally through a cache dir."""
    cfg = cfg or FrontendConfig()

    def featurize(rec):
        if feature_dir is not None:
            cache = Path(feature_dir) / f"{rec.id}.mlfb"
            if cache.exists():
                return frontend.read_feature_cache(cache)
        return frontend.extract_features(rec.audio_path, cfg)

    return featurize


def materialize_batch(batch_records, featurizer, encode_target):
    """Pad features to the longest item and attach encoded targets."""
    feats = [np.asarray(featurizer(rec), dtype=np.float32) for rec in batch_records]
    lengths = [f.shape[0] for f in feats]
    t_max = max(lengths)
    n_mels = feats[0].shape[1]
    padded = np.zeros((len(feats), t_max, n_mels), dtype=np.float32)
    for i, f in enumerate(feats):
        padded[i, :f.shape[0]] = f
    return Batch(
        features=padded,
        feature_lengths=lengths,
        targets=[encode_target(rec) for rec in batch_records],
        languages=[rec.language for rec in batch_records],
        ids=[rec.id for rec in batch_records],
    )


def bucket_batches(records, max_frames_per_batch, seed, featurizer, encode_target,
                   epoch=0, cfg=None, language_repeats=None):
    """Iterator of materialized batches for one epoch.

    Pure generator: it is safe to drive from a prefetch thread, and the
    sequence of batches is a deterministic function of (records, budget,
    seed, epoch).
    """
    plan = plan_epoch(records, max_frames_per_batch, seed, epoch, cfg, language_repeats)
    for batch_records in plan:
        yield materialize_batch(batch_records, featurizer, encode_target)
