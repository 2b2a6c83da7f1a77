"""CTC training loop at desk scale: Adam, warmup schedule, checkpoints.

Reproducibility contract: one master seed derives independent streams for
parameter init, per-epoch data order, and per-step dropout, all keyed
statelessly (seed, purpose, step), so resuming from a checkpoint replays
the exact stream an uninterrupted run would have seen.

Checkpoint container: magic ``MLMA``, version u32, header-length u32, a
JSON header (config, step, vocab digest, tensor names/shapes/offsets,
payload CRC32), then float32 little-endian tensor payloads in header
order. Parameters and Adam moments round-trip bit-exactly; writes are
atomic (temp file + rename). The payload is float32 by format: float64
training (a verification mode) downcasts on save.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ctc, metrics
from .data import bucket_batches, default_featurizer, plan_epoch
from .encoder import EncoderConfig, EncoderOutput, encode, init_encoder, named_params
from .tensor import Tensor
from .tokenizer import normalize_text

CKPT_MAGIC = b"MLMA"
CKPT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.98
ADAM_EPS = 1e-9


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    """Format version this build cannot load; migrate explicitly."""


class CheckpointIntegrityError(CheckpointError):
    """Payload truncated or corrupted."""


class VocabMismatchError(CheckpointError):
    """Checkpoint was trained against a different vocabulary."""


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_peak: float = 1e-3
    warmup_steps: int = 200
    max_steps: int = 2000
    grad_clip: float = 5.0
    seed: int = 0
    max_frames_per_batch: int = 2000
    eval_every: int = 500
    precision: str = "float32"

    def __post_init__(self):
        for name in ("lr_peak", "warmup_steps", "max_steps", "grad_clip",
                     "max_frames_per_batch", "eval_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.warmup_steps > self.max_steps:
            raise ValueError("TrainConfig.warmup_steps must not exceed max_steps")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"TrainConfig.precision must be float32 or float64, got {self.precision}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32


def noam_lr(step, lr_peak, warmup_steps):
    """lr(step) = lr_peak * min(step / warmup, sqrt(warmup / step)).

    Linear ramp to lr_peak at step == warmup_steps, then inverse-sqrt decay.
    """
    if step < 1:
        raise ValueError("noam_lr: steps are 1-based")
    return lr_peak * min(step / warmup_steps, math.sqrt(warmup_steps / step))


def global_grad_norm(params):
    total = 0.0
    for t in params.values():
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def clip_gradients(params, max_norm):
    """Scale all gradients so the global L2 norm is at most ``max_norm``.
    Returns (pre-clip norm, post-clip norm)."""
    pre = global_grad_norm(params)
    if pre > max_norm and pre > 0.0:
        scale = max_norm / pre
        for t in params.values():
            if t.grad is not None:
                t.grad *= scale
    return pre, min(pre, max_norm)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def fresh(cls, params):
        return cls(m={k: np.zeros_like(t.data) for k, t in params.items()},
                   v={k: np.zeros_like(t.data) for k, t in params.items()},
                   step=0)


def adam_update(params, state, lr):
    state.step += 1
    b1c = 1.0 - ADAM_BETA1 ** state.step
    b2c = 1.0 - ADAM_BETA2 ** state.step
    for k, t in params.items():
        g = t.grad
        if g is None:
            continue
        state.m[k] = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g
        state.v[k] = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g * g
        mhat = state.m[k] / b1c
        vhat = state.v[k] / b2c
        t.data -= (lr * mhat / (np.sqrt(vhat) + ADAM_EPS)).astype(t.data.dtype)
        t.grad = None


# -- checkpoint container ---------------------------------------------------


@dataclass
class TrainState:
    encoder_cfg: EncoderConfig
    params: object          # EncoderParams
    adam: AdamState
    step: int
    vocab_digest: str


def save_checkpoint(state, path):
    named = named_params(state.params)
    tensors = dict(named)
    for k in named:
        tensors[f"adam.m.{k}"] = Tensor(state.adam.m[k])
        tensors[f"adam.v.{k}"] = Tensor(state.adam.v[k])

    entries = []
    payload = bytearray()
    for name, t in tensors.items():
        buf = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(t.shape),
                        "offset": len(payload), "nbytes": len(buf)})
        payload.extend(buf)
    header = {
        "format_version": CKPT_VERSION,
        "encoder_config": dataclasses.asdict(state.encoder_cfg),
        "step": state.step,
        "adam_step": state.adam.step,
        "vocab_digest": state.vocab_digest,
        "tensors": entries,
        "payload_nbytes": len(payload),
        "payload_crc32": zlib.crc32(bytes(payload)),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(blob)))
        f.write(blob)
        f.write(bytes(payload))
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != CKPT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads {CKPT_VERSION}; migrate the file explicitly"
        )
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    payload = raw[12 + hlen:]
    if len(payload) != header["payload_nbytes"]:
        raise CheckpointIntegrityError(
            f"{path}: payload is {len(payload)} bytes, header promises {header['payload_nbytes']}"
        )
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise CheckpointIntegrityError(f"{path}: payload CRC mismatch")

    cfg = EncoderConfig(**header["encoder_config"])
    params = init_encoder(cfg, seed=0)
    named = named_params(params)
    adam = AdamState.fresh(named)
    adam.step = header["adam_step"]
    loaded = {}
    for e in header["tensors"]:
        buf = np.frombuffer(payload, dtype="<f4", count=int(np.prod(e["shape"])) if e["shape"] else 1,
                            offset=e["offset"]).reshape(e["shape"]).copy()
        loaded[e["name"]] = buf
    for k, t in named.items():
        if k not in loaded:
            raise CheckpointError(f"{path}: tensor {k!r} missing from checkpoint")
        if list(t.shape) != list(loaded[k].shape):
            raise CheckpointError(f"{path}: tensor {k!r} has shape {loaded[k].shape}, expected {t.shape}")
        t.data[...] = loaded[k]
        adam.m[k][...] = loaded[f"adam.m.{k}"]
        adam.v[k][...] = loaded[f"adam.v.{k}"]
    return TrainState(encoder_cfg=cfg, params=params, adam=adam,
                      step=header["step"], vocab_digest=header["vocab_digest"])


# -- training -----------------------------------------------------------------


def encode_target(vocab):
    def fn(rec):
        return vocab.encode(normalize_text(rec.transcript, vocab.lowercase), utterance_id=rec.id)
    return fn


def batch_loss(batch, params, cfg, dtype, train, rng):
    """Mean over the batch of per-utterance CTC loss divided by target length.

    The division keeps the gradient scale comparable across short and long
    transcripts; padding frames never enter (each item is sliced to its true
    length).
    """
    from . import tensor as tz

    total = None
    per_frame_nats = 0.0
    frames = 0
    for i in range(batch.size):
        feats = Tensor(batch.features[i, :batch.feature_lengths[i]], dtype=dtype)
        out = encode(feats, params, cfg, train=train, rng=rng)
        if not np.all(np.isfinite(out.log_probs.data)):
            raise TrainingDivergedError(
                f"non-finite encoder output for utterance {batch.ids[i]!r}; batch ids: {batch.ids}"
            )
        loss_i = ctc.ctc_loss_t(out.log_probs, batch.targets[i])
        per_frame_nats += float(loss_i.data)
        frames += out.out_length
        scaled = loss_i * (1.0 / max(1, len(batch.targets[i])))
        total = scaled if total is None else tz.add(total, scaled)
    mean = total * (1.0 / batch.size)
    return mean, per_frame_nats / max(1, frames)


def train(train_cfg, encoder_cfg, records, vocab, out_dir,
          featurizer=None, resume_from=None, log=None, stop_when=None):
    """Run CTC training; returns (TrainState, metrics rows, checkpoint paths).

    Writes ``metrics.csv`` (step, loss, lr, grad_norm) plus a human-readable
    ``train.log`` into ``out_dir``; checkpoints land there every
    ``eval_every`` steps and at the end. ``stop_when(state) -> bool`` is
    polled at checkpoint time for early stopping (used by overfit runs).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    featurizer = featurizer or default_featurizer()
    dtype = train_cfg.dtype

    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if state.vocab_digest != vocab.digest():
            raise VocabMismatchError(
                f"checkpoint vocab digest {state.vocab_digest[:12]}... does not match the supplied vocabulary"
            )
        encoder_cfg = state.encoder_cfg
    else:
        params = init_encoder(encoder_cfg, seed=train_cfg.seed, dtype=dtype)
        named = named_params(params)
        state = TrainState(encoder_cfg=encoder_cfg, params=params,
                           adam=AdamState.fresh(named), step=0,
                           vocab_digest=vocab.digest())
    named = named_params(state.params)

    log_path = out_dir / "train.log"
    metrics_path = out_dir / "metrics.csv"
    fresh_metrics = not metrics_path.exists() or resume_from is None
    metrics_file = open(metrics_path, "w" if fresh_metrics else "a", newline="")
    writer = csv.writer(metrics_file)
    if fresh_metrics:
        writer.writerow(["step", "loss", "lr", "grad_norm"])

    def emit(line):
        with open(log_path, "a") as f:
            f.write(line + "\n")
        if log:
            log(line)

    target_fn = encode_target(vocab)
    rows = []
    ckpts = []
    start_step = state.step
    step = state.step
    epoch = 0
    stop = False
    try:
        while step < train_cfg.max_steps and not stop:
            plan = plan_epoch(records, train_cfg.max_frames_per_batch,
                              train_cfg.seed, epoch=epoch)
            if not plan:
                raise ValueError("train: empty manifest")
            for batch_index, batch_records in enumerate(plan):
                if step >= train_cfg.max_steps or stop:
                    break
                # resume: skip batches consumed before the checkpoint
                if epoch * len(plan) + batch_index < start_step:
                    continue
                from .data import materialize_batch

                batch = materialize_batch(batch_records, featurizer, target_fn)
                step_rng = np.random.default_rng([train_cfg.seed, 2, step])
                loss_t, per_frame = batch_loss(batch, state.params, state.encoder_cfg,
                                               dtype, train=True, rng=step_rng)
                if not np.isfinite(loss_t.data):
                    raise TrainingDivergedError(
                        f"non-finite loss at step {step + 1}; batch ids: {batch.ids}"
                    )
                loss_t.backward()
                pre_norm, _ = clip_gradients(named, train_cfg.grad_clip)
                lr = noam_lr(step + 1, train_cfg.lr_peak, train_cfg.warmup_steps)
                adam_update(named, state.adam, lr)
                step += 1
                state.step = step
                loss = float(loss_t.data)
                rows.append((step, loss, lr, pre_norm))
                writer.writerow([step, f"{loss:.6f}", f"{lr:.8f}", f"{pre_norm:.6f}"])
                metrics_file.flush()
                if step % 50 == 0 or step == 1:
                    emit(f"step {step:>6}  loss {loss:8.4f}  per-frame {per_frame:6.3f}  "
                         f"lr {lr:.2e}  grad_norm {pre_norm:8.3f}")
                if step % train_cfg.eval_every == 0 or step == train_cfg.max_steps:
                    path = out_dir / f"step{step:06d}.ckpt"
                    save_checkpoint(state, path)
                    ckpts.append(path)
                    if stop_when is not None and stop_when(state):
                        emit(f"stop condition met at step {step}")
                        stop = True
            epoch += 1
    finally:
        metrics_file.close()
    if not ckpts or ckpts[-1].name != f"step{step:06d}.ckpt":
        path = out_dir / f"step{step:06d}.ckpt"
        save_checkpoint(state, path)
        ckpts.append(path)
    return state, rows, ckpts


def decode_utterance(state, feats):
    out = encode(Tensor(np.asarray(feats, dtype=np.float32)), state.params,
                 state.encoder_cfg, train=False)
    return ctc.greedy_decode(out.log_probs.data), out


def validate(state, records, vocab, featurizer=None, dataset_name="dev"):
    """Greedy-decode every utterance; per-language WER plus mean loss.

    Returns (cells, mean_loss, hyps) where cells is {dataset: {lang: wer%}}
    ready for report rendering and hyps maps utterance id -> text.
    """
    featurizer = featurizer or default_featurizer()
    by_lang = {}
    hyps = {}
    losses = []
    for rec in records:
        feats = featurizer(rec)
        ids, out = decode_utterance(state, feats)
        text = vocab.decode(ids)
        hyps[rec.id] = text
        ref = normalize_text(rec.transcript, vocab.lowercase)
        by_lang.setdefault(rec.language, []).append(metrics.wer(ref, text))
        target = vocab.encode(ref, utterance_id=rec.id)
        losses.append(ctc.ctc_loss(out.log_probs.data.astype(np.float64), target)
                      / max(1, len(target)))
    cells = {dataset_name: {lang: 100.0 * metrics.aggregate(b) for lang, b in by_lang.items()}}
    return cells, float(np.mean(losses)), hyps
