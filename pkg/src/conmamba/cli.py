"""Command-line surface tying the pipeline together.

Subcommands: featurize, build-vocab, train, decode, eval, gradcheck,
bench-scan, stats. Training reads a declarative JSON config file
(``{"encoder": {...}, "train": {...}}``); individual flags override file
keys. Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data, frontend, metrics, synth
from .encoder import EncoderConfig
from .tokenizer import build_vocab, load_vocab, normalize_text, save_vocab
from .train import TrainConfig, load_checkpoint, train, validate


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


class CliError(ValueError):
    pass


def _build_parser():
    p = _Parser(prog="conmamba", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("featurize", help="WAV manifest -> normalized log-mel cache files")
    f.add_argument("--manifest", required=True)
    f.add_argument("--out-dir", required=True)

    v = sub.add_parser("build-vocab", help="character vocabulary from manifest transcripts")
    v.add_argument("--manifest", required=True, nargs="+")
    v.add_argument("--out", required=True)
    v.add_argument("--no-lowercase", action="store_true")

    t = sub.add_parser("train", help="CTC training run")
    t.add_argument("--config", help="JSON file with encoder/train sections")
    t.add_argument("--manifest", required=True)
    t.add_argument("--vocab", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--feature-dir", help="read .mlfb caches from here when present")
    t.add_argument("--resume-from")
    t.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value, e.g. train.max_steps=500")

    d = sub.add_parser("decode", help="greedy-decode a manifest into hypotheses JSONL")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--manifest", required=True)
    d.add_argument("--vocab", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--feature-dir")

    e = sub.add_parser("eval", help="score hypotheses against reference manifests")
    e.add_argument("--pair", action="append", required=True, metavar="NAME=REFS:HYPS",
                   help="dataset name, reference manifest, hypotheses JSONL")
    e.add_argument("--report-out", help="basename for .txt/.csv report files")
    e.add_argument("--cer", action="store_true", help="also print diagnostic character error rates")

    g = sub.add_parser("gradcheck", help="finite-difference verification battery")
    g.add_argument("--skip-stack", action="store_true", help="per-op checks only")

    b = sub.add_parser("bench-scan", help="sequential vs chunked scan throughput")
    b.add_argument("--t", type=int, default=4096)
    b.add_argument("--d-inner", type=int, default=256)
    b.add_argument("--n-state", type=int, default=16)
    b.add_argument("--chunks", type=int, nargs="+", default=[16, 64, 256])
    b.add_argument("--repeats", type=int, default=3)

    s = sub.add_parser("stats", help="per-language training-hours table")
    s.add_argument("manifests", nargs="+")
    s.add_argument("--csv-out")

    y = sub.add_parser("synth-corpus", help="generate the tone-coded synthetic corpus")
    y.add_argument("--out-dir", required=True)
    y.add_argument("--utterances", type=int, default=20)
    y.add_argument("--seed", type=int, default=0)
    return p


def _load_config(path, overrides):
    sections = {"encoder": {}, "train": {}}
    if path:
        with open(path) as f:
            loaded = json.load(f)
        for key in loaded:
            if key not in sections:
                raise CliError(f"config: unknown section {key!r} (expected encoder/train)")
            sections[key].update(loaded[key])
    for item in overrides:
        try:
            dotted, value = item.split("=", 1)
            section, key = dotted.split(".", 1)
        except ValueError:
            raise CliError(f"--set expects SECTION.KEY=VALUE, got {item!r}") from None
        if section not in sections:
            raise CliError(f"--set: unknown section {section!r}")
        try:
            sections[section][key] = json.loads(value)
        except json.JSONDecodeError:
            sections[section][key] = value
    return sections


def _cmd_featurize(args):
    records = data.load_manifest(args.manifest)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        frames = frontend.extract_features(rec.audio_path)
        frontend.write_feature_cache(out / f"{rec.id}.mlfb", frames)
    print(f"wrote {len(records)} feature caches to {out}")
    return 0


def _cmd_build_vocab(args):
    transcripts = []
    for m in args.manifest:
        transcripts += [r.transcript for r in data.load_manifest(m)]
    vocab = build_vocab(transcripts, lowercase=not args.no_lowercase)
    save_vocab(vocab, args.out)
    print(f"vocabulary of {len(vocab)} symbols written to {args.out}")
    return 0


def _cmd_train(args):
    sections = _load_config(args.config, args.set)
    encoder_cfg = EncoderConfig(**sections["encoder"])
    train_cfg = TrainConfig(**sections["train"])
    records = data.load_manifest(args.manifest)
    vocab = load_vocab(args.vocab)
    featurizer = data.default_featurizer(feature_dir=args.feature_dir)
    state, rows, ckpts = train(train_cfg, encoder_cfg, records, vocab, args.out_dir,
                               featurizer=featurizer, resume_from=args.resume_from,
                               log=print)
    print(f"finished at step {state.step}; final checkpoint {ckpts[-1]}")
    return 0


def _cmd_decode(args):
    state = load_checkpoint(args.checkpoint)
    vocab = load_vocab(args.vocab)
    if state.vocab_digest != vocab.digest():
        raise CliError("checkpoint vocabulary digest does not match --vocab")
    records = data.load_manifest(args.manifest)
    featurizer = data.default_featurizer(feature_dir=args.feature_dir)
    _, _, hyps = validate(state, records, vocab, featurizer=featurizer)
    with open(args.out, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps({"id": rec.id, "language": rec.language,
                                "text": hyps[rec.id]}, ensure_ascii=False) + "\n")
    print(f"wrote {len(records)} hypotheses (greedy CTC decoding) to {args.out}")
    return 0


def _read_hyps(path):
    hyps = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "id" not in obj or "text" not in obj:
                raise CliError(f"{path}:{lineno}: hypotheses need id and text fields")
            hyps[obj["id"]] = obj["text"]
    return hyps


def _cmd_eval(args):
    cells = {}
    cer_cells = {}
    for spec_item in args.pair:
        try:
            name, rest = spec_item.split("=", 1)
            refs_path, hyps_path = rest.split(":", 1)
        except ValueError:
            raise CliError(f"--pair expects NAME=REFS:HYPS, got {spec_item!r}") from None
        records = data.load_manifest(refs_path)
        hyps = _read_hyps(hyps_path)
        by_lang = {}
        by_lang_cer = {}
        for rec in records:
            if rec.id not in hyps:
                raise CliError(f"{hyps_path}: missing hypothesis for utterance {rec.id!r}")
            ref = normalize_text(rec.transcript)
            hyp = normalize_text(hyps[rec.id])
            by_lang.setdefault(rec.language, []).append(metrics.wer(ref, hyp))
            by_lang_cer.setdefault(rec.language, []).append(metrics.cer(ref, hyp))
        cells[name] = {lang: 100.0 * metrics.aggregate(b) for lang, b in by_lang.items()}
        cer_cells[name] = {lang: 100.0 * metrics.aggregate(b) for lang, b in by_lang_cer.items()}
    text, csv_text = metrics.render_report(cells)
    print("WER (%)")
    print(text)
    if args.cer:
        print("\nCER (%) — diagnostic")
        print(metrics.render_report(cer_cells)[0])
    if args.report_out:
        Path(args.report_out + ".txt").write_text(text + "\n")
        Path(args.report_out + ".csv").write_text(csv_text)
        print(f"\nreport written to {args.report_out}.txt / .csv")
    return 0


def _cmd_gradcheck(args):
    from .verification import run_battery

    ok = run_battery(include_stack=not args.skip_stack)
    print("all gradient checks passed" if ok else "gradient check FAILURES")
    return 0 if ok else 2


def _cmd_bench_scan(args):
    from .ssm import init_ssm_core, ssm_scan_chunked, ssm_scan_sequential
    from .tensor import Tensor

    rng = np.random.default_rng(0)
    core = init_ssm_core(args.d_inner, args.n_state, rng)
    x = Tensor(rng.normal(size=(args.t, args.d_inner)).astype(np.float32))

    def clock(fn):
        fn()  # warm-up
        best = float("inf")
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        return best

    rows = [("sequential", clock(lambda: ssm_scan_sequential(x, core)))]
    for chunk in args.chunks:
        rows.append((f"chunk={chunk}", clock(lambda c=chunk: ssm_scan_chunked(x, core, c))))
    print(f"selective scan, T={args.t}, d_inner={args.d_inner}, n_state={args.n_state} (float32)")
    print(f"{'variant':<14} {'seconds':>10} {'frames/s':>12}")
    for name, secs in rows:
        print(f"{name:<14} {secs:>10.4f} {args.t / secs:>12.0f}")
    return 0


def _cmd_stats(args):
    per_dataset = {}
    for m in args.manifests:
        per_dataset[Path(m).stem] = data.load_manifest(m)
    text, csv_text = data.render_hours_table(per_dataset)
    print(text)
    if args.csv_out:
        Path(args.csv_out).write_text(csv_text)
    return 0


def _cmd_synth_corpus(args):
    manifest = synth.make_tone_corpus(args.out_dir, n_utterances=args.utterances, seed=args.seed)
    print(f"manifest written to {manifest}")
    return 0


_COMMANDS = {
    "featurize": _cmd_featurize,
    "build-vocab": _cmd_build_vocab,
    "train": _cmd_train,
    "decode": _cmd_decode,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "bench-scan": _cmd_bench_scan,
    "stats": _cmd_stats,
    "synth-corpus": _cmd_synth_corpus,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
