"""Command-line surface: preprocess, generate, train, evaluate, predict.

Flags can come from a flat JSON config file (``--config``); explicit flags
override file values, unknown config keys are rejected. All validation runs
before any output is written.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import network, synth, training
from .autodiff import Tensor, no_grad
from .ctc import Alphabet, AlphabetMismatchError, greedy_decode
from .evaluation import report
from .imaging import EmptyInkError, InkThreshold, load_image, save_image
from .synth import (
    DatasetManifest,
    JoinMode,
    NoCoverableWordsError,
    ingest_annotated_pages,
    load_glyph_corpus,
    load_lexicon,
    normalize_glyph,
)
from .training import load_checkpoint, preprocess_for_net

log = logging.getLogger("glyphforge")


class UsageError(ValueError):
    """Bad arguments or config; exits with status 2."""


def _apply_config_file(args: argparse.Namespace, parser_defaults: dict) -> None:
    """Fill unset flags from the JSON config file, rejecting unknown keys."""
    if not getattr(args, "config", None):
        for key, default in parser_defaults.items():
            if getattr(args, key, None) is None:
                setattr(args, key, default)
        return
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file {path} not found")
    try:
        values = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(values, dict):
        raise UsageError(f"config file {path} must hold a flat JSON object")
    unknown = set(values) - set(parser_defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for key, default in parser_defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, values.get(key, default))


def _require(path: str | Path, kind: str) -> Path:
    p = Path(path)
    if kind == "file" and not p.is_file():
        raise UsageError(f"{p} is not a file")
    if kind == "dir" and not p.is_dir():
        raise UsageError(f"{p} is not a directory")
    if kind == "any" and not p.exists():
        raise UsageError(f"{p} does not exist")
    return p


# -- preprocess -------------------------------------------------------------

PREPROCESS_DEFAULTS = {"glyph_size": 128, "threshold": 0.98, "strict": False}


def cmd_preprocess(args: argparse.Namespace) -> int:
    corpus_in = _require(args.corpus_in, "dir")
    if not 0.0 < args.threshold < 1.0:
        raise UsageError(f"--threshold must lie in (0, 1), got {args.threshold}")
    if args.glyph_size < 1:
        raise UsageError("--glyph-size must be >= 1")
    out = Path(args.out)
    threshold = InkThreshold(args.threshold)
    size = (args.glyph_size, args.glyph_size)
    counts: dict[str, int] = {}
    skipped: list[str] = []
    label_dirs = sorted(p for p in corpus_in.iterdir() if p.is_dir())
    if not label_dirs:
        raise UsageError(f"{corpus_in} has no label subdirectories")
    for label_dir in label_dirs:
        for png in sorted(label_dir.glob("*.png")):
            try:
                raster = normalize_glyph(load_image(png), size, threshold)
            except (EmptyInkError, ValueError) as exc:
                if args.strict:
                    log.error("%s: %s", png, exc)
                    return 1
                log.warning("skipping %s: %s", png, exc)
                skipped.append(str(png))
                continue
            dest = out / label_dir.name
            dest.mkdir(parents=True, exist_ok=True)
            save_image(raster, dest / png.name)
            counts[label_dir.name] = counts.get(label_dir.name, 0) + 1
    summary = {"labels": counts, "total": sum(counts.values()), "skipped": skipped}
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(
        json.dumps(summary, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    print(f"normalized {summary['total']} glyphs over {len(counts)} labels "
          f"({len(skipped)} skipped) -> {out}")
    return 0


# -- generate ---------------------------------------------------------------

GENERATE_DEFAULTS = {
    "mode": "non_overlapped",
    "overlap": None,
    "count": 100,
    "seed": 0,
    "glyph_size": 128,
}


def cmd_generate(args: argparse.Namespace) -> int:
    lexicon_path = _require(args.lexicon, "file")
    corpus_path = _require(args.corpus, "dir")
    try:
        mode = JoinMode(args.mode)
    except ValueError:
        raise UsageError(f"--mode must be one of {[m.value for m in JoinMode]}")
    if mode is JoinMode.NON_OVERLAPPED and args.overlap is not None:
        raise UsageError("--overlap is only valid with --mode overlapped")
    overlap = args.overlap if args.overlap is not None else synth.DEFAULT_OVERLAP_PX
    if mode is JoinMode.OVERLAPPED and overlap < 1:
        raise UsageError("--overlap must be >= 1")
    if args.count < 1:
        raise UsageError("--count must be >= 1")

    lexicon = load_lexicon(lexicon_path)
    size = (args.glyph_size, args.glyph_size)
    corpus = load_glyph_corpus(corpus_path, glyph_size=size)
    coverable = 0
    for word in lexicon.words:
        try:
            synth.decompose_word(word, corpus)
            coverable += 1
        except synth.UncoverableError:
            pass
    try:
        manifest = synth.generate_dataset(
            lexicon, corpus, mode, count=args.count, seed=args.seed,
            out_dir=args.out, overlap_px=overlap,
        )
    except NoCoverableWordsError as exc:
        log.error("%s", exc)
        return 1
    print(f"coverable words: {coverable} / {len(lexicon)} "
          f"({len(lexicon) - coverable} uncoverable)")
    print(f"wrote {len(manifest.records)} images and manifest.jsonl -> {args.out}")
    return 0


# -- train ------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "epochs": 50,
    "batch_size": 16,
    "lr": 1e-3,
    "optimizer": "adam",
    "split": 0.8,
    "seed": 0,
    "patience": 5,
    "alphabet": "codepoint",
    "hidden_size": 64,
    "train_loss_goal": None,
}


def cmd_train(args: argparse.Namespace) -> int:
    manifest_path = _require(args.manifest, "any")
    if not 0.0 < args.split < 1.0:
        raise UsageError(f"--split must lie strictly between 0 and 1, got {args.split}")
    if args.epochs < 1:
        raise UsageError("--epochs must be >= 1")
    try:
        config = training.TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            optimizer=args.optimizer,
            seed=args.seed,
            split_ratio=args.split,
            patience=None if args.patience is None or args.patience < 0 else args.patience,
            train_loss_goal=args.train_loss_goal,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    manifest = DatasetManifest.load(manifest_path)
    if not manifest.records:
        raise UsageError(f"manifest at {manifest_path} has no records")
    alphabet = training.build_alphabet(manifest, mode=args.alphabet)
    arch = network.ArchConfig(num_classes=alphabet.num_classes, hidden_size=args.hidden_size)
    train_m, val_m = training.split_dataset(manifest, config.split_ratio, config.seed)
    try:
        ckpt, metrics = training.train(
            config, train_m, val_m, arch=arch, alphabet=alphabet, out_dir=args.out
        )
    except training.NonFiniteLossError as exc:
        log.error("%s", exc)
        return 1
    print(f"{'epoch':>5} {'train_loss':>12} {'val_loss':>12} {'val_wer':>8}")
    for m in metrics:
        print(f"{m.epoch:>5} {m.train_loss:>12.4f} {m.val_loss:>12.4f} {m.val_wer:>8.3f}")
    print(f"best checkpoint (step {ckpt.step}) -> {Path(args.out) / 'checkpoint.gfck'}")
    return 0


# -- evaluate ---------------------------------------------------------------

EVALUATE_DEFAULTS = {"image_root": None, "batch_size": 16}


def _load_eval_samples(args, arch) -> tuple[np.ndarray, list[str]]:
    source = Path(args.source)
    if source.is_dir() or source.name.endswith(".jsonl"):
        manifest = DatasetManifest.load(source)
        if not manifest.records:
            raise UsageError(f"manifest at {source} has no records")
        return training.load_manifest_images(manifest, arch.input_h, arch.input_w)
    pages = ingest_annotated_pages(source, args.image_root or source.parent)
    images = np.empty((len(pages), 1, arch.input_h, arch.input_w))
    transcripts = []
    for i, (raster, label) in enumerate(pages):
        images[i, 0] = preprocess_for_net(raster, arch.input_h, arch.input_w)
        transcripts.append(label)
    return images, transcripts


def cmd_evaluate(args: argparse.Namespace) -> int:
    ckpt_path = _require(args.checkpoint, "file")
    _require(args.source, "any")
    ckpt = load_checkpoint(ckpt_path)
    model = ckpt.to_model()
    images, references = _load_eval_samples(args, ckpt.arch)
    missing = sorted(set("".join(references)) - set("".join(ckpt.alphabet.symbols)))
    if missing:
        log.error("checkpoint alphabet cannot cover these codepoints: %s", missing)
        return 1
    predictions = []
    with no_grad():
        for i in range(0, len(references), args.batch_size):
            logp = network.forward(model, Tensor(images[i : i + args.batch_size]))
            for row in range(logp.shape[0]):
                predictions.append(greedy_decode(logp.data[row], ckpt.alphabet))
    results = report(predictions, references)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results.save(out / "report.json", out / "per_sample.jsonl")
    print(json.dumps(results.to_json_dict(), indent=2))
    print(f"codepoint error rate (diagnostic): {results.cer:.4f}")
    print(f"report -> {out / 'report.json'}")
    return 0


# -- predict ----------------------------------------------------------------

PREDICT_DEFAULTS: dict = {}


def cmd_predict(args: argparse.Namespace) -> int:
    ckpt_path = _require(args.checkpoint, "file")
    image_path = _require(args.image, "file")
    ckpt = load_checkpoint(ckpt_path)
    model = ckpt.to_model()
    raster = load_image(image_path)
    try:
        pixels = preprocess_for_net(raster, ckpt.arch.input_h, ckpt.arch.input_w)
    except EmptyInkError:
        log.error("%s contains no ink to recognize", image_path)
        return 1
    with no_grad():
        logp = network.forward(model, Tensor(pixels[None, None]))
    transcript = greedy_decode(logp.data[0], ckpt.alphabet)
    confidence = np.exp(logp.data[0].max(axis=1))
    print(transcript)
    print(f"frames: {confidence.size}  top-1 confidence mean {confidence.mean():.3f} "
          f"min {confidence.min():.3f}")
    return 0


# -- parser -----------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON file of default flag values")
    p.add_argument("--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glyphforge",
        description="Synthesize handwritten-word images and train/evaluate a recognizer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="normalize a raw glyph corpus")
    p.add_argument("corpus_in")
    p.add_argument("--out", required=True)
    p.add_argument("--glyph-size", dest="glyph_size", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--strict", action="store_true", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_preprocess, defaults=PREPROCESS_DEFAULTS)

    p = sub.add_parser("generate", help="render a synthetic word dataset")
    p.add_argument("lexicon")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=[m.value for m in JoinMode])
    p.add_argument("--overlap", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--glyph-size", dest="glyph_size", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_generate, defaults=GENERATE_DEFAULTS)

    p = sub.add_parser("train", help="train the recognizer on a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--split", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--patience", type=int, help="-1 disables early stopping")
    p.add_argument("--alphabet", choices=["codepoint", "grapheme"])
    p.add_argument("--hidden-size", dest="hidden_size", type=int)
    p.add_argument("--train-loss-goal", dest="train_loss_goal", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_train, defaults=TRAIN_DEFAULTS)

    p = sub.add_parser("evaluate", help="score a checkpoint on a test source")
    p.add_argument("checkpoint")
    p.add_argument("source", help="manifest dir/file or annotated-pages JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--image-root", dest="image_root")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate, defaults=EVALUATE_DEFAULTS)

    p = sub.add_parser("predict", help="transcribe one word image")
    p.add_argument("checkpoint")
    p.add_argument("image")
    _add_common(p)
    p.set_defaults(func=cmd_predict, defaults=PREDICT_DEFAULTS)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        _apply_config_file(args, args.defaults)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AlphabetMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
