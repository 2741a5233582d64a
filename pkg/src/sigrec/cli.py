"""Command-line entry point: ``sigrec <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 input error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, backend
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .embed import CbowConfig, load_embeddings, save_embeddings, train_cbow
from .eval import (
    evaluate,
    format_ablation,
    format_eval,
    format_records,
    make_grid,
    run_ablation,
    time_inference,
)
from .ingest import ParseError, ingest, read_dataset, read_listings, sanitize_function, split_dataset, write_dataset
from .labels import TASKS, LabelError
from .model import ModelConfig, build_model, predict_batch, train
from .tokenize import SIZE_GRID, Vocabulary, build_vocab, instruction_words

log = logging.getLogger("sigrec")

OUTPUT_DIR_ENV = "SIGREC_OUTPUT_DIR"
VOCAB_FILE = "vocab.tsv"
EMBED_FILE = "embeddings.txt"

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_out_dir() -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV, "sigrec-out"))


@contextmanager
def _atomic(path: Path, mode: str = "w"):
    """Yield a temp path; move it over ``path`` only if the block succeeds."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    try:
        yield tmp
        tmp.replace(path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _write_text(path: Path, text: str) -> None:
    with _atomic(path) as tmp:
        tmp.write_text(text, encoding="utf-8", newline="\n")


def _resolved(args, **extra) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(extra)
    cfg["sigrec_version"] = __version__
    return cfg


def _write_config(path: Path, cfg: dict) -> None:
    _write_text(path, json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n")


def _ints(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("sizes must be positive integers")
    return vals


def _choices(allowed):
    def parse(text):
        vals = [v.strip().lower() for v in text.split(",") if v.strip()]
        bad = [v for v in vals if v not in allowed]
        if bad or not vals:
            raise argparse.ArgumentTypeError(f"expected values from {allowed}, got {text!r}")
        return vals
    return parse


def _load_split(args):
    try:
        ds = read_dataset(args.dataset)
    except (OSError, ParseError) as exc:
        raise InputError(f"cannot read dataset {args.dataset}: {exc}") from None
    which = getattr(args, "split", "train")
    if which == "all":
        return ds
    if len(ds) < 2:
        raise InputError("dataset needs at least two entries to split")
    train_part, test_part = split_dataset(ds, args.split_ratio, args.split_seed)
    return train_part if which == "train" else test_part


def _load_embedding_dir(path, dtype):
    path = Path(path)
    try:
        vocab = Vocabulary.load(path / VOCAB_FILE)
        emb = load_embeddings(path / EMBED_FILE, vocab, dtype=dtype)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read embeddings from {path}: {exc}") from None
    return vocab, emb


def _dtype(args):
    return np.float32 if args.precision == 32 else np.float64


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args):
    from .synth import SynthConfig, write_corpus

    asm_dir, labels = write_corpus(
        SynthConfig(args.n, args.length, min_length=args.min_length, seed=args.seed), args.out, args.files
    )
    _write_config(Path(args.out) / "config.json", _resolved(args))
    print(f"wrote {asm_dir} and {labels}")


def cmd_ingest(args):
    if not Path(args.labels).is_file():
        raise InputError(f"label file not found: {args.labels}")
    for p in args.asm_dir:
        if not Path(p).exists():
            raise InputError(f"listing path not found: {p}")
    try:
        ds, counts = ingest(args.asm_dir, args.labels, allow_others=not args.strict_types)
    except (ParseError, LabelError, OSError) as exc:
        raise InputError(str(exc)) from None
    out = Path(args.out)
    with _atomic(out) as tmp:
        write_dataset(ds, tmp)
    _write_config(out.with_name(out.name + ".config.json"), _resolved(args, counts=counts))
    print(" ".join(f"{k}={v}" for k, v in counts.items()))


def cmd_embed(args):
    train_part = _load_split(args)
    words = [instruction_words(f.instructions) for f in train_part.functions]
    try:
        vocab = build_vocab((w for s in words for w in s), min_count=args.min_count)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    corpus = [vocab.ids(s) for s in words]
    config = CbowConfig(dim=args.dim, window=args.window, negatives=args.negatives, epochs=args.epochs,
                        learning_rate=args.lr, seed=args.seed, subsample_threshold=args.subsample)
    matrix = train_cbow(corpus, vocab, config, dtype=_dtype(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _atomic(out / VOCAB_FILE) as tmp:
        vocab.save(tmp)
    with _atomic(out / EMBED_FILE) as tmp:
        save_embeddings(matrix, vocab, tmp)
        Path(str(tmp) + ".ctx").replace(out / (EMBED_FILE + ".ctx"))
    _write_config(out / "config.json", _resolved(args, vocab_size=len(vocab), loss_history=matrix.loss_history))
    print(f"vocab={len(vocab)} dim={matrix.dim} final_loss={matrix.loss_history[-1] if matrix.loss_history else 'n/a'}")


def _model_config(args, **override) -> ModelConfig:
    kw = dict(
        structure=args.structure,
        task=args.task,
        size=args.size,
        location=args.location,
        hidden=args.hidden,
        dropout=args.dropout,
        train_embeddings=args.train_embeddings,
        learning_rate=args.lr,
        batch_size=args.batch,
        clip_norm=args.clip_norm,
        precision=args.precision,
    )
    kw.update(override)
    return ModelConfig(**kw)


def cmd_train(args):
    if args.structure == "stl" and args.task is None:
        raise UsageError("--structure stl requires --task")
    if args.structure == "mtl" and args.task is not None:
        raise UsageError("--task is only valid with --structure stl")
    train_part = _load_split(args)
    if len(train_part) == 0:
        raise InputError("empty training set")
    vocab, emb = _load_embedding_dir(args.embeddings, _dtype(args))
    config = _model_config(args, embed_dim=emb.dim)
    model = build_model(config, vocab, emb, seed=args.seed)
    model, history = train(model, train_part, epochs=args.epochs, seed=args.seed)
    out = Path(args.out)
    with _atomic(out) as tmp:
        save_checkpoint(model, tmp)
    hist_lines = [json.dumps({"epoch": i + 1, "loss": l, "seconds": s})
                  for i, (l, s) in enumerate(zip(history.losses, history.epoch_seconds))]
    _write_text(out.with_name(out.name + ".history.jsonl"), "\n".join(hist_lines) + "\n")
    _write_config(out.with_name(out.name + ".config.json"), _resolved(args, model=config.to_dict(), backend=backend()))
    last = history.total_loss() if history.epochs else float("nan")
    print(f"trained {config.structure} model: epochs={history.epochs} final_loss={last:.4f}")


def _load_model(path):
    try:
        return load_checkpoint(path)
    except (OSError, CheckpointError) as exc:
        raise InputError(f"cannot load checkpoint {path}: {exc}") from None


def cmd_predict(args):
    model = _load_model(args.model)
    try:
        raw = read_listings(args.asm)
    except (OSError, ParseError) as exc:
        raise InputError(str(exc)) from None
    funcs = [sanitize_function(b, fn) for b, fn in raw]
    preds = predict_batch(model, funcs) if funcs else []
    records = []
    for f, p in zip(funcs, preds):
        rec = {"binary": f.source_id[0], "function": f.source_id[1]}
        for t in model.tasks:
            rec[t] = p.labels[t]
        if args.format == "jsonl":
            rec["probabilities"] = {t: [float(x) for x in p.probabilities[t]] for t in model.tasks}
        else:
            for t in model.tasks:
                rec[f"p_{t}"] = float(p.probabilities[t].max())
        records.append(rec)
    text = format_records(records, args.format)
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    cfg_dir = Path(args.out).parent if args.out else _default_out_dir()
    _write_config(cfg_dir / "predict.config.json", _resolved(args))


def cmd_eval(args):
    model = _load_model(args.model)
    part = _load_split(args)
    if len(part) == 0:
        raise InputError("empty evaluation set")
    report = evaluate(model, part)
    if args.timing:
        report.timing = time_inference(model, part.functions, args.repetitions)
    text = format_eval(report, args.format)
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    cfg_dir = Path(args.out).parent if args.out else _default_out_dir()
    _write_config(cfg_dir / "eval.config.json", _resolved(args))


def cmd_ablate(args):
    ds = read_dataset(args.dataset) if Path(args.dataset).is_file() else None
    if ds is None:
        raise InputError(f"dataset not found: {args.dataset}")
    train_part, test_part = split_dataset(ds, args.split_ratio, args.split_seed)
    vocab, emb = _load_embedding_dir(args.embeddings, _dtype(args))
    grid = make_grid(args.sizes, args.locations, args.structures)
    hyper = dict(hidden=args.hidden, dropout=args.dropout, learning_rate=args.lr, batch_size=args.batch,
                 epochs=args.epochs, seed=args.seed, precision=args.precision, clip_norm=args.clip_norm,
                 repetitions=args.repetitions)
    report = run_ablation(grid, train_part, test_part, vocab, emb, hyper, timing=args.timing)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for fmt, name in (("table", "ablation.txt"), ("tsv", "ablation.tsv"), ("jsonl", "ablation.jsonl")):
        _write_text(out / name, format_ablation(report, fmt))
    _write_config(out / "config.json", _resolved(args, rows=len(report.rows)))
    sys.stdout.write(format_ablation(report, args.format))


# ---------------------------------------------------------------------------
# parser

def _add_split(p, default="train"):
    p.add_argument("--split", choices=("train", "test", "all"), default=default,
                   help=f"which part of the 8:2 split to use (default {default})")
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=0)


def _add_model_opts(p):
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--train-embeddings", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sigrec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sigrec {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--precision", type=int, choices=(32, 64), default=32)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic listing corpus with labels")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--length", type=int, default=60)
    p.add_argument("--min-length", type=int, default=None)
    p.add_argument("--files", type=int, default=2)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="listings + labels -> dataset file")
    p.add_argument("--asm-dir", type=Path, action="append", required=True,
                   help="listing file or directory (repeatable)")
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--strict-types", action="store_true", help="reject unknown type names instead of mapping to 'others'")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", parents=[common], help="train CBOW instruction-word embeddings")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--subsample", type=float, default=None)
    p.add_argument("--out", type=Path, required=True)
    _add_split(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", parents=[common], help="train an MTL or STL model")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--embeddings", type=Path, required=True, help="directory written by 'embed'")
    p.add_argument("--structure", choices=("mtl", "stl"), default="mtl")
    p.add_argument("--task", choices=TASKS, default=None)
    p.add_argument("--size", type=int, default=40)
    p.add_argument("--location", choices=("head", "tail"), default="head")
    _add_model_opts(p)
    p.add_argument("--out", type=Path, required=True)
    _add_split(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict signatures for a listing")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--asm", type=Path, required=True)
    p.add_argument("--format", choices=("table", "tsv", "jsonl"), default="jsonl")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="weighted accuracy / precision / recall")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--timing", action="store_true")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--format", choices=("table", "tsv", "jsonl"), default="table")
    p.add_argument("--out", type=Path, default=None)
    _add_split(p, default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="size / location / structure grid")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--embeddings", type=Path, required=True)
    p.add_argument("--sizes", type=_ints, default=list(SIZE_GRID))
    p.add_argument("--locations", type=_choices(("head", "tail")), default=["head", "tail"])
    p.add_argument("--structures", type=_choices(("mtl", "stl")), default=["mtl"])
    _add_model_opts(p)
    p.add_argument("--timing", action="store_true")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--format", choices=("table", "tsv", "jsonl"), default="table")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "ablate" and args.out is None:
        args.out = _default_out_dir() / "ablation"
    if args.threads < 1:
        print("sigrec: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sigrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, FileNotFoundError) as exc:
        print(f"sigrec: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"sigrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # pragma: no cover - last-resort guard
        log.exception("internal error")
        print(f"sigrec: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
