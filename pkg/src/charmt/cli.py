"""Command-line entry point: ``charmt <subcommand> ...``.

Exit status is 0 on success, 1 on a usage error (bad flags, malformed
config) and 2 on a data error (unreadable or malformed corpus, checkpoint or
vocabulary files).
"""

from __future__ import annotations

import argparse
import contextlib
import sys
from pathlib import Path

from . import checkpoint
from .config import ConfigError, RunConfig
from .corpus import CorpusError, Vocab, build_char_vocab, build_word_vocab, load_alignments, load_parallel, \
    lowercase_transform, read_lines, split_sentence
from .evaluation import bleu
from .gradcheck import run_suite
from .model import Vocabs
from .numerics import NumericsError
from .search import prepare_source, translate_sentences
from .training import Trainer, TrainingError
from .estimator import model_neighbors

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

VOCAB_FILES = {
    "src_words": "source.words",
    "tgt_words": "target.words",
    "src_chars": "source.chars",
    "tgt_chars": "target.chars",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="charmt", description="Character-level neural machine translation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-vocab", help="write word and character vocabularies for a parallel corpus")
    p.add_argument("--src", required=True, help="source sentences, one per line")
    p.add_argument("--tgt", required=True, help="target sentences, one per line")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--min-count", type=int, default=2, help="minimum word frequency (default 2)")
    p.add_argument("--lowercase", action="store_true", help="lowercase before counting (word model)")

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", required=True, help="JSON file with the run configuration")
    p.add_argument("--quiet", action="store_true", help="do not echo the training log to stdout")

    p = sub.add_parser("translate", help="translate sentences with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", help="source sentences (default: standard input)")
    p.add_argument("--output", help="translations (default: standard output)")
    p.add_argument("--beam-kw", type=int, help="word beam width (default: from the checkpoint config)")
    p.add_argument("--beam-kc", type=int, help="character beam width (default: from the checkpoint config)")

    p = sub.add_parser("evaluate", help="corpus BLEU of a hypothesis file against a reference file")
    p.add_argument("hypotheses")
    p.add_argument("references")
    p.add_argument("--smooth", action="store_true", help="add-one smoothing of the n-gram precisions")

    p = sub.add_parser("neighbors", help="nearest neighbours of query words in embedding space")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("words", nargs="+")
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--side", choices=("source", "target"), default="source")
    p.add_argument("--provider", choices=("lookup", "c2w"),
                   help="embedding provider (default: the one the model uses)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every model component")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=20, help="parameters sampled per component")
    return parser


def _positive(value, flag):
    if value is not None and value < 1:
        raise UsageError(f"{flag} must be a positive integer")


def _open_output(path, out):
    if path is None:
        return contextlib.nullcontext(out)
    return open(path, "w", encoding="utf-8", newline="\n")


def _read_input(path, stdin) -> list[str]:
    if path is not None:
        return read_lines(path)
    try:
        data = stdin.buffer.read() if hasattr(stdin, "buffer") else stdin.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    except UnicodeDecodeError as exc:
        raise CorpusError(f"standard input: invalid UTF-8 at byte {exc.start}") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line.rstrip("\r") for line in lines]


def load_vocabs(directory) -> Vocabs:
    d = Path(directory)
    kinds = {"src_words": "word", "tgt_words": "word", "src_chars": "char", "tgt_chars": "char"}
    return Vocabs(**{k: Vocab.load(d / VOCAB_FILES[k], kinds[k]) for k in kinds})


def cmd_build_vocab(args, out):
    _positive(args.min_count, "--min-count")
    corpus = load_parallel(args.src, args.tgt)
    if args.lowercase:
        corpus = lowercase_transform(corpus)
    vocabs = Vocabs(
        build_word_vocab(corpus.sources, args.min_count),
        build_word_vocab(corpus.targets, args.min_count),
        build_char_vocab(corpus.sources),
        build_char_vocab(corpus.targets),
    )
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    for key, name in VOCAB_FILES.items():
        vocab = getattr(vocabs, key)
        vocab.save(d / name)
        out.write(f"{name}\t{len(vocab)}\n")
    return EXIT_OK


def cmd_train(args, out):
    run = RunConfig.load(args.config).validate()
    cfg = run.model
    train = load_parallel(run.train_src, run.train_tgt, cfg.max_word_len, cfg.max_sent_len)
    dev = load_parallel(run.dev_src, run.dev_tgt, cfg.max_word_len, cfg.max_sent_len)
    if run.alignments is not None:
        train = load_alignments(run.alignments, train)
    vocabs = load_vocabs(run.vocab_dir) if run.vocab_dir is not None else None
    ckpt_dir = Path(run.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    with open(ckpt_dir / "train.log", "w", encoding="utf-8") as log_file:
        def emit(text):
            log_file.write(text + "\n")
            log_file.flush()
            if not args.quiet:
                out.write(text + "\n")
                out.flush()

        trainer = Trainer(cfg, ckpt_dir, emit)
        if run.mode == "word":
            trainer.train_word(train, dev, vocabs)
        else:
            trainer.train_char(train, dev, vocabs)
        emit(f"training stopped at epoch {trainer.state.epoch}")
    return EXIT_OK


def cmd_translate(args, out):
    _positive(args.beam_kw, "--beam-kw")
    _positive(args.beam_kc, "--beam-kc")
    model, _ = checkpoint.load(args.checkpoint)
    lines = _read_input(args.input, args.stdin)
    sentences = [split_sentence(line) for line in lines]
    todo = [i for i, s in enumerate(sentences) if s]
    results = translate_sentences(model, [prepare_source(model, sentences[i]) for i in todo],
                                  args.beam_kw, args.beam_kc)
    texts = [""] * len(sentences)
    for i, res in zip(todo, results):
        texts[i] = res.text
    with _open_output(args.output, out) as f:
        for text in texts:
            f.write(text + "\n")
    return EXIT_OK


def cmd_evaluate(args, out):
    hyps = read_lines(args.hypotheses)
    refs = read_lines(args.references)
    if len(hyps) != len(refs):
        raise CorpusError(f"{args.hypotheses} has {len(hyps)} lines but {args.references} has {len(refs)}")
    if not hyps:
        raise CorpusError("nothing to evaluate")
    out.write(bleu(hyps, refs, smooth=args.smooth).to_json() + "\n")
    return EXIT_OK


def cmd_neighbors(args, out):
    _positive(args.k, "-k")
    model, _ = checkpoint.load(args.checkpoint)
    proj = model.src_proj if args.side == "source" else model.tgt_proj
    if args.provider == "c2w" and proj.mode != "c2w":
        raise UsageError("this checkpoint has no C2W model for that side")
    if args.provider == "lookup" and proj.mode != "lookup":
        raise UsageError("this checkpoint has no lookup table for that side")
    for word in args.words:
        word = word[: model.config.max_word_len]
        pairs = model_neighbors(model, word, args.k, args.side, args.provider)
        out.write(word + "\t" + "\t".join(f"{w} {s:.4f}" for w, s in pairs) + "\n")
    return EXIT_OK


def cmd_gradcheck(args, out):
    _positive(args.samples, "--samples")
    errors = run_suite(args.seed, args.samples)
    for name, err in errors.items():
        out.write(f"{name}\t{err:.3e}\n")
    out.write(f"max_relative_error\t{max(errors.values()):.3e}\n")
    return EXIT_OK


COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "neighbors": cmd_neighbors,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None, stdin=None, stdout=None, stderr=None) -> int:
    """Run one subcommand and return its exit status."""
    out = stdout if stdout is not None else sys.stdout
    err = stderr if stderr is not None else sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.stdin = stdin if stdin is not None else sys.stdin
        return COMMANDS[args.command](args, out)
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    except UsageError as exc:
        err.write(f"{exc}\n")
        return EXIT_USAGE
    except ConfigError as exc:
        err.write(f"charmt: config error: {exc}\n")
        return EXIT_USAGE
    except (CorpusError, checkpoint.CheckpointError, TrainingError, NumericsError) as exc:
        err.write(f"charmt: data error: {exc}\n")
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        err.write(f"charmt: data error: {exc}\n")
        return EXIT_DATA


def main():
    for stream in (sys.stdout, sys.stderr):
        if hasattr(stream, "reconfigure"):
            stream.reconfigure(encoding="utf-8")
    sys.exit(run())


if __name__ == "__main__":
    main()
