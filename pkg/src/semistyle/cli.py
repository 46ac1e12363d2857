"""Command-line entry point: ``semistyle <command> [options] [--section.key value ...]``.

Every command resolves a :class:`~semistyle.trainer.TrainConfig` from an
optional ``--config`` file plus dotted overrides, writes it as
``config.txt`` next to its outputs, and refuses to overwrite existing
outputs unless ``--force`` is given.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .evalsuite import evaluate
from .generator import Generator, transfer
from .pairminer import mine_pairs, read_pairs_tsv, write_pairs_tsv
from .styleclf import StyleClassifier, score_with_salience
from .textcore import Corpus, StyleLabel, Vocab, corpus_paths, encode_sentence, load_corpus, read_lines
from .trainer import (
    Checkpoint,
    StageError,
    TrainConfig,
    bootstrap,
    run_pipeline,
    train_classifiers,
)

log = logging.getLogger("semistyle")

VOCAB_FILE = "vocab.txt"
CONFIG_FILE = "config.txt"
REWARD_CLF = "reward.clf"
EVAL_CLF = "eval.clf"
GENERATOR = "generator.ckpt"


class CliError(Exception):
    """A user-facing failure; the message is printed without a traceback."""


# -- argument handling ---------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--seed", type=int, help="seed for every RNG (overrides config)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    p = argparse.ArgumentParser(prog="semistyle", description="Text style transfer from non-parallel corpora.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help_, data=False, out=True):
        c = sub.add_parser(name, parents=[common], help=help_, description=help_)
        if data:
            c.add_argument("--data", type=Path, required=True, help="corpus directory with <split>.<s|t>.txt files")
        if out:
            c.add_argument("--out", type=Path, required=True, help="output directory")
        return c

    c = add("mine-pairs", "mine pseudo-parallel pairs (pairs.tsv, markers.tsv)", data=True)
    c.add_argument("--method", choices=("lexical", "semantic"), help="shorthand for --miner.method")

    add("train-classifier", "train the reward and held-out evaluation classifiers", data=True)

    c = add("bootstrap", "MLE bootstrapping on a pair file", data=True)
    c.add_argument("--pairs", type=Path, required=True)

    c = add("train-rl", "RL refinement from a bootstrapped generator", data=True)
    c.add_argument("--init", type=Path, help="generator checkpoint to start from (random init if omitted)")
    c.add_argument("--classifiers", type=Path, required=True, help="directory written by train-classifier")
    c.add_argument("--pairs", type=Path, help="pair file (needed only when mle_weight > 0)")

    add("run-all", "classifiers, mining, bootstrap and RL in one run", data=True)

    c = add("transfer", "transfer sentences to a target style", out=False)
    c.add_argument("--model", type=Path, required=True)
    c.add_argument("--vocab", type=Path, required=True)
    c.add_argument("--style", required=True, help="target style S or T")
    c.add_argument("--input", default="-", help="input file, or - for stdin")
    c.add_argument("--output", default="-", help="output file, or - for stdout")

    c = add("evaluate", "style accuracy, BLEU (or self-BLEU), G2 and H2", out=False)
    c.add_argument("--outputs", type=Path, required=True)
    c.add_argument("--style", required=True, help="target style of the outputs")
    ref = c.add_mutually_exclusive_group(required=True)
    ref.add_argument("--references", type=Path)
    ref.add_argument("--inputs", type=Path, help="source sentences, for self-BLEU")
    c.add_argument("--classifier", type=Path, required=True, help="held-out evaluation classifier")
    c.add_argument("--vocab", type=Path, required=True)
    c.add_argument("--out", type=Path, help="optional directory for report.csv")

    c = add("dump-salience", "per-token salience weights as CSV", out=False)
    c.add_argument("--classifier", type=Path, required=True)
    c.add_argument("--vocab", type=Path, required=True)
    c.add_argument("--input", type=Path, required=True)
    c.add_argument("--style", default="T", help="style whose probability is reported")
    c.add_argument("--output", default="-", help="CSV file, or - for stdout")
    return p


def _overrides(extra: Sequence[str]) -> dict[str, str]:
    """``--section.key value`` (or ``--key=value``) pairs from leftover argv."""
    out: dict[str, str] = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--") or len(tok) <= 2:
            raise CliError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            value = next(it, None)
            if value is None:
                raise CliError(f"flag --{key} needs a value")
        out[key.replace("-", "_")] = value
    return out


def _resolve_config(args, extra: Sequence[str], shorthand: dict[str, str] | None = None) -> TrainConfig:
    values = _overrides(extra)
    values.update({k: v for k, v in (shorthand or {}).items() if v is not None})
    if args.seed is not None:
        values["seed"] = str(args.seed)
    try:
        if args.config is not None:
            if not args.config.is_file():
                raise CliError(f"config file not found: {args.config}")
            return TrainConfig.read(args.config, values)
        return TrainConfig.from_flat(values)
    except KeyError as exc:
        raise CliError(exc.args[0]) from exc


# -- output helpers ------------------------------------------------------------


def _prepare_out(out: Path, produces: Iterable[str], force: bool) -> Path:
    existing = [name for name in produces if (out / name).exists()]
    if existing and not force:
        raise CliError(f"{out / existing[0]} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_corpus(data: Path, vocab: Vocab | None = None) -> Corpus:
    if not data.is_dir():
        raise CliError(f"corpus directory not found: {data}")
    paths = {split: styles for split, styles in corpus_paths(data).items() if split == "train" or all(p.exists() for p in styles.values())}
    return load_corpus(paths, vocab)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError(f"{what} not found: {path}")
    return path


def _open_out(target: str):
    return sys.stdout if target == "-" else open(target, "w", encoding="utf-8", newline="")


def _input_lines(source: str) -> list[str]:
    if source == "-":
        return [ln.rstrip("\r\n") for ln in sys.stdin if ln.strip()]
    return read_lines(_require(Path(source), "input file"))


# -- commands ------------------------------------------------------------------


def cmd_mine_pairs(args, cfg: TrainConfig) -> None:
    out = _prepare_out(args.out, ("pairs.tsv", "markers.tsv"), args.force)
    corpus = _load_corpus(args.data)
    classifier = None
    if cfg.miner.method.value == "semantic" and (args.out / REWARD_CLF).exists():
        classifier = StyleClassifier.load(args.out / REWARD_CLF, corpus.vocab).freeze()
    pairs, markers = mine_pairs(corpus.get("train", StyleLabel.S), corpus.get("train", StyleLabel.T), cfg.miner, classifier)
    write_pairs_tsv(pairs, out / "pairs.tsv")
    if markers is not None:
        markers.write_tsv(out / "markers.tsv", corpus.vocab)
    corpus.vocab.save(out / VOCAB_FILE)
    cfg.write(out / CONFIG_FILE)
    print(f"wrote {len(pairs)} pairs to {out / 'pairs.tsv'}")


def cmd_train_classifier(args, cfg: TrainConfig) -> None:
    out = _prepare_out(args.out, (REWARD_CLF, EVAL_CLF), args.force)
    corpus = _load_corpus(args.data)
    reward, held_out = train_classifiers(corpus, cfg)
    reward.save(out / REWARD_CLF)
    held_out.save(out / EVAL_CLF)
    corpus.vocab.save(out / VOCAB_FILE)
    cfg.write(out / CONFIG_FILE)
    print(f"wrote {out / REWARD_CLF} and {out / EVAL_CLF}")


def cmd_bootstrap(args, cfg: TrainConfig) -> None:
    from .pairminer import select_pairs

    out = _prepare_out(args.out, (GENERATOR,), args.force)
    corpus = _load_corpus(args.data)
    pairs = select_pairs(read_pairs_tsv(_require(args.pairs, "pair file"), corpus.vocab), cfg.bootstrap_pair_count)
    if not pairs:
        raise CliError("no pseudo pairs selected; check bootstrap_pair_count and the pair file")
    gen = Generator(corpus.vocab, cfg.model, cfg.seed)
    curve = bootstrap(gen, pairs, cfg, out)
    gen.save(out / GENERATOR, {"stage": "bootstrap"})
    corpus.vocab.save(out / VOCAB_FILE)
    cfg.write(out / CONFIG_FILE)
    with open(out / "bootstrap_loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("epoch", "loss"))
        w.writerows(enumerate(curve, 1))
    print(f"bootstrap loss {curve[0]:.4f} -> {curve[-1]:.4f}; wrote {out / GENERATOR}")


def _load_classifiers(directory: Path, vocab: Vocab) -> tuple[StyleClassifier, StyleClassifier]:
    reward = StyleClassifier.load(_require(directory / REWARD_CLF, "reward classifier"), vocab).freeze()
    held_out = StyleClassifier.load(_require(directory / EVAL_CLF, "evaluation classifier"), vocab).freeze()
    return reward, held_out


def _finish_pipeline(out: Path, result, vocab: Vocab) -> None:
    result.generator.save(out / GENERATOR, {"stage": "rl", "step": result.best.step})
    vocab.save(out / VOCAB_FILE)
    if result.test_report is not None:
        (out / "test_report.csv").write_text(result.test_report.csv_row(), encoding="utf-8")
        print(result.test_report.table())
    print(f"best validation step {result.best.step} (h2 {result.best.metrics['h2']:.2f}); wrote {out / GENERATOR}")


def cmd_train_rl(args, cfg: TrainConfig) -> None:
    out = _prepare_out(args.out, (GENERATOR, "metrics.csv"), args.force)
    corpus = _load_corpus(args.data)
    classifiers = _load_classifiers(args.classifiers, corpus.vocab)
    init = None
    if args.init is not None:
        gen = Generator.load(_require(args.init, "generator checkpoint"), corpus.vocab)
        init = Checkpoint.capture(gen, None, 0, {}, cfg)
    pairs = read_pairs_tsv(_require(args.pairs, "pair file"), corpus.vocab) if args.pairs else []
    if init is None:
        cfg.bootstrap_pair_count = 0  # RL from scratch: the pure reward-learning arm
    result = run_pipeline(cfg, corpus, pairs, out, classifiers, init)
    _finish_pipeline(out, result, corpus.vocab)


def cmd_run_all(args, cfg: TrainConfig) -> None:
    out = _prepare_out(args.out, (GENERATOR, "metrics.csv", "pairs.tsv"), args.force)
    corpus = _load_corpus(args.data)
    classifiers = train_classifiers(corpus, cfg)
    classifiers[0].save(out / REWARD_CLF)
    classifiers[1].save(out / EVAL_CLF)
    pairs, markers = mine_pairs(corpus.get("train", StyleLabel.S), corpus.get("train", StyleLabel.T), cfg.miner, classifiers[0])
    write_pairs_tsv(pairs, out / "pairs.tsv")
    if markers is not None:
        markers.write_tsv(out / "markers.tsv", corpus.vocab)
    result = run_pipeline(cfg, corpus, pairs, out, classifiers)
    _finish_pipeline(out, result, corpus.vocab)


def cmd_transfer(args, cfg: TrainConfig) -> None:
    vocab = Vocab.load(_require(args.vocab, "vocab file"))
    gen = Generator.load(_require(args.model, "generator checkpoint"), vocab).eval()
    target = StyleLabel.parse(args.style)
    lines = _input_lines(args.input)
    xs = [encode_sentence(line, vocab, target.other) for line in lines]
    outputs = transfer(gen, xs, target, cfg.decode)
    fh = _open_out(args.output)
    try:
        for y in outputs:
            fh.write(y.surface + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
            cfg.write(Path(args.output).parent / CONFIG_FILE)


def cmd_evaluate(args, cfg: TrainConfig) -> None:
    vocab = Vocab.load(_require(args.vocab, "vocab file"))
    clf = StyleClassifier.load(_require(args.classifier, "classifier"), vocab).freeze()
    target = StyleLabel.parse(args.style)
    outputs = [encode_sentence(t, vocab, target) for t in read_lines(_require(args.outputs, "outputs file"))]
    if args.references is not None:
        refs = [encode_sentence(t, vocab, target) for t in read_lines(_require(args.references, "references file"))]
        report = evaluate(outputs, refs, target, clf)
    else:
        inputs = [encode_sentence(t, vocab, target.other) for t in read_lines(_require(args.inputs, "inputs file"))]
        report = evaluate(outputs, None, target, clf, inputs=inputs)
    print(report.csv_row(), end="")
    print(report.table())
    if args.out is not None:
        out = _prepare_out(args.out, ("report.csv",), args.force)
        (out / "report.csv").write_text(report.csv_row(), encoding="utf-8")
        cfg.write(out / CONFIG_FILE)


def cmd_dump_salience(args, cfg: TrainConfig) -> None:
    vocab = Vocab.load(_require(args.vocab, "vocab file"))
    clf = StyleClassifier.load(_require(args.classifier, "classifier"), vocab).freeze()
    style = StyleLabel.parse(args.style)
    ys = [encode_sentence(t, vocab, style) for t in read_lines(args.input if args.input.exists() else _require(args.input, "input file"))]
    if args.output != "-" and Path(args.output).exists() and not args.force:
        raise CliError(f"{args.output} exists; pass --force to overwrite")
    probs, weights = score_with_salience(clf, ys, [style] * len(ys), cfg.layers, cfg.salience_norm)
    fh = _open_out(args.output)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sentence_id", "position", "token", "weight"))
        for i, (y, ws) in enumerate(zip(ys, weights)):
            for pos, (tok, wt) in enumerate(zip(y.ids, ws)):
                w.writerow((i, pos, vocab.id_to_token[tok], f"{wt:.6f}"))
    finally:
        if fh is not sys.stdout:
            fh.close()
            cfg.write(Path(args.output).parent / CONFIG_FILE)


COMMANDS = {
    "mine-pairs": cmd_mine_pairs,
    "train-classifier": cmd_train_classifier,
    "bootstrap": cmd_bootstrap,
    "train-rl": cmd_train_rl,
    "run-all": cmd_run_all,
    "transfer": cmd_transfer,
    "evaluate": cmd_evaluate,
    "dump-salience": cmd_dump_salience,
}


def run_cli(argv: Sequence[str] | None = None) -> int:
    """Run one command; returns the process exit status."""
    parser = _parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        shorthand = {"miner.method": getattr(args, "method", None)}
        cfg = _resolve_config(args, extra, shorthand)
        COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(f"semistyle {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"semistyle {args.command}: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"semistyle {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
