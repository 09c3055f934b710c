"""Command-line entry point: preprocess, train ml|disc|rl, generate, eval, score.

Exit codes: 0 ok, 1 other error, 2 format/config, 3 missing prerequisite,
4 checkpoint mismatch, 5 misaligned inputs.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import autodiff as ad
from .config import ConfigError, load_config
from .discriminator import Discriminator
from .generator import Generator, beam_search
from .reward import format_report, reward_breakdown, score_corpus
from .rltrain import RLTrainer, StepLog, train_disc, train_ml, train_rl, BaselineRegressor
from .textcore import (
    CorpusFormatError, Vocabulary, build_vocab, decode_ids, encode_article, encode_with_pointer,
    load_corpus, parse_line, tokenize, EncodedExample,
)

EXIT_OK, EXIT_ERROR, EXIT_FORMAT, EXIT_PREREQ, EXIT_CKPT, EXIT_ALIGN = 0, 1, 2, 3, 4, 5

log = logging.getLogger("headline_rl")


class CliError(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


def _overrides(extra):
    pairs = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for --{key}")
            value = extra[i + 1]
            i += 2
        pairs[key.replace("-", "_")] = value
    return pairs


def _require(path, what):
    if not path or not os.path.exists(path):
        raise CliError(EXIT_PREREQ, f"missing {what}: {path}")


def _load_vocab(path):
    _require(path, "vocabulary file")
    return Vocabulary.load(path)


def _load_generator(path, vocab):
    _require(path, "generator checkpoint")
    try:
        arrays = ad.load_checkpoint(path)
        gen = Generator.from_state_dict(arrays)
    except (ad.CheckpointError, KeyError, ValueError) as e:
        raise CliError(EXIT_CKPT, f"cannot load generator from {path}: {e}") from None
    if gen.vocab_size != len(vocab):
        raise CliError(EXIT_CKPT, f"checkpoint vocabulary size {gen.vocab_size} != vocabulary file size {len(vocab)}")
    return gen, arrays


def _load_discriminator(path, vocab, cfg):
    _require(path, "discriminator checkpoint")
    try:
        disc = Discriminator.from_state_dict(ad.load_checkpoint(path), vocab)
    except (ad.CheckpointError, KeyError, ValueError, IndexError) as e:
        raise CliError(EXIT_CKPT, f"cannot load discriminator from {path}: {e}") from None
    disc.max_article_len = cfg.max_article_len
    return disc


def _read_pairs(path, cfg):
    _require(path, "corpus")
    return list(load_corpus(path, cfg.max_article_len))


def _read_lines(path):
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


# subcommands


def cmd_preprocess(args, cfg):
    pairs = []
    with open(args.raw, encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            pairs.append(parse_line(line, n, cfg.max_article_len))
    os.makedirs(args.out_dir, exist_ok=True)
    vocab = build_vocab(pairs, cfg.vocab_size) if pairs else Vocabulary([])
    with open(os.path.join(args.out_dir, "corpus.tsv"), "w", encoding="utf-8", newline="\n") as f:
        for art, head in pairs:
            f.write(" ".join(art) + "\t" + " ".join(head) + "\n")
    vocab.save(os.path.join(args.out_dir, "vocab.txt"))
    print(f"pairs={len(pairs)} vocab={len(vocab)}")


def cmd_train(args, cfg):
    vocab = _load_vocab(args.vocab)
    pairs = _read_pairs(args.corpus, cfg)
    if not pairs:
        raise CliError(EXIT_FORMAT, f"{args.corpus}: empty corpus")
    train = [encode_with_pointer(p, vocab) for p in pairs]
    dev = [encode_with_pointer(p, vocab) for p in _read_pairs(args.dev, cfg)] if args.dev else train
    rng = np.random.default_rng(cfg.seed)
    steplog = StepLog(args.log)

    if args.phase == "ml":
        gen = Generator(len(vocab), cfg.emb_size, cfg.hidden_size, seed=cfg.seed)
        train_ml(gen, train, dev, rng, lr=cfg.lr_ml, lam=cfg.coverage_weight, clip_norm=cfg.clip_norm,
                 batch_size=cfg.batch_size, max_epochs=cfg.ml_epochs, patience=cfg.patience,
                 beam=cfg.beam, max_dec_len=cfg.max_dec_len, steplog=steplog)
        ad.save_checkpoint(args.out, gen.state_dict())
    elif args.phase == "disc":
        gen, _ = _load_generator(args.gen, vocab)
        disc = Discriminator(vocab, cfg.disc_emb_size, cfg.disc_filters, seed=cfg.seed,
                             max_article_len=cfg.max_article_len)
        train_disc(disc, gen, train, rng, lr=cfg.lr_disc, batch_size=cfg.batch_size,
                   epochs=cfg.disc_epochs, max_dec_len=cfg.max_dec_len, steplog=steplog)
        ad.save_checkpoint(args.out, disc.state_dict())
    else:
        gen, arrays = _load_generator(args.gen, vocab)
        disc = None
        if cfg.reward == "ROUGE-RP-ADV":
            disc = _load_discriminator(args.disc, vocab, cfg)
        baseline = BaselineRegressor(gen.feature_size)
        if "baseline.W_r" in arrays:
            baseline.load_state_dict(arrays)
        trainer = RLTrainer(gen, cfg.rl_config(), rng, disc, baseline)
        train_rl(trainer, train, rng, batch_size=cfg.batch_size, steps=cfg.rl_steps, steplog=steplog)
        state = {**gen.state_dict(), **baseline.state_dict()}
        if disc is not None:
            state.update(disc.state_dict())
        ad.save_checkpoint(args.out, state)
    print(f"wrote {args.out}")


def cmd_generate(args, cfg):
    vocab = _load_vocab(args.vocab)
    gen, _ = _load_generator(args.gen, vocab)
    out = []
    for line in _read_lines(args.input):
        article = tokenize(line)[: cfg.max_article_len]
        if not article:
            out.append("")
            continue
        src, src_ext, ext = encode_article(article, vocab)
        ex = EncodedExample(src, src_ext, [], [], ext, article)
        hyp = beam_search(gen, ex, cfg.beam, cfg.max_dec_len)
        out.append(" ".join(decode_ids(hyp.tokens, ext)))
    text = "".join(h + "\n" for h in out)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_eval(args, cfg):
    hyps = [line.split() for line in _read_lines(args.hyps)]
    refs = [line.split() for line in _read_lines(args.refs)]
    if len(hyps) != len(refs):
        raise CliError(EXIT_ALIGN, f"length mismatch: {len(hyps)} hypotheses vs {len(refs)} references")
    scorer, articles = None, None
    if args.disc:
        if not args.articles or not args.vocab:
            raise CliError(EXIT_PREREQ, "--disc needs --articles and --vocab")
        articles = [tokenize(line) for line in _read_lines(args.articles)]
        if len(articles) != len(hyps):
            raise CliError(EXIT_ALIGN, f"length mismatch: {len(articles)} articles vs {len(hyps)} hypotheses")
        disc = _load_discriminator(args.disc, _load_vocab(args.vocab), cfg)
        scorer = lambda a, h: disc.score(a, h if h else ["</s>"])  # noqa: E731
    report = score_corpus(hyps, refs, articles, scorer, cfg.beta)
    text = format_report(report)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write("".join(f"{k}={v:.6f}\n" for k, v in report.items()))


def cmd_score(args, cfg):
    hyp, ref = tokenize(args.hyp), tokenize(args.ref)
    d = None
    if cfg.reward == "ROUGE-RP-ADV":
        if not (args.disc and args.vocab and args.article is not None):
            raise CliError(EXIT_PREREQ, "reward ROUGE-RP-ADV needs --disc, --vocab and --article")
        disc = _load_discriminator(args.disc, _load_vocab(args.vocab), cfg)
        d = disc.score(tokenize(args.article), hyp if hyp else ["</s>"])
    b = reward_breakdown(hyp, ref, cfg.reward, cfg.beta, d)
    for k, v in b.as_dict().items():
        print(f"{k}={'none' if v is None else format(v, '.6f')}")


def build_parser():
    p = argparse.ArgumentParser(
        prog="headline-rl",
        description="Pointer-generator headline generation with repetition-normalized adversarial RL.",
        epilog="Any config key can be overridden as --key value (e.g. --beam 1 --seed 3).",
    )
    p.add_argument("--config", help="key = value config file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="tokenize a raw article<TAB>headline corpus and build a vocabulary")
    s.add_argument("raw")
    s.add_argument("out_dir")

    s = sub.add_parser("train", help="run one training phase")
    s.add_argument("phase", choices=["ml", "disc", "rl"])
    s.add_argument("--corpus", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--out", required=True, help="checkpoint to write")
    s.add_argument("--gen", help="generator checkpoint (disc, rl)")
    s.add_argument("--disc", help="discriminator checkpoint (rl with ROUGE-RP-ADV)")
    s.add_argument("--dev", help="dev corpus for early stopping (default: training corpus)")
    s.add_argument("--log", help="append-only step log")

    s = sub.add_parser("generate", help="beam-decode one headline per article line")
    s.add_argument("--gen", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out")

    s = sub.add_parser("eval", help="ROUGE-1/2/L and repetition-rate report")
    s.add_argument("--hyps", required=True)
    s.add_argument("--refs", required=True)
    s.add_argument("--articles")
    s.add_argument("--disc")
    s.add_argument("--vocab")
    s.add_argument("--out", help="also write key=value lines here")

    s = sub.add_parser("score", help="reward breakdown for one hypothesis/reference pair")
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--article")
    s.add_argument("--disc")
    s.add_argument("--vocab")
    return p


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "score": cmd_score,
}


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(extra))
        COMMANDS[args.command](args, cfg)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ConfigError, CorpusFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT if isinstance(e, (FileNotFoundError, IsADirectoryError)) else EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
