"""Command-line entry point: ``pvasr <command> [options]``.

Usage errors exit with status 2, runtime failures with status 1 and a
one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import PVASRError

RATES = (0.05, 0.10, 0.15, 0.20, 0.25)


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="INI config file")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0, help="random seed")
    p.add_argument("--out", default=default, help="output file or directory")
    return p


def _read_lines(path) -> list[str]:
    if path in (None, "-"):
        return sys.stdin.read().splitlines()
    p = Path(path)
    if not p.exists():
        from .errors import MissingFile

        raise MissingFile(f"input not found: {p}")
    return p.read_text().splitlines()


def _split_id(line: str) -> tuple[str | None, str]:
    if "\t" in line:
        uid, rest = line.split("\t", 1)
        return uid, rest
    return None, line


def _emit(lines: list[str], out):
    text = "".join(line + "\n" for line in lines)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _lexicon(path):
    from .data.text import Lexicon, default_lexicon

    return Lexicon.load(path) if path else default_lexicon()


def _load_cfg(args):
    from .config import load_config

    return load_config(getattr(args, "config", None))


def _need_out(args, what: str) -> Path:
    if not args.out:
        raise SystemExit(f"{what} needs --out")
    return Path(args.out)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_g2p(args) -> int:
    from .data.text import g2p, normalize_text
    from .data.vocab import format_phonemes

    lex = _lexicon(args.lexicon)
    raw = [" ".join(args.text)] if args.text else _read_lines(args.input)
    out = []
    for line in raw:
        uid, text = _split_id(line)
        phon = format_phonemes(g2p(normalize_text(text), lex))
        out.append(phon if uid is None else f"{uid}\t{phon}")
    _emit(out, args.out)
    return 0


def cmd_augment(args) -> int:
    from .data.augment import augment_phonemes
    from .data.vocab import format_phonemes, parse_phonemes

    out = []
    for i, line in enumerate(_read_lines(args.input)):
        uid, text = _split_id(line)
        noisy = format_phonemes(augment_phonemes(parse_phonemes(text), args.rate, [args.seed, i]))
        out.append(noisy if uid is None else f"{uid}\t{noisy}")
    _emit(out, args.out)
    return 0


def cmd_lm_train(args) -> int:
    from .data.text import normalize_text
    from .decoding.lm import estimate_ngram

    cfg = _load_cfg(args).lm()
    order = args.order or cfg["order"]
    discount = args.discount if args.discount is not None else cfg["discount"]
    sents = [normalize_text(_split_id(line)[1]) for line in _read_lines(args.input) if line.strip()]
    lm = estimate_ngram(sents, order, discount)
    _emit([lm.to_arpa().rstrip("\n")], args.out)
    return 0


def _recon_params(args):
    from .decoding.reconstruct import ReconstructParams, confusion_table

    params = _load_cfg(args).reconstruct()
    overrides = {k: getattr(args, k) for k in ("beam_width", "lm_weight", "word_bonus")
                 if getattr(args, k, None) is not None}
    if getattr(args, "confusions", False):
        overrides["confusion"] = confusion_table()
    return ReconstructParams(**{**params.__dict__, **overrides})


def cmd_reconstruct(args) -> int:
    from .data.vocab import parse_phonemes
    from .decoding.lm import NGramLM
    from .decoding.reconstruct import reconstruct

    lex = _lexicon(args.lexicon)
    lm = NGramLM.load_arpa(args.lm)
    params = _recon_params(args)
    out = []
    for line in _read_lines(args.input):
        uid, text = _split_id(line)
        phon = parse_phonemes(text)
        words = reconstruct(phon, lex, lm, params)[0] if [t for t in phon if t != "_"] else []
        sent = " ".join(words)
        out.append(sent if uid is None else f"{uid}\t{sent}")
    _emit(out, args.out)
    return 0


def cmd_score(args) -> int:
    from .metrics import align

    ref = [_split_id(line)[1].split() for line in _read_lines(args.ref)]
    hyp = [_split_id(line)[1].split() for line in _read_lines(args.hyp)]
    if len(ref) != len(hyp):
        from .errors import LengthMismatch

        raise LengthMismatch(f"{len(ref)} reference lines vs {len(hyp)} hypothesis lines")
    from .metrics import EditStats

    total = EditStats()
    for r, h in zip(ref, hyp):
        total = total + align(r, h)
    label = "PER" if args.unit == "phoneme" else "WER"
    lines = [f"{label} {total.rate:.4f}", f"S {total.S}\tD {total.D}\tI {total.I}\tN {total.N}"]
    _emit(lines, args.out)
    return 0


def cmd_synth(args) -> int:
    from .data.manifest import write_manifest
    from .evaluation import build_toy_corpus

    cfg = _load_cfg(args).synth()
    out = _need_out(args, "synth")
    corpus = build_toy_corpus(args.train, args.dev, args.words or cfg["words"], args.seed,
                              cfg["noise_sigma"] if args.noise is None else args.noise,
                              args.render or cfg["render"], cfg["min_words"], cfg["max_words"],
                              cfg["speaker_jitter"], lexicon=_lexicon(args.lexicon))
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "train.jsonl", corpus.train)
    if corpus.dev:
        write_manifest(out / "dev.jsonl", corpus.dev)
    corpus.lexicon.save(out / "lexicon.txt")
    (out / "train_text.txt").write_text("".join(" ".join(s) + "\n" for s in corpus.train_sentences))
    (out / "dev_text.txt").write_text("".join(" ".join(s) + "\n" for s in corpus.dev_sentences))
    print(f"wrote {len(corpus.train)} train / {len(corpus.dev)} dev utterances to {out}")
    return 0


def cmd_train(args) -> int:
    from .data.manifest import load_manifest
    from .data.synth import apply_frame_stats, frame_stats
    from .model import Stage1Model
    from .report import training_report
    from .train import to_examples, train

    cfg = _load_cfg(args)
    model_cfg = cfg.model()
    train_cfg = cfg.train()
    if args.epochs:
        train_cfg.epochs = args.epochs
        train_cfg.__post_init__()
    model_cfg.seed = train_cfg.seed = args.seed
    out = _need_out(args, "train")
    tr = list(load_manifest(args.train))
    dv = list(load_manifest(args.dev)) if args.dev else []
    stats = frame_stats(tr)
    apply_frame_stats(tr + dv, *stats)
    if tr and tr[0].frames.frames.shape[1] != model_cfg.crop:
        model_cfg.crop = tr[0].frames.frames.shape[1]
    model = Stage1Model(model_cfg)

    def progress(row):
        print(json.dumps(row), flush=True)

    result = train(model, train_cfg, to_examples(tr), to_examples(dv), out, resume=args.resume,
                   frame_stats=stats, progress=progress)
    training_report(result.log, out)
    return 0


def cmd_decode(args) -> int:
    from .data.manifest import load_manifest
    from .data.synth import apply_frame_stats
    from .data.vocab import VOCAB, format_phonemes
    from .decoding.ctc import ctc_prefix_beam_ids
    from .model import ctc_project
    from .tensor import no_grad
    from .train import model_from_checkpoint, predict_ids, to_examples

    model, header = model_from_checkpoint(args.checkpoint)
    utts = list(load_manifest(args.manifest))
    if header.get("frame_stats"):
        apply_frame_stats(utts, *header["frame_stats"])
    out = []
    for ex in to_examples(utts):
        if args.head == "ctc" and args.beam > 1:
            with no_grad():
                lp = ctc_project(model.encode(ex.frames, ex.landmarks), model.ctc_head)
            ids = [k - 1 for k in ctc_prefix_beam_ids(lp, args.beam)[0][0]]
        else:
            ids = predict_ids(model, ex, args.head)
        out.append(f"{ex.id}\t{format_phonemes(VOCAB.decode(ids))}")
    _emit(out, args.out)
    return 0


def cmd_ablate(args) -> int:
    from .data.text import Lexicon
    from .decoding.lm import NGramLM
    from .evaluation import ablation_rows
    from .report import ablation_report

    lex = _lexicon(args.lexicon)
    lm = NGramLM.load_arpa(args.lm)
    sents = [_split_id(line)[1].split() for line in _read_lines(args.input) if line.strip()]
    rates = [float(r) for r in args.rates.split(",")] if args.rates else list(RATES)
    rows = ablation_rows(sents, lex, lm, rates, _recon_params(args), args.seed)
    png, tsv = ablation_report(rows, _need_out(args, "ablate"))
    sys.stdout.write(Path(tsv).read_text())
    return 0


def cmd_report(args) -> int:
    from .report import training_report
    from .train import read_log

    png, tsv = training_report(read_log(args.log), _need_out(args, "report"))
    print(f"wrote {png} and {tsv}")
    return 0


def cmd_config(args) -> int:
    from .config import default_config_text

    _emit([default_config_text().rstrip("\n")], args.out)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvasr", parents=[_global_flags(False)],
                                     description="Phoneme-centric visual speech recognition toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    g = [_global_flags(True)]

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=g, help=help_, description=help_)
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "generate a synthetic corpus (manifests, lexicon, sentences)")
    p.add_argument("--train", type=int, default=200, help="training utterances")
    p.add_argument("--dev", type=int, default=50, help="held-out utterances")
    p.add_argument("--words", type=int, help="vocabulary size")
    p.add_argument("--noise", type=float, help="landmark jitter sigma")
    p.add_argument("--render", type=int, help="crop size in pixels")
    p.add_argument("--lexicon", help="lexicon file (default: shipped lexicon)")

    p = add("train", cmd_train, "train the Stage-1 model")
    p.add_argument("--train", required=True, help="training manifest")
    p.add_argument("--dev", help="held-out manifest")
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.add_argument("--resume", action="store_true", help="continue from OUT/last.ckpt")

    p = add("decode", cmd_decode, "Stage-1 decoding of a manifest to phonemes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--head", choices=("attention", "ctc"), default="attention")
    p.add_argument("--beam", type=int, default=1, help="CTC prefix beam width")

    p = add("reconstruct", cmd_reconstruct, "Stage-2 phonemes-to-words decoding")
    p.add_argument("--input", help="phoneme lines, optionally 'id<TAB>phonemes' (default stdin)")
    p.add_argument("--lm", required=True, help="ARPA language model")
    p.add_argument("--lexicon")
    p.add_argument("--beam-width", dest="beam_width", type=int)
    p.add_argument("--lm-weight", dest="lm_weight", type=float)
    p.add_argument("--word-bonus", dest="word_bonus", type=float)
    p.add_argument("--confusions", action="store_true", help="discount common viseme confusions")

    p = add("augment", cmd_augment, "corrupt phoneme lines with random edits")
    p.add_argument("--input", help="phoneme lines (default stdin)")
    p.add_argument("--rate", type=float, required=True)

    p = add("g2p", cmd_g2p, "convert text to phonemes with the lexicon")
    p.add_argument("text", nargs="*", help="text to convert (otherwise --input lines)")
    p.add_argument("--input")
    p.add_argument("--lexicon")

    p = add("score", cmd_score, "corpus WER/PER between line-aligned files")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--unit", choices=("word", "phoneme"), default="word")

    p = add("lm-train", cmd_lm_train, "estimate an n-gram LM and write ARPA")
    p.add_argument("--input", help="one sentence per line (default stdin)")
    p.add_argument("--order", type=int)
    p.add_argument("--discount", type=float)

    p = add("ablate", cmd_ablate, "Stage-2 WER vs introduced error (TSV + figure)")
    p.add_argument("--input", required=True, help="reference sentences, one per line")
    p.add_argument("--lm", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--rates", help="comma-separated error rates (default 0.05..0.25)")
    p.add_argument("--beam-width", dest="beam_width", type=int)
    p.add_argument("--lm-weight", dest="lm_weight", type=float)
    p.add_argument("--word-bonus", dest="word_bonus", type=float)
    p.add_argument("--confusions", action="store_true")

    p = add("report", cmd_report, "plot a training log (TSV + figure)")
    p.add_argument("--log", required=True, help="metrics.jsonl from train")

    add("config", cmd_config, "print the documented default configuration")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            parser.error(exc.code)
        raise
    except (PVASRError, OSError) as exc:
        print(f"pvasr {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
