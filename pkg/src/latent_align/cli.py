"""Command-line entry point: ``latent-align <subcommand> ...``."""

from __future__ import annotations

import argparse
import os
import sys
import time

from . import __version__
from .alignment import Vocab, _atomic_write_text
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, format_config, load_config, split_config
from .data import TASKS, CorpusFormatError, gen_task, load_tsv, save_tsv
from .imputer import format_trace
from .inference import ctc_predict, imputer_predict, teacher_predict
from .metrics import bleu, bucketed_bleu, format_metrics, repetition_rate
from .model import ModelConfig
from .oracle import run_all
from .train import TrainConfig, distill, train_ctc, train_imputer, train_teacher


class CLIError(Exception):
    pass


def _common(p: argparse.ArgumentParser, out_help: str, out_required: bool = True) -> None:
    p.add_argument("--config", help="key = value file; flags override its entries")
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--out", required=out_required, help=out_help)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latent-align", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write synthetic TSV corpora and a vocab file")
    _common(p, "output directory")
    p.add_argument("--task", choices=TASKS, default="copy")
    p.add_argument("--vocab-size", type=int, default=20)
    p.add_argument("--sizes", default="2000,200,200", help="train,dev,test pair counts")
    p.add_argument("--lengths", default="3,12", help="min,max source length")
    p.add_argument("--scale", type=int, default=2, help="canvas scale s")

    for name, text in (("train-teacher", "fit the autoregressive teacher"),
                       ("train", "fit a CTC or Imputer model")):
        p = sub.add_parser(name, help=text)
        _common(p, "checkpoint path")
        p.add_argument("--train", required=True, help="training TSV")
        p.add_argument("--dev", help="dev TSV for model selection")
        p.add_argument("--vocab", help="vocab file (default: vocab.txt beside --train)")
        p.add_argument("--scale", type=int, default=None, help="canvas scale s")
        p.add_argument("--log", help="training log path (default: stderr)")
        if name == "train":
            p.add_argument("--mode", choices=("ctc", "imputer"), default=None)
            p.add_argument("--init", help="checkpoint to continue from (imputer)")
            p.add_argument("--steps", type=int, default=None, help="decode steps for dev scoring")

    p = sub.add_parser("distill", help="replace training targets with teacher decodes")
    _common(p, "distilled TSV path")
    p.add_argument("--teacher", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--scale", type=int, default=None, help="canvas scale s (default: teacher's)")

    p = sub.add_parser("decode", help="decode sources with a checkpoint")
    _common(p, "hypothesis file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="source lines or a TSV (first column is used)")
    p.add_argument("--steps", type=int, default=None,
                   help="top-k iterations; omitted means greedy single-step CTC")
    p.add_argument("--trace", help="write per-step partial alignments here")
    p.add_argument("--batch-size", type=int, default=256)

    p = sub.add_parser("eval", help="BLEU, repetition rate and length buckets")
    _common(p, "metrics file (default: stdout only)", out_required=False)
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True, help="reference lines or a TSV (second column is used)")
    p.add_argument("--buckets", default="10,20,30,40,50", help="reference-length bucket edges")
    p.add_argument("--format", choices=("table", "kv"), default="table")

    p = sub.add_parser("oracle", help="brute-force equivalence and gradient-check suites")
    _common(p, "report file (default: stdout only)", out_required=False)
    p.add_argument("--factor", type=float, default=1.0, help="instance-count multiplier")

    p = sub.add_parser("bench", help="model calls and throughput per decode schedule")
    _common(p, "report file (default: stdout only)", out_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--steps", default="1,2,4,8", help="comma-separated schedules")
    p.add_argument("--batch-size", type=int, default=256)
    return parser


def _ints(text: str, what: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CLIError(f"{what} must be comma-separated integers, got {text!r}") from None


def _read_column(path: str, column: int) -> list[list[str]]:
    """Token lists from plain lines or from one column of a TSV."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            parts = line.split("\t")
            if len(parts) > 1:
                if len(parts) != 2:
                    raise CLIError(f"{path}:{lineno}: expected at most one TAB")
                line = parts[column]
            rows.append(line.split())
    return rows


def _encode(vocab: Vocab, rows, path: str):
    out = []
    for i, toks in enumerate(rows, 1):
        if not toks:
            raise CLIError(f"{path}:{i}: empty source")
        try:
            out.append(vocab.encode(toks))
        except (KeyError, ValueError) as exc:
            raise CLIError(f"{path}:{i}: {exc}") from None
    return out


def _configs(args, n_tokens: int, extra_keys=()):
    values = load_config(args.config) if args.config else {}
    model_kw, train_kw, other = split_config(values, extra_keys)
    if args.seed is not None:
        train_kw["seed"] = args.seed
    if getattr(args, "scale", None) is not None:
        model_kw["scale"] = args.scale
    try:
        model_cfg = ModelConfig(n_tokens=n_tokens, **model_kw)
        train_cfg = TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config: {exc}") from None
    return model_cfg, train_cfg, other, values


def _vocab_for(args) -> Vocab:
    path = args.vocab or os.path.join(os.path.dirname(os.path.abspath(args.train)), "vocab.txt")
    if not os.path.exists(path):
        raise CLIError(f"vocab file not found: {path}")
    return Vocab.load(path)


def _log_stream(args):
    return open(args.log, "w", encoding="utf-8") if args.log else sys.stderr


def _echo(values: dict, model_cfg: ModelConfig, train_cfg: TrainConfig, **extra) -> str:
    merged = dict(values)
    merged.update({k: v for k, v in model_cfg.to_dict().items() if k != "n_tokens"})
    merged.update(train_cfg.to_dict())
    merged.update(extra)
    return format_config(merged)


def cmd_generate_data(args) -> None:
    seed = 0 if args.seed is None else args.seed
    sizes = _ints(args.sizes, "--sizes")
    lengths = _ints(args.lengths, "--lengths")
    if len(sizes) != 3 or len(lengths) != 2:
        raise CLIError("--sizes needs three counts and --lengths two bounds")
    corpora, vocab, _ = gen_task(args.task, sizes, args.vocab_size, tuple(lengths), seed, args.scale)
    os.makedirs(args.out, exist_ok=True)
    for split, corpus in corpora.items():
        save_tsv(corpus, os.path.join(args.out, f"{split}.tsv"))
    vocab.save(os.path.join(args.out, "vocab.txt"))
    print(f"wrote {', '.join(f'{s}={len(c)}' for s, c in corpora.items())} to {args.out}")


def _train_common(args, mode: str):
    vocab = _vocab_for(args)
    extra_keys = ("mode", "steps") if mode != "teacher" else ()
    model_cfg, train_cfg, other, values = _configs(args, len(vocab), extra_keys)
    corpus = load_tsv(args.train, "train", None if mode == "teacher" else model_cfg.scale)
    dev = load_tsv(args.dev, "dev") if args.dev else None
    return vocab, model_cfg, train_cfg, other, values, corpus, dev


def cmd_train_teacher(args) -> None:
    vocab, model_cfg, train_cfg, _, values, corpus, dev = _train_common(args, "teacher")
    longest = max(len(x) + len(y) + 2 for x, y in corpus.pairs)
    if "max_len" not in values and longest > model_cfg.max_len:
        model_cfg.max_len = longest
    log = _log_stream(args)
    try:
        ckpt = train_teacher(corpus, vocab, model_cfg, train_cfg, dev, log)
    finally:
        if log is not sys.stderr:
            log.close()
    ckpt.extra["config"] = _echo(values, model_cfg, train_cfg)
    save_checkpoint(ckpt, args.out)


def cmd_train(args) -> None:
    vocab, model_cfg, train_cfg, other, values, corpus, dev = _train_common(args, "train")
    mode = args.mode or other.get("mode", "ctc")
    if mode not in ("ctc", "imputer"):
        raise ConfigError(f"mode must be 'ctc' or 'imputer', got {mode!r}")
    steps = args.steps or other.get("steps")
    if steps is not None:
        train_cfg.eval_steps = int(steps)
    init = load_checkpoint(args.init) if args.init else None
    if init is not None and mode != "imputer":
        raise CLIError("--init is only supported with --mode imputer")
    if init is not None and init.kind not in ("ctc", "imputer"):
        raise CLIError(f"--init needs a ctc or imputer checkpoint, got {init.kind!r}")
    log = _log_stream(args)
    try:
        if mode == "ctc":
            ckpt = train_ctc(corpus, vocab, model_cfg, train_cfg, dev, log)
        else:
            ckpt = train_imputer(corpus, vocab, model_cfg, train_cfg, dev, log, init)
    finally:
        if log is not sys.stderr:
            log.close()
    ckpt.extra["config"] = _echo(values, model_cfg, train_cfg, mode=mode)
    save_checkpoint(ckpt, args.out)


def cmd_distill(args) -> None:
    teacher = load_checkpoint(args.teacher)
    if teacher.vocab is None:
        raise CLIError("teacher checkpoint carries no vocabulary")
    scale = args.scale or teacher.model_config.scale
    corpus = load_tsv(args.train, "train")
    out = distill(teacher, corpus, teacher.vocab, scale)
    save_tsv(out, args.out)
    print(f"distilled {len(out)} pairs, skipped {out.skipped}")


def _load_scorer_inputs(args):
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.vocab is None:
        raise CLIError("checkpoint carries no vocabulary")
    sources = _encode(ckpt.vocab, _read_column(args.input, 0), args.input)
    return ckpt, sources


def cmd_decode(args) -> None:
    ckpt, sources = _load_scorer_inputs(args)
    vocab = ckpt.vocab
    traces = None
    if ckpt.kind == "teacher":
        if args.steps is not None or args.trace:
            raise CLIError("--steps and --trace apply to ctc/imputer checkpoints only")
        outputs = [h or () for h in teacher_predict(ckpt.net, sources)]
    elif args.steps is None:
        outputs, alignments = ctc_predict(ckpt.net, sources, args.batch_size, return_alignments=True)
        traces = [[a] for a in alignments]
    else:
        if args.steps < 1:
            raise CLIError("--steps must be at least 1")
        outputs, traces = imputer_predict(ckpt.net, sources, args.steps, args.batch_size,
                                          return_traces=True)
    _atomic_write_text(args.out, "".join(" ".join(vocab.decode(h)) + "\n" for h in outputs))
    if args.trace:
        mask_id = ckpt.model_config.mask_id
        blocks = [format_trace(t, vocab.symbol, mask_id) for t in traces]
        _atomic_write_text(args.trace, "\n".join(blocks))


def cmd_eval(args) -> None:
    hyps = _read_column(args.hyp, 1)
    refs = _read_column(args.ref, 1)
    if len(hyps) != len(refs):
        raise CLIError(f"{args.hyp} has {len(hyps)} lines but {args.ref} has {len(refs)}")
    if not refs:
        raise CLIError("empty corpus")
    metrics = {"bleu": bleu(hyps, refs), "repetition_rate": repetition_rate(hyps),
               "sentences": len(refs)}
    for label, score in bucketed_bleu(hyps, refs, _ints(args.buckets, "--buckets")).items():
        metrics[f"bleu[{label}]"] = score
    text = format_metrics(metrics, human=args.format == "table")
    sys.stdout.write(text)
    if args.out:
        _atomic_write_text(args.out, text)


def cmd_oracle(args) -> int:
    results = run_all(seed=0 if args.seed is None else args.seed, scale=args.factor)
    text = "".join(r.line() + "\n" for r in results)
    sys.stdout.write(text)
    if args.out:
        _atomic_write_text(args.out, text)
    return 0 if all(r.passed for r in results) else 1


def cmd_bench(args) -> None:
    ckpt, sources = _load_scorer_inputs(args)
    if ckpt.kind not in ("ctc", "imputer"):
        raise CLIError("bench needs a ctc or imputer checkpoint")
    n_batches = -(-len(sources) // args.batch_size)
    metrics = {"sentences": len(sources), "batches": n_batches}
    for steps in _ints(args.steps, "--steps"):
        counter = [0]
        start = time.perf_counter()
        imputer_predict(ckpt.net, sources, steps, args.batch_size, counter=counter)
        elapsed = time.perf_counter() - start
        metrics[f"T={steps} model_calls"] = counter[0]
        metrics[f"T={steps} calls_per_batch"] = counter[0] / n_batches
        metrics[f"T={steps} sentences_per_sec"] = len(sources) / max(elapsed, 1e-9)
    text = format_metrics(metrics)
    sys.stdout.write(text)
    if args.out:
        _atomic_write_text(args.out, text)


COMMANDS = {
    "generate-data": cmd_generate_data,
    "train-teacher": cmd_train_teacher,
    "train": cmd_train,
    "distill": cmd_distill,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "oracle": cmd_oracle,
    "bench": cmd_bench,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        code = COMMANDS[args.command](args)
    except (CLIError, ConfigError, CorpusFormatError, CheckpointError, ValueError, KeyError, OSError) as exc:
        print(f"latent-align {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return int(code or 0)


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
