"""Training loops: CTC, two-stage Imputer, causal teacher, and distillation."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence, TextIO

import numpy as np
import torch
import torch.nn.functional as F

from .alignment import MaskPolicy, Vocab, min_alignment_length, sample_mask, sample_uniform_alignment
from .checkpoint import Checkpoint
from .ctc import ctc_loss_batch
from .data import Corpus, make_batches
from .imputer import imputer_loss_batch, rollin_alignment
from .inference import ctc_predict, imputer_predict, pad, teacher_predict
from .metrics import bleu
from .model import AlignmentScorer, CausalTeacher, ModelConfig

ROLLINS = ("viterbi", "uniform")


@dataclass
class TrainConfig:
    peak_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.997
    eps: float = 1e-9
    warmup_steps: int = 500
    total_steps: int = 5000
    # Imputer: steps trained with all-MASK inputs before Bernoulli masking
    stage_switch: int | None = None
    batch_tokens: int = 512
    seed: int = 0
    clip_norm: float = 1.0
    eval_every: int = 500
    eval_steps: int = 1
    rollin: str = "viterbi"
    average_best: int = 0

    def __post_init__(self):
        if self.warmup_steps < 1 or self.total_steps < 1 or self.batch_tokens < 1:
            raise ValueError("step counts and batch budget must be positive")
        if self.warmup_steps >= self.total_steps:
            raise ValueError("warmup_steps must be smaller than total_steps")
        if self.stage_switch is None:
            self.stage_switch = self.total_steps // 2
        if not 0 <= self.stage_switch <= self.total_steps:
            raise ValueError("stage_switch must lie in [0, total_steps]")
        if self.peak_lr <= 0 or self.eps <= 0 or self.clip_norm <= 0:
            raise ValueError("peak_lr, eps and clip_norm must be positive")
        if self.rollin not in ROLLINS:
            raise ValueError(f"rollin must be one of {ROLLINS}")
        if self.eval_every < 1 or self.eval_steps < 1:
            raise ValueError("eval_every and eval_steps must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Linear warmup to the peak, then inverse square-root decay."""
    if step < 1:
        raise ValueError("steps are counted from 1")
    w = config.warmup_steps
    if step <= w:
        return config.peak_lr * step / w
    return config.peak_lr * math.sqrt(w / step)


def _seed_torch(seed: int, purpose: int) -> None:
    torch.manual_seed(int(np.random.SeedSequence([seed, purpose]).generate_state(1)[0]))


def _check_fit(sources, targets, scale: int) -> None:
    if len(sources) != len(targets) or not sources:
        raise ValueError("need equally many (and at least one) sources and targets")
    for i, (x, y) in enumerate(zip(sources, targets)):
        if min_alignment_length(y) > scale * len(x):
            raise ValueError(
                f"training pair {i}: target needs {min_alignment_length(y)} frames but the "
                f"scale-{scale} canvas has {scale * len(x)}"
            )


class _Logger:
    def __init__(self, stream: TextIO | None):
        self.stream = stream
        if stream is not None:
            stream.write("step\tlr\tloss\tdev_bleu\n")

    def __call__(self, step, lr, loss, dev_bleu):
        if self.stream is not None:
            dev = "nan" if dev_bleu is None else f"{dev_bleu:.4f}"
            self.stream.write(f"{step}\t{lr:.6g}\t{loss:.6f}\t{dev}\n")
            self.stream.flush()


class _BestKeeper:
    """Tracks the best dev checkpoints; optionally averages the top few."""

    def __init__(self, keep: int):
        self.keep = max(1, keep)
        self.entries: list[tuple[float, int, dict]] = []

    def offer(self, score: float, step: int, net) -> None:
        self.entries.append((score, step, copy.deepcopy(net.state_dict())))
        self.entries.sort(key=lambda e: (-e[0], e[1]))
        del self.entries[self.keep:]

    def restore(self, net) -> float | None:
        if not self.entries:
            return None
        states = [e[2] for e in self.entries]
        if len(states) == 1:
            net.load_state_dict(states[0])
        else:
            net.load_state_dict({k: sum(s[k] for s in states) / len(states) for k in states[0]})
        return self.entries[0][0]


def _make_optimizer(net, cfg: TrainConfig):
    return torch.optim.Adam(net.parameters(), lr=cfg.peak_lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)


def _epochs(lengths, cfg: TrainConfig, rng: np.random.Generator):
    while True:
        yield from make_batches(lengths, cfg.batch_tokens, seed=int(rng.integers(2**31)))


def fit_scorer(
    sources: Sequence[Sequence[int]],
    targets: Sequence[Sequence[int]],
    model_config: ModelConfig,
    train_config: TrainConfig,
    mode: str = "ctc",
    dev: tuple[Sequence, Sequence] | None = None,
    log: TextIO | None = None,
    init: Checkpoint | None = None,
    vocab: Vocab | None = None,
) -> Checkpoint:
    """Train an :class:`AlignmentScorer` with the CTC or the Imputer objective.

    In ``imputer`` mode the first ``stage_switch`` steps feed an all-MASK
    partial alignment (the loss is then exactly CTC); afterwards each batch
    rolls in an alignment with the current model, masks it with the
    Bernoulli policy and minimizes the constrained loss.  ``init`` continues
    from a checkpoint; step counts and the learning-rate schedule resume
    from ``init.step`` while the optimizer state starts fresh.
    """
    if mode not in ("ctc", "imputer"):
        raise ValueError("mode must be 'ctc' or 'imputer'")
    cfg = train_config
    scale, mask_id = model_config.scale, model_config.mask_id
    sources = [tuple(int(t) for t in s) for s in sources]
    targets = [tuple(int(t) for t in y) for y in targets]
    _check_fit(sources, targets, scale)

    _seed_torch(cfg.seed, 0)
    if init is None:
        net = AlignmentScorer(model_config)
    else:
        net = copy.deepcopy(init.net)
        if net.config.to_dict() != model_config.to_dict():
            raise ValueError("initial checkpoint was built with a different model config")
    _seed_torch(cfg.seed, 1)  # dropout stream
    data_rng = np.random.default_rng([cfg.seed, 2])
    mask_rng = np.random.default_rng([cfg.seed, 3])
    opt = _make_optimizer(net, cfg)
    logger = _Logger(log)
    keeper = _BestKeeper(cfg.average_best)
    batches = _epochs([len(s) for s in sources], cfg, data_rng)
    start = 0 if init is None else init.step
    running, seen = 0.0, 0
    history = []

    for step in range(1, cfg.total_steps + 1):
        # a continued run picks the schedule up where the initial checkpoint stopped
        lr = lr_schedule(start + step, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        idx = next(batches)
        src = [sources[i] for i in idx]
        tgt = [targets[i] for i in idx]
        src_t = torch.as_tensor(pad(src))
        src_len = [len(s) for s in src]
        canvas = [scale * n for n in src_len]
        partials = None
        if mode == "imputer":
            partials = np.full((len(idx), max(canvas)), mask_id, dtype=np.int64)
            if step > cfg.stage_switch:
                partials = _bernoulli_partials(net, src_t, src_len, tgt, canvas, partials, cfg, mask_rng)

        net.train()
        scores = net(src_t, src_len, None if partials is None else torch.as_tensor(partials))
        raw = scores.detach().double().numpy()
        if partials is None:
            loss, grad = ctc_loss_batch(raw, tgt, canvas)
        else:
            loss, grad = imputer_loss_batch(raw, tgt, partials, mask_id, canvas)
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {step}")
        opt.zero_grad(set_to_none=False)
        scores.backward(torch.as_tensor(grad, dtype=scores.dtype))
        torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.clip_norm)
        opt.step()
        running += loss
        seen += 1
        history.append(loss)

        if step % cfg.eval_every == 0 or step == cfg.total_steps:
            dev_bleu = None
            if dev is not None:
                dev_bleu = _dev_bleu(net, dev, mode, cfg.eval_steps)
                keeper.offer(dev_bleu, step, net)
            logger(start + step, lr, running / seen, dev_bleu)
            running, seen = 0.0, 0

    best = keeper.restore(net)
    net.eval()
    return Checkpoint(
        kind=mode,
        net=net,
        step=start + cfg.total_steps,
        vocab=vocab,
        train_config=cfg.to_dict(),
        extra={"best_dev_bleu": best, "loss_history": history},
    )


def _bernoulli_partials(net, src_t, src_len, tgt, canvas, partials, cfg, mask_rng):
    if cfg.rollin == "viterbi":
        net.eval()
        with torch.no_grad():
            prior = net(src_t, src_len, torch.as_tensor(partials)).double().numpy()
    for b, (y, n) in enumerate(zip(tgt, canvas)):
        if cfg.rollin == "viterbi":
            a = rollin_alignment(prior[b, :n], y)
        else:
            a = sample_uniform_alignment(y, n, mask_rng)
        partials[b, :n] = sample_mask(a, net.config.mask_id, MaskPolicy.BERNOULLI, mask_rng)
    return partials


def _dev_bleu(net, dev, mode: str, steps: int) -> float:
    src, ref = dev
    if mode == "ctc":
        hyp = ctc_predict(net, list(src))
    else:
        hyp = imputer_predict(net, list(src), steps)
    return bleu(hyp, list(ref))


def train_ctc(corpus: Corpus, vocab: Vocab, model_config: ModelConfig, train_config: TrainConfig,
              dev: Corpus | None = None, log: TextIO | None = None) -> Checkpoint:
    src, tgt = corpus.encode(vocab)
    return fit_scorer(src, tgt, model_config, train_config, "ctc",
                      dev=None if dev is None else dev.encode(vocab), log=log, vocab=vocab)


def train_imputer(corpus: Corpus, vocab: Vocab, model_config: ModelConfig, train_config: TrainConfig,
                  dev: Corpus | None = None, log: TextIO | None = None,
                  init: Checkpoint | None = None) -> Checkpoint:
    src, tgt = corpus.encode(vocab)
    return fit_scorer(src, tgt, model_config, train_config, "imputer",
                      dev=None if dev is None else dev.encode(vocab), log=log, init=init, vocab=vocab)


def fit_teacher(
    sources: Sequence[Sequence[int]],
    targets: Sequence[Sequence[int]],
    model_config: ModelConfig,
    train_config: TrainConfig,
    dev: tuple[Sequence, Sequence] | None = None,
    log: TextIO | None = None,
    vocab: Vocab | None = None,
) -> Checkpoint:
    """Teacher-forced cross-entropy training of a :class:`CausalTeacher`."""
    cfg = train_config
    sources = [tuple(int(t) for t in s) for s in sources]
    targets = [tuple(int(t) for t in y) for y in targets]
    if len(sources) != len(targets) or not sources:
        raise ValueError("need equally many (and at least one) sources and targets")
    _seed_torch(cfg.seed, 0)
    net = CausalTeacher(model_config)
    _seed_torch(cfg.seed, 1)
    data_rng = np.random.default_rng([cfg.seed, 2])
    opt = _make_optimizer(net, cfg)
    logger = _Logger(log)
    keeper = _BestKeeper(cfg.average_best)
    sep = net.sep_id
    lengths = [len(x) + len(y) + 2 for x, y in zip(sources, targets)]
    if max(lengths) > model_config.max_len:
        raise ValueError(f"a training sequence exceeds max_len={model_config.max_len}")
    batches = _epochs(lengths, cfg, data_rng)
    running, seen = 0.0, 0
    history = []
    for step in range(1, cfg.total_steps + 1):
        lr = lr_schedule(step, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        idx = next(batches)
        seqs, labels = [], []
        for i in idx:
            x, y = sources[i], targets[i]
            seqs.append(list(x) + [sep] + list(y))
            lab = [-100] * len(x) + list(y) + [0]
            labels.append(lab)
        ids = torch.as_tensor(pad(seqs))
        lab = torch.as_tensor(pad(labels, fill=-100))
        net.train()
        logits = net(ids, [len(s) for s in seqs])
        n_lab = lab.shape[1]
        loss = F.cross_entropy(logits[:, :n_lab].reshape(-1, logits.shape[-1]), lab.reshape(-1),
                               ignore_index=-100)
        opt.zero_grad(set_to_none=False)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.clip_norm)
        opt.step()
        value = loss.item()
        running += value
        seen += 1
        history.append(value)
        if step % cfg.eval_every == 0 or step == cfg.total_steps:
            dev_bleu = None
            if dev is not None:
                hyp = [h or () for h in teacher_predict(net, list(dev[0]))]
                dev_bleu = bleu(hyp, list(dev[1]))
                keeper.offer(dev_bleu, step, net)
            logger(step, lr, running / seen, dev_bleu)
            running, seen = 0.0, 0
    best = keeper.restore(net)
    net.eval()
    return Checkpoint(kind="teacher", net=net, step=cfg.total_steps, vocab=vocab,
                      train_config=cfg.to_dict(), extra={"best_dev_bleu": best, "loss_history": history})


def train_teacher(corpus: Corpus, vocab: Vocab, model_config: ModelConfig, train_config: TrainConfig,
                  dev: Corpus | None = None, log: TextIO | None = None) -> Checkpoint:
    src, tgt = corpus.encode(vocab)
    return fit_teacher(src, tgt, model_config, train_config,
                       dev=None if dev is None else dev.encode(vocab), log=log, vocab=vocab)


def distill(teacher: Checkpoint, corpus: Corpus, vocab: Vocab, scale: int = 2) -> Corpus:
    """Replace every target with the teacher's greedy decode of its source.

    Pairs whose decode is empty or needs more than ``scale * |x|`` canvas
    frames are dropped; ``Corpus.skipped`` records how many.
    """
    if teacher.kind != "teacher":
        raise ValueError(f"expected a teacher checkpoint, got {teacher.kind!r}")
    sources, _ = corpus.encode(vocab)
    decoded = teacher_predict(teacher.net, sources, [scale * len(s) for s in sources])
    pairs, skipped = [], 0
    for (x, _), y in zip(corpus.pairs, decoded):
        if not y or min_alignment_length(y) > scale * len(x):
            skipped += 1
            continue
        pairs.append((x, tuple(vocab.decode(y))))
    return Corpus(pairs, split=corpus.split, provenance="distilled", skipped=skipped)
