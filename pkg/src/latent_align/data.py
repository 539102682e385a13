"""Synthetic transduction tasks, TSV corpora and length-bucketed batching."""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .alignment import Vocab, min_alignment_length

TASKS = ("copy", "reverse", "lexicon", "multimodal")
SPLITS = ("train", "dev", "test")

Pair = tuple[tuple[str, ...], tuple[str, ...]]


class CorpusFormatError(ValueError):
    pass


@dataclass
class Corpus:
    """Parallel token sequences from one split.

    Tokens are strings; use :meth:`encode` to get id pairs for a
    :class:`~latent_align.alignment.Vocab`.
    """

    pairs: list[Pair]
    split: str = "train"
    provenance: str = "raw"
    skipped: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("a corpus needs at least one pair")
        self.pairs = [(tuple(x), tuple(y)) for x, y in self.pairs]
        for i, (x, y) in enumerate(self.pairs):
            if not x or not y:
                raise ValueError(f"pair {i} has an empty side")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> list[tuple[str, ...]]:
        return [x for x, _ in self.pairs]

    @property
    def targets(self) -> list[tuple[str, ...]]:
        return [y for _, y in self.pairs]

    def encode(self, vocab: Vocab) -> tuple[list[tuple[int, ...]], list[tuple[int, ...]]]:
        return [vocab.encode(x) for x in self.sources], [vocab.encode(y) for y in self.targets]

    def check_canvas(self, scale: int) -> None:
        """Raise if some target cannot be aligned to its upsampled source."""
        for i, (x, y) in enumerate(self.pairs):
            if min_alignment_length(y) > scale * len(x):
                raise ValueError(
                    f"{self.split} pair {i}: target needs {min_alignment_length(y)} frames, "
                    f"canvas has {scale * len(x)} (scale {scale})"
                )


class SyntheticTask:
    """Deterministic rule set behind one synthetic task.

    ``support(x)`` lists every target the task can emit for ``x``; all tasks
    have one target except ``multimodal``, which has two.
    """

    def __init__(self, kind: str, vocab_size: int, seed: int = 0, swap_prob: float = 0.3,
                 expand_frac: float = 0.2):
        if kind not in TASKS:
            raise ValueError(f"unknown task {kind!r}; choose from {TASKS}")
        if vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        self.kind = kind
        self.vocab = Vocab.from_size(vocab_size)
        rng = np.random.default_rng([seed, 7])
        n = vocab_size
        self.lex = rng.permutation(n) + 1
        # local reordering: a "modifier" token trades places with a following
        # non-modifier, so swaps never overlap or chain
        self.modifier = rng.uniform(size=n + 1) < swap_prob
        self.modifier[0] = False
        # second paraphrase: different token map, some tokens expand to two
        while True:
            derange = rng.permutation(n)
            if not np.any(derange == np.arange(n)):
                break
        self.lex2 = self.lex[derange]
        self.expand = rng.uniform(size=n + 1) < expand_frac
        self.suffix = rng.permutation(n) + 1

    def _ids(self, x: Sequence[str]) -> list[int]:
        return list(self.vocab.encode(x))

    def _lexicon(self, ids: list[int]) -> list[int]:
        out, i = [], 0
        while i < len(ids):
            if i + 1 < len(ids) and self.modifier[ids[i]] and not self.modifier[ids[i + 1]]:
                out += [self.lex[ids[i + 1] - 1], self.lex[ids[i] - 1]]
                i += 2
            else:
                out.append(self.lex[ids[i] - 1])
                i += 1
        return [int(t) for t in out]

    def _paraphrase(self, ids: list[int]) -> list[int]:
        out = []
        for t in ids:
            out.append(int(self.lex2[t - 1]))
            if self.expand[t]:
                out.append(int(self.suffix[t - 1]))
        return out

    def support(self, x: Sequence[str]) -> list[tuple[str, ...]]:
        ids = self._ids(x)
        if self.kind == "copy":
            outs = [ids]
        elif self.kind == "reverse":
            outs = [ids[::-1]]
        elif self.kind == "lexicon":
            outs = [self._lexicon(ids)]
        else:
            outs = [[int(self.lex[t - 1]) for t in ids], self._paraphrase(ids)]
        return [tuple(self.vocab.decode(o)) for o in outs]

    def sample(self, x: Sequence[str], rng: np.random.Generator) -> tuple[str, ...]:
        options = self.support(x)
        return options[int(rng.integers(len(options)))] if len(options) > 1 else options[0]


def gen_task(
    kind: str,
    sizes: Sequence[int] | dict = (2000, 200, 200),
    vocab_size: int = 20,
    lengths: tuple[int, int] = (3, 12),
    seed: int = 0,
    scale: int = 2,
) -> tuple[dict[str, Corpus], Vocab, SyntheticTask]:
    """Generate train/dev/test corpora with sources unique across splits.

    Multimodal sources whose second paraphrase would not fit the canvas
    are redrawn; for every other task a misfit is a configuration error.
    """
    if isinstance(sizes, dict):
        sizes = [sizes.get(s, 0) for s in SPLITS]
    lo, hi = lengths
    if lo < 1 or hi < lo:
        raise ValueError("lengths must satisfy 1 <= min <= max")
    task = SyntheticTask(kind, vocab_size, seed)
    rng = np.random.default_rng([seed, 11])
    total = sum(sizes)
    capacity = sum(vocab_size**n for n in range(lo, hi + 1))
    if total > capacity:
        raise ValueError(f"cannot draw {total} unique sources from {capacity} possibilities")
    seen: set[tuple[str, ...]] = set()
    sources: list[tuple[str, ...]] = []
    while len(sources) < total:
        n = int(rng.integers(lo, hi + 1))
        x = tuple(task.vocab.decode(rng.integers(1, vocab_size + 1, size=n)))
        if x in seen:
            continue
        fits = all(min_alignment_length(y) <= scale * n for y in task.support(x))
        if not fits:
            if kind == "multimodal":
                continue
            raise ValueError(f"{kind} task produces targets longer than a scale-{scale} canvas")
        seen.add(x)
        sources.append(x)
    out, start = {}, 0
    for split, size in zip(SPLITS, sizes):
        if size == 0:
            continue
        chunk = sources[start:start + size]
        start += size
        out[split] = Corpus([(x, task.sample(x, rng)) for x in chunk], split=split)
    return out, task.vocab, task


def load_tsv(path: str | os.PathLike, split: str = "train", scale: int | None = None,
             provenance: str = "raw") -> Corpus:
    """Read ``source<TAB>target`` lines of space-separated tokens."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.endswith("\r"):
                line = line[:-1]
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusFormatError(f"{path}:{lineno}: expected exactly one TAB, found {len(parts) - 1}")
            src, tgt = (p.split(" ") for p in parts)
            if src == [""] or tgt == [""] or "" in src or "" in tgt:
                raise CorpusFormatError(f"{path}:{lineno}: empty side or doubled space")
            pairs.append((tuple(src), tuple(tgt)))
    if not pairs:
        raise CorpusFormatError(f"{path}: no pairs")
    corpus = Corpus(pairs, split=split, provenance=provenance)
    if scale is not None:
        corpus.check_canvas(scale)
    return corpus


def save_tsv(corpus: Corpus, path: str | os.PathLike) -> None:
    text = "".join(" ".join(x) + "\t" + " ".join(y) + "\n" for x, y in corpus.pairs)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def make_batches(
    lengths: Iterable[int] | Corpus, token_budget: int, seed: int | None = 0, shuffle: bool = True
) -> list[list[int]]:
    """Group example indices into batches of similar source length.

    A batch costs ``len(batch) * max_length`` tokens and never exceeds
    ``token_budget`` unless a single example already does, in which case it
    gets a batch of its own.
    """
    if isinstance(lengths, Corpus):
        lengths = [len(x) for x in lengths.sources]
    lengths = np.asarray(list(lengths), dtype=np.int64)
    if token_budget < 1:
        raise ValueError("token_budget must be positive")
    rng = np.random.default_rng(seed)
    # jitter only reorders equal lengths
    order = np.lexsort((rng.uniform(size=len(lengths)), lengths))
    batches: list[list[int]] = []
    current: list[int] = []
    widest = 0
    for idx in order:
        n = int(lengths[idx])
        if n > token_budget:
            warnings.warn(f"example {idx} ({n} tokens) exceeds the batch budget {token_budget}")
            batches.append([int(idx)])
            continue
        if current and (len(current) + 1) * max(widest, n) > token_budget:
            batches.append(current)
            current, widest = [], 0
        current.append(int(idx))
        widest = max(widest, n)
    if current:
        batches.append(current)
    if shuffle:
        perm = rng.permutation(len(batches))
        batches = [batches[i] for i in perm]
    return batches
