"""Alignment algebra: vocabularies, the collapse map and its inverse image.

Ids follow one fixed layout.  ``0`` is BLANK, user tokens occupy
``1..n`` and MASK is ``n + 1``.  Output lattices therefore have
``K = n + 1`` columns and can be indexed with alignment frames directly.
"""

from __future__ import annotations

import enum
import os
from typing import Iterable, Iterator, Sequence

import numpy as np

BLANK = "<blank>"
MASK = "<mask>"
BLANK_ID = 0

#: refuse oracle enumerations above this many alignments
ENUMERATION_LIMIT = 10**6


class Vocab:
    """Token inventory with reserved BLANK and MASK symbols.

    Parameters
    ----------
    tokens : sequence of str
        Distinct user tokens, in id order (the first gets id 1).
    """

    blank_id = BLANK_ID

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if not tokens:
            raise ValueError("a vocabulary needs at least one user token")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be distinct")
        for tok in tokens:
            if tok in (BLANK, MASK):
                raise ValueError(f"{tok!r} is reserved")
            if not tok or any(ch.isspace() for ch in tok):
                raise ValueError(f"invalid token {tok!r}")
        self.tokens = tokens
        self._index = {tok: i + 1 for i, tok in enumerate(tokens)}

    @property
    def mask_id(self) -> int:
        return len(self.tokens) + 1

    @property
    def n_outputs(self) -> int:
        """Lattice width: user tokens plus BLANK."""
        return len(self.tokens) + 1

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and other.tokens == self.tokens

    def __repr__(self) -> str:
        return f"Vocab(n_tokens={len(self.tokens)})"

    def encode(self, words: Iterable[str]) -> tuple[int, ...]:
        try:
            return tuple(self._index[w] for w in words)
        except KeyError as exc:
            raise KeyError(f"token {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.symbol(i) for i in ids]

    def symbol(self, i: int) -> str:
        if i == BLANK_ID:
            return BLANK
        if i == self.mask_id:
            return MASK
        if 1 <= i <= len(self.tokens):
            return self.tokens[i - 1]
        raise KeyError(f"id {i} out of range")

    @classmethod
    def from_size(cls, n: int) -> "Vocab":
        """Synthetic vocabulary ``t1 .. tn``."""
        return cls([f"t{i}" for i in range(1, n + 1)])

    @classmethod
    def from_corpus(cls, sequences: Iterable[Iterable[str]]) -> "Vocab":
        seen: dict[str, None] = {}
        for seq in sequences:
            for tok in seq:
                seen.setdefault(tok)
        return cls(sorted(seen))

    def save(self, path: str | os.PathLike) -> None:
        """One token per line; the first two lines are the reserved symbols."""
        lines = [BLANK, MASK, *self.tokens]
        _atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            lines = [line.rstrip("\n") for line in fh]
        while lines and lines[-1] == "":
            lines.pop()
        if lines[:2] != [BLANK, MASK]:
            raise ValueError(f"{path}: vocab file must start with {BLANK} and {MASK}")
        return cls(lines[2:])


def _atomic_write_text(path, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


class MaskPolicy(str, enum.Enum):
    ALL = "all"
    BERNOULLI = "bernoulli"


def collapse(alignment: Iterable[int], blank_id: int = BLANK_ID) -> tuple[int, ...]:
    """Merge consecutive repeats, then drop blanks."""
    out = []
    prev = None
    for frame in alignment:
        frame = int(frame)
        if frame != prev and frame != blank_id:
            out.append(frame)
        prev = frame
    return tuple(out)


def remove_blanks(alignment: Iterable[int], blank_id: int = BLANK_ID) -> tuple[int, ...]:
    """Drop blanks without merging repeats (ablation of :func:`collapse`)."""
    return tuple(int(f) for f in alignment if int(f) != blank_id)


def min_alignment_length(y: Sequence[int]) -> int:
    """Shortest canvas admitting an alignment of ``y``."""
    repeats = sum(1 for a, b in zip(y, y[1:]) if a == b)
    return len(y) + repeats


def count_alignments(y: Sequence[int], length: int, blank_id: int = BLANK_ID) -> int:
    """Exact ``|{a : |a| = length, collapse(a) = y}|`` by counting lattice paths."""
    y = [int(t) for t in y]
    if length < 0:
        raise ValueError("length must be non-negative")
    if length == 0:
        return int(len(y) == 0)
    z = [blank_id]
    for tok in y:
        z += [tok, blank_id]
    n_states = len(z)
    alpha = [0] * n_states
    alpha[0] = 1
    if n_states > 1:
        alpha[1] = 1
    for _ in range(1, length):
        new = [0] * n_states
        for s in range(n_states):
            total = alpha[s]
            if s >= 1:
                total += alpha[s - 1]
            if s >= 2 and z[s] != blank_id and z[s] != z[s - 2]:
                total += alpha[s - 2]
            new[s] = total
        alpha = new
    if n_states == 1:
        return alpha[0]
    return alpha[-1] + alpha[-2]


def _compositions(y: Sequence[int], length: int) -> Iterator[list[int]]:
    # Each token owns a run >= 1; blank runs sit between tokens and must be
    # >= 1 where the neighbouring tokens are equal.
    n = len(y)
    min_gap = [0] + [1 if y[i - 1] == y[i] else 0 for i in range(1, n)] + [0]

    def rec(i: int, remaining: int, prefix: list[int]):
        # i indexes the blank gap before token i (gap n is the trailing one)
        if i == n:
            yield prefix + [BLANK_ID] * remaining
            return
        tail_need = (n - i) + sum(min_gap[i + 1:n])
        for gap in range(min_gap[i], remaining - tail_need + 1):
            left = remaining - gap
            max_run = left - (tail_need - 1)
            for run in range(1, max_run + 1):
                yield from rec(i + 1, left - run, prefix + [BLANK_ID] * gap + [y[i]] * run)

    yield from rec(0, length, [])


def enumerate_alignments(
    y: Sequence[int], length: int, limit: int = ENUMERATION_LIMIT
) -> set[tuple[int, ...]]:
    """All alignments of ``length`` frames that collapse to ``y``.

    Brute-force oracle: builds each alignment from explicit run lengths,
    independently of the lattice recursion used by the losses.
    """
    y = [int(t) for t in y]
    if BLANK_ID in y:
        raise ValueError("target contains BLANK")
    if len(y) > length:
        raise ValueError(f"target length {len(y)} exceeds canvas length {length}")
    n = count_alignments(y, length)
    if n > limit:
        raise ValueError(f"{n} alignments exceed the enumeration limit {limit}")
    return {tuple(a) for a in _compositions(y, length)}


def sample_mask(
    alignment: Sequence[int],
    mask_id: int,
    policy: MaskPolicy | str = MaskPolicy.BERNOULLI,
    rng: np.random.Generator | int | None = None,
    ratio: float | None = None,
) -> tuple[int, ...]:
    """Draw a partial alignment from ``alignment``.

    The Bernoulli policy first draws a masking ratio uniformly from [0, 1)
    (unless ``ratio`` is given) and then masks each frame independently.
    """
    policy = MaskPolicy(policy)
    a = np.asarray(alignment, dtype=np.int64)
    if policy is MaskPolicy.ALL:
        return (mask_id,) * len(a)
    rng = np.random.default_rng(rng)
    r = rng.uniform() if ratio is None else float(ratio)
    hit = rng.uniform(size=len(a)) < r
    return tuple(int(v) for v in np.where(hit, mask_id, a))


def sample_uniform_alignment(
    y: Sequence[int], length: int, rng: np.random.Generator | int | None = None
) -> tuple[int, ...]:
    """Uniform draw from the alignments of ``y`` (roll-in ablation)."""
    y = [int(t) for t in y]
    if count_alignments(y, length) == 0:
        raise ValueError("no alignment of the target fits the canvas")
    rng = np.random.default_rng(rng)
    z = [BLANK_ID]
    for tok in y:
        z += [tok, BLANK_ID]
    n_states = len(z)

    def preds(s):
        out = [s]
        if s >= 1:
            out.append(s - 1)
        if s >= 2 and z[s] != BLANK_ID and z[s] != z[s - 2]:
            out.append(s - 2)
        return out

    # counts[t][s]: number of state paths for frames 0..t ending in s
    counts = [[0] * n_states for _ in range(length)]
    counts[0][0] = 1
    if n_states > 1:
        counts[0][1] = 1
    for t in range(1, length):
        for s in range(n_states):
            counts[t][s] = sum(counts[t - 1][p] for p in preds(s))
    finals = [n_states - 1] if n_states == 1 else [n_states - 1, n_states - 2]

    def pick(options, weights):
        total = sum(weights)
        u = int(rng.integers(total)) if total < 2**63 else int(rng.uniform() * total)
        for opt, w in zip(options, weights):
            if u < w:
                return opt
            u -= w
        return options[-1]

    s = pick(finals, [counts[-1][f] for f in finals])
    path = [s]
    for t in range(length - 1, 0, -1):
        ps = preds(s)
        s = pick(ps, [counts[t - 1][p] for p in ps])
        path.append(s)
    return tuple(z[s] for s in reversed(path))
