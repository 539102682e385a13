"""Imputer loss, Viterbi roll-in and iterative top-k decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .alignment import BLANK_ID, collapse
from .ctc import NEG_INF, constrained_forward_backward, log_softmax

MASK_GLYPH = "▁?"
BLANK_GLYPH = "_"


def _observed(partial: np.ndarray, mask_id: int) -> np.ndarray:
    partial = np.asarray(partial, dtype=np.int64)
    return np.where(partial == mask_id, -1, partial)


def imputer_loss(
    lattice: np.ndarray, y: Sequence[int], partial: Sequence[int], mask_id: int
) -> tuple[float, np.ndarray]:
    """Constrained marginal over alignments of ``y`` that agree with ``partial``.

    Masked frames are free; every observed frame pins the alignment to its
    symbol.  With nothing observed this is exactly :func:`ctc_loss`.
    """
    lattice = np.asarray(lattice, dtype=np.float64)
    partial = np.asarray(partial, dtype=np.int64)
    if lattice.ndim != 2 or partial.shape != (lattice.shape[0],):
        raise ValueError("partial alignment length must match the lattice")
    nll, grad = constrained_forward_backward(
        lattice[None], [list(y)], observed=_observed(partial, mask_id)[None]
    )
    return float(nll[0]), grad[0]


def imputer_loss_batch(
    scores: np.ndarray,
    targets: Sequence[Sequence[int]],
    partials: np.ndarray,
    mask_id: int,
    lengths: Sequence[int] | None = None,
) -> tuple[float, np.ndarray]:
    """Mean constrained loss over a padded batch; ``partials`` is (B, T)."""
    nll, grad = constrained_forward_backward(
        scores, targets, lengths, observed=_observed(partials, mask_id)
    )
    return float(nll.mean()), grad / len(targets)


def rollin_alignment(lattice: np.ndarray, y: Sequence[int]) -> tuple[int, ...]:
    """Most probable alignment of ``y`` under ``lattice`` (Viterbi).

    Ties are broken toward BLANK: the blank final state wins over the label
    one, and during backtracking a blank predecessor is preferred, then
    staying in the same state, then the skip.
    """
    logp = log_softmax(lattice)
    n_frames = logp.shape[0]
    y = [int(t) for t in y]
    z = [BLANK_ID]
    for tok in y:
        z += [tok, BLANK_ID]
    z = np.array(z)
    n_states = len(z)
    skip = np.zeros(n_states, dtype=bool)
    skip[3::2] = z[3::2] != z[1:-2:2]

    emit = logp[:, z]
    delta = np.full((n_frames, n_states), NEG_INF)
    delta[0, 0] = emit[0, 0]
    if n_states > 1:
        delta[0, 1] = emit[0, 1]
    for t in range(1, n_frames):
        prev = delta[t - 1]
        stay = prev
        step = np.concatenate([[NEG_INF], prev[:-1]])
        jump = np.where(skip, np.concatenate([[NEG_INF, NEG_INF], prev[:-2]]), NEG_INF)
        delta[t] = emit[t] + np.maximum(np.maximum(stay, step), jump)

    finals = [n_states - 1] if n_states == 1 else [n_states - 1, n_states - 2]
    s = max(finals, key=lambda f: (delta[-1, f], f == n_states - 1))
    if delta[-1, s] <= NEG_INF / 2:
        raise ValueError(f"no alignment of length {n_frames} collapses to the target")
    path = [s]
    for t in range(n_frames - 1, 0, -1):
        if z[s] == BLANK_ID:
            options = [s, s - 1]
        else:
            options = [s - 1, s] + ([s - 2] if skip[s] else [])
        options = [p for p in options if p >= 0]
        best = options[0]
        for p in options[1:]:
            if delta[t - 1, p] > delta[t - 1, best]:
                best = p
        s = best
        path.append(s)
    return tuple(int(z[s]) for s in reversed(path))


@dataclass(frozen=True)
class DecodeSchedule:
    """``steps`` model calls committing ``per_step`` frames each."""

    steps: int
    per_step: int

    def __post_init__(self):
        if self.steps < 1 or self.per_step < 1:
            raise ValueError("steps and per_step must be positive")

    @classmethod
    def for_length(cls, length: int, steps: int) -> "DecodeSchedule":
        return cls(steps, max(1, math.ceil(length / steps)))

    def covers(self, length: int) -> bool:
        return self.steps * self.per_step >= length


def imputer_decode(
    model_fn: Callable[[Sequence[int], np.ndarray], np.ndarray],
    x: Sequence[int],
    schedule: DecodeSchedule | int,
    mask_id: int,
    length: int,
) -> tuple[tuple[int, ...], list[tuple[int, ...]]]:
    """Top-k iterative decoding over a canvas of ``length`` frames.

    ``model_fn(x, partial)`` returns the lattice for the current partial
    alignment.  ``schedule`` may be a bare step count, in which case the
    per-step budget is ``ceil(length / steps)``.  The model is called exactly
    ``schedule.steps`` times even when the canvas fills early; late calls
    then commit nothing.

    Returns the collapsed output and the partial alignment after each step.
    """
    if isinstance(schedule, int):
        schedule = DecodeSchedule.for_length(length, schedule)

    def batch_fn(partials):
        lattice = np.asarray(model_fn(x, partials[0].copy()))
        if lattice.shape[0] != length:
            raise ValueError(f"model returned {lattice.shape[0]} frames, expected {length}")
        return lattice[None]

    outputs, traces = imputer_decode_batch(batch_fn, [length], schedule, mask_id)
    return outputs[0], traces[0]


def imputer_decode_batch(
    model_fn: Callable[[np.ndarray], np.ndarray],
    lengths: Sequence[int],
    schedule: DecodeSchedule | int,
    mask_id: int,
) -> tuple[list[tuple[int, ...]], list[list[tuple[int, ...]]]]:
    """Top-k decoding of a padded batch.

    ``model_fn(partials)`` maps a (B, T) int array of partial alignments to
    (B, T, K) scores.  With an integer ``schedule`` each row gets its own
    budget ``ceil(L_b / steps)``; padding frames are never committed.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    n_steps = schedule if isinstance(schedule, int) else schedule.steps
    budgets = []
    for n in lengths:
        sched = DecodeSchedule.for_length(int(n), n_steps) if isinstance(schedule, int) else schedule
        if not sched.covers(int(n)):
            raise ValueError("schedule cannot fill the canvas")
        budgets.append(sched.per_step)
    width = int(lengths.max())
    partials = np.full((len(lengths), width), mask_id, dtype=np.int64)
    padding = np.arange(width)[None, :] >= lengths[:, None]
    traces: list[list[tuple[int, ...]]] = [[] for _ in lengths]
    for _ in range(n_steps):
        scores = np.asarray(model_fn(partials.copy()))
        for b, n in enumerate(lengths):
            row = partials[b, :n]
            masked = np.flatnonzero(row == mask_id)
            if masked.size:
                lattice = scores[b, masked]
                choice = lattice.argmax(axis=1)
                confidence = log_softmax(lattice)[np.arange(masked.size), choice]
                # stable sort keeps lower positions first among equal confidences
                order = np.argsort(-confidence, kind="stable")[: budgets[b]]
                row[masked[order]] = choice[order]
            traces[b].append(tuple(int(v) for v in row))
    assert not np.any((partials == mask_id) & ~padding)
    outputs = [collapse(partials[b, :n]) for b, n in enumerate(lengths)]
    return outputs, traces


def format_trace(trace: Sequence[Sequence[int]], symbols: Callable[[int], str], mask_id: int) -> str:
    """One line per step; MASK renders as ``▁?`` and BLANK as ``_``."""
    lines = []
    for row in trace:
        cells = []
        for f in row:
            if f == mask_id:
                cells.append(MASK_GLYPH)
            elif f == BLANK_ID:
                cells.append(BLANK_GLYPH)
            else:
                cells.append(symbols(int(f)))
        lines.append(" ".join(cells))
    return "\n".join(lines) + ("\n" if lines else "")
