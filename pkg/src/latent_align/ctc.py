"""CTC marginalization over the blank-augmented lattice.

All recursions run in log space.  Impossible states hold ``NEG_INF``,
a finite sentinel, so sums of several impossible terms stay finite and
``np.logaddexp`` never sees ``-inf - -inf``.  A log-likelihood below
``NEG_INF / 2`` means the constraint set is empty.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .alignment import BLANK_ID, collapse

#: log-space stand-in for log(0)
NEG_INF = -1e30


def log_softmax(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    m = scores.max(axis=-1, keepdims=True)
    shifted = scores - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _lse3(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    m = np.maximum(np.maximum(a, b), c)
    return m + np.log(np.exp(a - m) + np.exp(b - m) + np.exp(c - m))


def _shift(x: np.ndarray, k: int) -> np.ndarray:
    """Shift along the last axis; positive ``k`` moves entries to higher indices."""
    out = np.full_like(x, NEG_INF)
    if k > 0:
        out[..., k:] = x[..., :-k]
    else:
        out[..., :k] = x[..., -k:]
    return out


def _pad_targets(targets: Sequence[Sequence[int]]):
    n = len(targets)
    u_max = max((len(y) for y in targets), default=0)
    n_states = 2 * u_max + 1
    z = np.full((n, n_states), BLANK_ID, dtype=np.int64)
    valid = np.zeros((n, n_states), dtype=bool)
    for b, y in enumerate(targets):
        y = np.asarray(y, dtype=np.int64)
        if np.any(y == BLANK_ID):
            raise ValueError("targets must not contain BLANK")
        z[b, 1:2 * len(y):2] = y
        valid[b, : 2 * len(y) + 1] = True
    skip = np.zeros_like(valid)
    if n_states > 3:
        skip[:, 3::2] = z[:, 3::2] != z[:, 1:-2:2]
    skip &= valid
    return z, valid, skip


def constrained_forward_backward(
    scores: np.ndarray,
    targets: Sequence[Sequence[int]],
    lengths: Sequence[int] | None = None,
    observed: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched negative log marginal likelihood and its gradient.

    Parameters
    ----------
    scores : ndarray, shape (B, T, K)
        Unnormalized scores; rows past ``lengths[b]`` are ignored.
    targets : list of int sequences
        Collapsed targets, one per batch row.
    lengths : sequence of int, optional
        Canvas length per row (defaults to ``T``).
    observed : int ndarray, shape (B, T), optional
        Frame constraints.  ``-1`` leaves a frame free; any other value pins
        the frame to that symbol.  Omitted means unconstrained (plain CTC).

    Returns
    -------
    nll : ndarray, shape (B,)
        ``+inf`` where no admissible alignment exists.
    grad : ndarray, shape (B, T, K)
        d nll / d scores; all zero for infeasible rows.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 3:
        raise ValueError("scores must have shape (batch, frames, outputs)")
    n_batch, n_frames, n_out = scores.shape
    if len(targets) != n_batch:
        raise ValueError("one target per batch row is required")
    lengths = np.full(n_batch, n_frames) if lengths is None else np.asarray(lengths)
    if np.any(lengths < 1) or np.any(lengths > n_frames):
        raise ValueError("lengths must lie in [1, frames]")

    logp = log_softmax(scores)
    z, valid, skip = _pad_targets(targets)
    if z.max(initial=0) >= n_out:
        raise ValueError("target id outside the lattice")
    n_states = z.shape[1]
    emit = np.take_along_axis(logp, np.broadcast_to(z[:, None, :], (n_batch, n_frames, n_states)), axis=2)
    emit = np.where(valid[:, None, :], emit, NEG_INF)
    if observed is not None:
        obs = np.asarray(observed, dtype=np.int64)
        if obs.shape != (n_batch, n_frames):
            raise ValueError("observed must have shape (batch, frames)")
        clash = (obs[:, :, None] >= 0) & (z[:, None, :] != obs[:, :, None])
        emit = np.where(clash, NEG_INF, emit)

    skip_neg = np.where(skip, 0.0, NEG_INF)
    alpha = np.full((n_batch, n_frames, n_states), NEG_INF)
    alpha[:, 0, 0] = emit[:, 0, 0]
    if n_states > 1:
        alpha[:, 0, 1] = emit[:, 0, 1]
    for t in range(1, n_frames):
        prev = alpha[:, t - 1]
        alpha[:, t] = emit[:, t] + _lse3(prev, _shift(prev, 1), _shift(prev, 2) + skip_neg)
    alpha = np.maximum(alpha, NEG_INF)

    rows = np.arange(n_batch)
    u_len = np.array([len(y) for y in targets])
    last = alpha[rows, lengths - 1]
    end_blank = last[rows, 2 * u_len]
    end_label = np.where(u_len > 0, last[rows, np.maximum(2 * u_len - 1, 0)], NEG_INF)
    log_z = np.logaddexp(end_blank, end_label)
    feasible = log_z > NEG_INF / 2

    final = np.full((n_batch, n_states), NEG_INF)
    final[rows, 2 * u_len] = 0.0
    final[rows[u_len > 0], 2 * u_len[u_len > 0] - 1] = 0.0
    # skip into s+2 is allowed iff skip[s+2]; align that mask with s
    skip_from = _shift(skip_neg, -2)
    beta = np.full((n_batch, n_frames, n_states), NEG_INF)
    rec = np.full((n_batch, n_states), NEG_INF)
    for t in range(n_frames - 1, -1, -1):
        if t < n_frames - 1:
            nxt = beta[:, t + 1] + emit[:, t + 1]
            rec = _lse3(nxt, _shift(nxt, -1), _shift(nxt, -2) + skip_from)
        here = np.where((t == lengths - 1)[:, None], final, rec)
        beta[:, t] = np.where((t <= lengths - 1)[:, None], here, NEG_INF)
    beta = np.maximum(beta, NEG_INF)

    in_range = np.arange(n_frames)[None, :] < lengths[:, None]
    safe_z = np.where(feasible, log_z, 0.0)
    post = np.exp(np.minimum(alpha + beta - safe_z[:, None, None], 0.0))
    post *= (in_range & feasible[:, None])[:, :, None]
    onehot = np.zeros((n_batch, n_states, n_out))
    np.put_along_axis(onehot, z[:, :, None], 1.0, axis=2)
    onehot *= valid[:, :, None]
    occupancy = np.einsum("bts,bsk->btk", post, onehot)
    grad = np.exp(logp) * (in_range & feasible[:, None])[:, :, None] - occupancy

    nll = np.where(feasible, -log_z, np.inf)
    return nll, grad


def ctc_loss(lattice: np.ndarray, y: Sequence[int]) -> tuple[float, np.ndarray]:
    """Negative log marginal likelihood of ``y`` under one lattice, with gradient."""
    lattice = np.asarray(lattice, dtype=np.float64)
    if lattice.ndim != 2:
        raise ValueError("lattice must be a (frames, outputs) matrix")
    nll, grad = constrained_forward_backward(lattice[None], [list(y)])
    return float(nll[0]), grad[0]


def ctc_loss_batch(
    scores: np.ndarray, targets: Sequence[Sequence[int]], lengths: Sequence[int] | None = None
) -> tuple[float, np.ndarray]:
    """Mean per-sequence loss over a batch and the matching gradient."""
    nll, grad = constrained_forward_backward(scores, targets, lengths)
    return float(nll.mean()), grad / len(targets)


def best_path(lattice: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ``np.argmax`` already breaks ties toward the lowest id."""
    return np.asarray(lattice).argmax(axis=-1)


def ctc_greedy_decode(lattice: np.ndarray) -> tuple[int, ...]:
    return collapse(best_path(lattice))
